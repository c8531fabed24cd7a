//! Deterministic fixed-point neural workload engine.
//!
//! The same code is the Prover's execution engine and the Verifier's replay
//! engine. Replay is bit-exact: seeds fix initialization, data order and
//! sampling; batches are the unit of replay; all arithmetic is wrapping
//! integer arithmetic with a fixed accumulation order and floor rounding.

pub mod data;
pub mod engine;
pub mod fixed;
pub mod fixtures;
pub mod net;
pub mod optim;
pub mod prng;

pub use engine::{
    infer_batch, initial_checkpoint, permute_data_order, BatchOutput, Checkpoint, CheckpointCommitment, ComputeProfile, Engine,
    ExecutionTrace, InferenceRun, SegmentOutput, TickRecord, TrainingRun, TrainingTranscript,
};
pub use fixed::{overflow_mode_demo, Fixed, OverflowMode};
pub use net::{backward_batch, forward_batch, init_weights, Batch, Dataset, Gradient, Weights};
pub use optim::OptimizerState;
pub use prng::{prng_stream, PrngStream};
