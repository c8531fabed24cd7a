//! Training and inference drivers, checkpoints and execution traces.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fixed::Fixed;
use super::net::{
    backward_wide, forward_macs, forward_outputs, inference_ops_per_item, init_weights, training_ops_per_item, Batch, Dataset,
    Weights,
};
use super::optim::{apply_update, OptimizerState};
use super::prng::{chacha_from, PrngStream};
use crate::error::{Error, Result};
use crate::model::{commit, commit_value, Digest, OptimizerFamily, Rational, Seed, WorkloadDeclaration, WorkloadKind};

// ---------------------------------------------------------------------------
// Checkpoints and transcripts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step_index: u32,
    pub weights: Weights,
    pub weights_commitment: Digest,
    pub optimizer_state: OptimizerState,
    pub state_commitment: Digest,
    /// Position of the next batch in the seeded data order.
    pub rng_cursor: u64,
}

impl Checkpoint {
    pub fn new(step_index: u32, weights: Weights, optimizer_state: OptimizerState, rng_cursor: u64) -> Checkpoint {
        let weights_commitment = weights.commitment();
        let state_commitment = commit_value(&optimizer_state).expect("state is integer-only");
        Checkpoint { step_index, weights, weights_commitment, optimizer_state, state_commitment, rng_cursor }
    }

    pub fn commitments(&self) -> CheckpointCommitment {
        CheckpointCommitment { weights: self.weights_commitment, state: self.state_commitment }
    }

    /// Stored data still hashes to the stored commitments.
    pub fn is_self_consistent(&self) -> bool {
        self.weights.commitment() == self.weights_commitment
            && commit_value(&self.optimizer_state).map(|d| d == self.state_commitment).unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CheckpointCommitment {
    pub weights: Digest,
    pub state: Digest,
}

/// What the Prover hands over for a training workload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingTranscript {
    pub declaration_commitment: Digest,
    /// Dataset batch indices in the order they were consumed.
    pub batch_order: Vec<u32>,
    /// One entry per checkpoint, `segment_count + 1` in total.
    pub commitments: Vec<CheckpointCommitment>,
    /// Full checkpoint dumps; may be sparse.
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainingTranscript {
    pub fn checkpoint(&self, step: u32) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.step_index == step)
    }

    pub fn segment_count(&self) -> usize {
        self.commitments.len().saturating_sub(1)
    }

    /// Batch indices consumed by segment `segment`.
    pub fn segment_batches(&self, segment: usize, batches_per_segment: u32) -> Option<&[u32]> {
        let bps = batches_per_segment as usize;
        self.batch_order.get(segment * bps..(segment + 1) * bps)
    }
}

// ---------------------------------------------------------------------------
// Execution traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    /// Fraction of cluster capacity in use during the tick.
    pub utilization: Rational,
    pub hardware_ops: u64,
    pub messages_emitted: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub ticks: Vec<TickRecord>,
}

impl ExecutionTrace {
    pub fn len(&self) -> u64 {
        self.ticks.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn total_hardware_ops(&self) -> u64 {
        self.ticks.iter().map(|t| t.hardware_ops).sum()
    }

    /// Appends `other`, renumbering its ticks to follow ours.
    pub fn append(&mut self, other: &ExecutionTrace) {
        let base = self.len();
        self.ticks.extend(other.ticks.iter().map(|t| TickRecord { tick: base + t.tick, ..t.clone() }));
    }

    pub fn push_idle(&mut self, ticks: u64) {
        for _ in 0..ticks {
            let tick = self.len();
            self.ticks.push(TickRecord { tick, utilization: Rational::from_integer(0), hardware_ops: 0, messages_emitted: 0 });
        }
    }

    /// Spreads `ops` over ticks at `utilization` of `capacity`, the last
    /// tick taking the remainder.
    pub fn push_busy(&mut self, ops: u64, capacity: u64, utilization: Rational) {
        let per_tick = (capacity as u128 * *utilization.numer() as u128 / *utilization.denom() as u128) as u64;
        let per_tick = per_tick.max(1);
        let mut remaining = ops;
        while remaining > 0 {
            let n = remaining.min(per_tick);
            let tick = self.len();
            self.ticks.push(TickRecord { tick, utilization: Rational::new(n, capacity), hardware_ops: n, messages_emitted: 0 });
            remaining -= n;
        }
    }
}

/// How the simulated cluster turns work into ticks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// Cluster-wide operations per tick at full utilization.
    pub ops_per_tick: u64,
    pub training_utilization: Rational,
    pub inference_utilization: Rational,
    /// Data-parallel nodes; sets the message count of communication ticks.
    pub nodes: u32,
    /// Recompute the forward pass during backward (activation
    /// checkpointing). Adds hardware ops but no model ops.
    pub recompute_forward: bool,
}

impl Default for ComputeProfile {
    fn default() -> Self {
        ComputeProfile {
            ops_per_tick: 2400,
            training_utilization: Rational::new(1, 2),
            inference_utilization: Rational::new(3, 10),
            nodes: 2,
            recompute_forward: false,
        }
    }
}

/// Randomly flips accumulator bits, emulating rare hardware errors.
#[derive(Debug, Clone)]
pub struct FaultInjector {
    pub rate_per_op: f64,
    rng: ChaCha8Rng,
    pub injected: u64,
}

impl FaultInjector {
    pub fn new(rate_per_op: f64, seed: &Seed) -> FaultInjector {
        FaultInjector { rate_per_op, rng: chacha_from(seed, "faults"), injected: 0 }
    }
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct Engine {
    pub profile: ComputeProfile,
    pub faults: Option<FaultInjector>,
}

#[derive(Debug, Clone)]
pub struct SegmentOutput {
    pub checkpoint: Checkpoint,
    pub trace: ExecutionTrace,
    pub model_ops: u64,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub checkpoints: Vec<Checkpoint>,
    pub batch_order: Vec<u32>,
    pub trace: ExecutionTrace,
    /// Tick of the communication phase closing each segment.
    pub segment_comm_ticks: Vec<u64>,
    pub model_ops: u64,
}

impl TrainingRun {
    pub fn transcript(&self, declaration: &WorkloadDeclaration) -> Result<TrainingTranscript> {
        Ok(TrainingTranscript {
            declaration_commitment: declaration.commitment()?,
            batch_order: self.batch_order.clone(),
            commitments: self.checkpoints.iter().map(Checkpoint::commitments).collect(),
            checkpoints: self.checkpoints.clone(),
        })
    }

    pub fn final_weights(&self) -> &Weights {
        &self.checkpoints.last().expect("at least the initial checkpoint").weights
    }
}

/// Fisher-Yates shuffle of `0..n_batches` driven by `(seed, "order")`.
pub fn permute_data_order(n_batches: u32, seed: &Seed) -> Vec<u32> {
    let mut order: Vec<u32> = (0..n_batches).collect();
    let mut stream = PrngStream::new(seed, "order");
    for i in (1..order.len()).rev() {
        let j = stream.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

/// Starting checkpoint of a declared training run.
pub fn initial_checkpoint(declaration: &WorkloadDeclaration) -> Result<Checkpoint> {
    let weights = init_weights(&declaration.architecture, &declaration.master_seed)?;
    let state = OptimizerState::new(&declaration.optimizer_family, weights.param_count())?;
    Ok(Checkpoint::new(0, weights, state, 0))
}

impl Engine {
    pub fn new(profile: ComputeProfile) -> Engine {
        Engine { profile, faults: None }
    }

    pub fn with_faults(mut self, rate_per_op: f64, seed: &Seed) -> Engine {
        self.faults = Some(FaultInjector::new(rate_per_op, seed));
        self
    }

    /// One optimizer step on one batch.
    pub fn train_step(
        &mut self,
        weights: &mut Weights,
        state: &mut OptimizerState,
        batch: &Batch,
        declaration: &WorkloadDeclaration,
    ) -> Result<()> {
        let mut wide = backward_wide(weights, batch)?;
        if let Some(f) = self.faults.as_mut() {
            let ops = training_ops_per_item(&weights.architecture) * batch.items() as u64;
            let p_fault = 1.0 - (1.0 - f.rate_per_op).powf(ops as f64);
            if f.rng.gen::<f64>() < p_fault {
                let layer = f.rng.gen_range(0..wide.layers.len());
                let idx = f.rng.gen_range(0..wide.layers[layer].len());
                let bit = f.rng.gen_range(0..64);
                wide.layers[layer][idx] ^= 1i64 << bit;
                f.injected += 1;
            }
        }
        let grad = wide.rescale();
        apply_update(weights, state, &grad, &declaration.optimizer_family, &declaration.optimizer_params)
    }

    /// Runs one segment from `checkpoint` over `data_slice`.
    pub fn train_segment(
        &mut self,
        checkpoint: &Checkpoint,
        data_slice: &[&Batch],
        declaration: &WorkloadDeclaration,
    ) -> Result<SegmentOutput> {
        if let OptimizerFamily::Other(name) = &declaration.optimizer_family {
            return Err(Error::UnsupportedOptimizer(name.clone()));
        }
        if declaration.kind != WorkloadKind::Training {
            return Err(Error::KindMismatch { expected: "training".into(), actual: declaration.kind.to_string() });
        }
        if checkpoint.step_index + 1 > declaration.segment_count {
            return Err(Error::OutOfRange(format!(
                "checkpoint {} is already the last of {} segments",
                checkpoint.step_index, declaration.segment_count
            )));
        }
        let mut weights = checkpoint.weights.clone();
        let mut state = checkpoint.optimizer_state.clone();
        let mut model_ops = 0;
        for batch in data_slice {
            self.train_step(&mut weights, &mut state, batch, declaration)?;
            model_ops += training_ops_per_item(&weights.architecture) * batch.items() as u64;
        }
        let mut hardware_ops = model_ops;
        if self.profile.recompute_forward {
            let items: u64 = data_slice.iter().map(|b| b.items() as u64).sum();
            hardware_ops += 2 * forward_macs(&weights.architecture) * items;
        }
        let mut trace = ExecutionTrace::default();
        trace.push_busy(hardware_ops, self.profile.ops_per_tick, self.profile.training_utilization);
        // Gradient all-reduce plus weight broadcast.
        let tick = trace.len();
        trace.ticks.push(TickRecord {
            tick,
            utilization: Rational::from_integer(0),
            hardware_ops: 0,
            messages_emitted: 2 * self.profile.nodes - 1,
        });
        let cursor = checkpoint.rng_cursor + data_slice.len() as u64;
        Ok(SegmentOutput { checkpoint: Checkpoint::new(checkpoint.step_index + 1, weights, state, cursor), trace, model_ops })
    }

    /// Full declared training run from the seed-derived initialization.
    pub fn run_training(&mut self, declaration: &WorkloadDeclaration, data: &Dataset) -> Result<TrainingRun> {
        let start = initial_checkpoint(declaration)?;
        let order = permute_data_order(declaration.total_batches(), &declaration.master_seed);
        self.run_training_from(declaration, data, start, order)
    }

    /// Training run with an explicit start checkpoint and batch order.
    pub fn run_training_from(
        &mut self,
        declaration: &WorkloadDeclaration,
        data: &Dataset,
        start: Checkpoint,
        batch_order: Vec<u32>,
    ) -> Result<TrainingRun> {
        declaration.validate()?;
        let bps = declaration.batches_per_segment as usize;
        if batch_order.len() < declaration.segment_count as usize * bps {
            return Err(Error::Shape("batch order shorter than the declared run".into()));
        }
        let mut checkpoints = vec![start];
        let mut trace = ExecutionTrace::default();
        let mut comm_ticks = Vec::new();
        let mut model_ops = 0;
        for seg in 0..declaration.segment_count as usize {
            let slice: Vec<&Batch> = batch_order[seg * bps..(seg + 1) * bps]
                .iter()
                .map(|&i| data.get(i).ok_or_else(|| Error::Shape(format!("batch {i} missing from dataset"))))
                .collect::<Result<_>>()?;
            let out = self.train_segment(checkpoints.last().expect("non-empty"), &slice, declaration)?;
            trace.append(&out.trace);
            comm_ticks.push(trace.len() - 1);
            model_ops += out.model_ops;
            checkpoints.push(out.checkpoint);
        }
        Ok(TrainingRun { checkpoints, batch_order, trace, segment_comm_ticks: comm_ticks, model_ops })
    }

    /// Batch-level inference. With a non-zero temperature, each item's token
    /// is drawn from noise keyed by the batch index and the item's content.
    pub fn run_inference(
        &mut self,
        declaration: &WorkloadDeclaration,
        batches: &[Batch],
        weights: &Weights,
    ) -> Result<InferenceRun> {
        if declaration.kind != WorkloadKind::Inference {
            return Err(Error::KindMismatch { expected: "inference".into(), actual: declaration.kind.to_string() });
        }
        weights.validate()?;
        let mut outputs = Vec::with_capacity(batches.len());
        let mut ops = 0;
        for batch in batches {
            outputs.push(infer_batch(declaration, batch, weights)?);
            ops += inference_ops_per_item(&weights.architecture) * batch.items() as u64;
        }
        let mut trace = ExecutionTrace::default();
        trace.push_busy(ops, self.profile.ops_per_tick, self.profile.inference_utilization);
        Ok(InferenceRun { outputs, trace, model_ops: ops })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BatchOutput {
    pub batch_index: u32,
    /// Flat `items x output_width`.
    pub outputs: Vec<Fixed>,
    /// Sampled output index per item.
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct InferenceRun {
    pub outputs: Vec<BatchOutput>,
    pub trace: ExecutionTrace,
    pub model_ops: u64,
}

/// Deterministic inference over one batch.
pub fn infer_batch(declaration: &WorkloadDeclaration, batch: &Batch, weights: &Weights) -> Result<BatchOutput> {
    if batch.input_width as usize != weights.input_width() {
        return Err(Error::Shape("batch input width does not fit the network".into()));
    }
    let width = weights.output_width();
    let mut outputs = Vec::with_capacity(batch.items() * width);
    let mut tokens = Vec::with_capacity(batch.items());
    for item in 0..batch.items() {
        let x = batch.input(item);
        let y = forward_outputs(weights, x);
        let scored: Vec<Fixed> = if declaration.sampling_temperature == Fixed::ZERO {
            y.clone()
        } else {
            let item_key = commit(&crate::model::canonical_encode(x)?);
            let mut noise = PrngStream::new(&declaration.master_seed, &format!("sample/{}/{}", batch.batch_index, item_key));
            y.iter()
                .map(|&v| {
                    // 16 random fraction bits: uniform on [0, 1).
                    let u = Fixed((noise.next_u64() >> 48) as i32);
                    v + declaration.sampling_temperature.wrapping_mul(u)
                })
                .collect()
        };
        let token = scored.iter().enumerate().fold(0usize, |best, (i, v)| if *v > scored[best] { i } else { best });
        tokens.push(token as u32);
        outputs.extend(y);
    }
    Ok(BatchOutput { batch_index: batch.batch_index, outputs, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::data::{synthetic_dataset, TaskKind};
    use crate::detnet::fixtures;

    #[test]
    fn permutation_small_cases() {
        assert_eq!(permute_data_order(1, &Seed::from_u64(1)), vec![0]);
        assert!(permute_data_order(0, &Seed::from_u64(1)).is_empty());
        assert_eq!(permute_data_order(50, &Seed::from_u64(1)), permute_data_order(50, &Seed::from_u64(1)));
    }

    #[test]
    fn zero_learning_rate_keeps_commitment() {
        let mut decl = fixtures::training_declaration(3);
        decl.optimizer_params.learning_rate = Fixed::ZERO;
        let data =
            synthetic_dataset(&decl.master_seed, &decl.architecture, decl.total_batches(), decl.batch_size, TaskKind::Random);
        let run = Engine::default().run_training(&decl, &data).unwrap();
        assert_eq!(run.checkpoints[0].weights_commitment, run.checkpoints[1].weights_commitment);
    }

    #[test]
    fn train_segment_rejects_unknown_optimizer_and_overrun() {
        let mut decl = fixtures::training_declaration(5);
        let data =
            synthetic_dataset(&decl.master_seed, &decl.architecture, decl.total_batches(), decl.batch_size, TaskKind::Random);
        let start = initial_checkpoint(&decl).unwrap();
        let slice: Vec<&Batch> = data.batches.iter().take(decl.batches_per_segment as usize).collect();
        let mut engine = Engine::default();
        let mut last = start.clone();
        last.step_index = decl.segment_count;
        assert!(matches!(engine.train_segment(&last, &slice, &decl), Err(Error::OutOfRange(_))));
        decl.optimizer_family = OptimizerFamily::Other("custom".into());
        assert!(matches!(engine.train_segment(&start, &slice, &decl), Err(Error::UnsupportedOptimizer(_))));
    }

    #[test]
    fn segment_trace_accounts_every_op() {
        let decl = fixtures::training_declaration(9);
        let data =
            synthetic_dataset(&decl.master_seed, &decl.architecture, decl.total_batches(), decl.batch_size, TaskKind::Random);
        let run = Engine::default().run_training(&decl, &data).unwrap();
        assert_eq!(run.trace.total_hardware_ops(), run.model_ops);
        assert_eq!(run.model_ops, decl.claimed_model_ops);
        assert_eq!(run.segment_comm_ticks.len(), decl.segment_count as usize);
        for t in &run.trace.ticks {
            assert!(t.hardware_ops as u128 * 2 <= Engine::default().profile.ops_per_tick as u128);
        }
    }

    #[test]
    fn inference_requires_inference_kind() {
        let decl = fixtures::training_declaration(1);
        let w = Weights::zeros(&decl.architecture);
        assert!(matches!(Engine::default().run_inference(&decl, &[], &w), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn faults_perturb_replay() {
        let decl = fixtures::training_declaration(2);
        let data =
            synthetic_dataset(&decl.master_seed, &decl.architecture, decl.total_batches(), decl.batch_size, TaskKind::Random);
        let clean = Engine::default().run_training(&decl, &data).unwrap();
        let mut faulty = Engine::default().with_faults(1e-2, &Seed::from_u64(77));
        let noisy = faulty.run_training(&decl, &data).unwrap();
        assert!(faulty.faults.as_ref().unwrap().injected > 0);
        assert_ne!(clean.checkpoints.last().unwrap().weights_commitment, noisy.checkpoints.last().unwrap().weights_commitment);
    }
}
