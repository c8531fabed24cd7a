//! Reference declarations shared by tests, scenarios and the CLI.

use super::data::{synthetic_dataset, TaskKind};
use super::fixed::Fixed;
use super::net::{inference_ops_per_item, training_ops_per_item, Dataset};
use crate::model::{commit, OptimizerFamily, OptimizerParams, Rational, Seed, WorkloadDeclaration, WorkloadKind};

pub const ARCHITECTURE: [u32; 3] = [48, 16, 2];
pub const SEGMENTS: u32 = 10;
pub const BATCHES_PER_SEGMENT: u32 = 4;
pub const BATCH_SIZE: u32 = 8;
/// Per-chip theoretical operations per hour of the simulated cluster.
pub const PEAK_OPS_PER_HOUR: u64 = 600 * 3600;

pub fn training_declaration(seed: u64) -> WorkloadDeclaration {
    training_declaration_with(Seed::from_u64(seed), OptimizerFamily::Sgd)
}

pub fn training_declaration_with(master_seed: Seed, family: OptimizerFamily) -> WorkloadDeclaration {
    let data = training_data_for(&master_seed);
    let ops = training_ops_per_item(&ARCHITECTURE) * (SEGMENTS * BATCHES_PER_SEGMENT * BATCH_SIZE) as u64;
    let mfu = Rational::new(1, 2);
    let params = OptimizerParams { learning_rate: Fixed::from_ratio(1, 64), ..OptimizerParams::default() };
    WorkloadDeclaration {
        workload_id: format!("train-{}", &master_seed.to_hex()[..8]),
        kind: WorkloadKind::Training,
        architecture: ARCHITECTURE.to_vec(),
        optimizer_family: family,
        optimizer_params: params,
        master_seed,
        data_commitment: data.commitment(),
        segment_count: SEGMENTS,
        batches_per_segment: BATCHES_PER_SEGMENT,
        batch_size: BATCH_SIZE,
        claimed_model_ops: ops,
        claimed_chip_hours: Rational::new(ops, PEAK_OPS_PER_HOUR) / mfu,
        mfu_claimed: mfu,
        sampling_temperature: Fixed::ZERO,
        non_ai_classification: None,
    }
}

/// The dataset a fixture declaration commits to.
pub fn training_data_for(master_seed: &Seed) -> Dataset {
    synthetic_dataset(master_seed, &ARCHITECTURE, SEGMENTS * BATCHES_PER_SEGMENT, BATCH_SIZE, TaskKind::Random)
}

pub const INFERENCE_BATCHES: u32 = 4;

pub fn inference_declaration(master_seed: Seed, temperature: Fixed) -> WorkloadDeclaration {
    let data = inference_data_for(&master_seed);
    let ops = inference_ops_per_item(&ARCHITECTURE) * (INFERENCE_BATCHES * BATCH_SIZE) as u64;
    let mfu = Rational::new(3, 10);
    WorkloadDeclaration {
        workload_id: format!("infer-{}", &master_seed.to_hex()[..8]),
        kind: WorkloadKind::Inference,
        architecture: ARCHITECTURE.to_vec(),
        optimizer_family: OptimizerFamily::Sgd,
        optimizer_params: OptimizerParams::default(),
        master_seed,
        data_commitment: data.commitment(),
        segment_count: INFERENCE_BATCHES,
        batches_per_segment: 1,
        batch_size: BATCH_SIZE,
        claimed_model_ops: ops,
        claimed_chip_hours: Rational::new(ops, PEAK_OPS_PER_HOUR) / mfu,
        mfu_claimed: mfu,
        sampling_temperature: temperature,
        non_ai_classification: None,
    }
}

pub fn inference_data_for(master_seed: &Seed) -> Dataset {
    synthetic_dataset(&master_seed.derive("prompts"), &ARCHITECTURE, INFERENCE_BATCHES, BATCH_SIZE, TaskKind::Random)
}

pub const NON_AI_OPS: u64 = 12_000;

pub fn non_ai_declaration(master_seed: Seed) -> WorkloadDeclaration {
    WorkloadDeclaration {
        workload_id: format!("sim-{}", &master_seed.to_hex()[..8]),
        kind: WorkloadKind::NonAi,
        architecture: vec![],
        optimizer_family: OptimizerFamily::Sgd,
        optimizer_params: OptimizerParams::default(),
        master_seed,
        data_commitment: commit(b"physics-simulation-inputs"),
        segment_count: 1,
        batches_per_segment: 1,
        batch_size: 1,
        claimed_model_ops: NON_AI_OPS,
        claimed_chip_hours: Rational::new(NON_AI_OPS, PEAK_OPS_PER_HOUR),
        mfu_claimed: Rational::new(9, 10),
        sampling_temperature: Fixed::ZERO,
        non_ai_classification: Some("physics simulation; classified by code review".into()),
    }
}
