//! Prover behaviors, evidence bundles, the full Verifier pipeline and the
//! Monte Carlo detection harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ed25519_dalek::VerifyingKey;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{
    accounted_hw_ops_option_b, estimate_total_ops, reconcile_ops, signature_distance_option_c, simulate_power_trace,
    AccountingParams, Amount, EfficiencyModel, SensorTrace,
};
use crate::attest::{
    boot_chip, check_counter_continuity, chip_key, compute_accounting_link, grant_license, issue_certificate, license_cycle,
    licensor_key, registry_reconcile, verify_certificate_bytes, verify_counter_attestation, ChipState, CounterAttestation,
    LicenseEvent, WorkloadCertificate,
};
use crate::datacheck::{optimizer_structure_check, token_frequency_check, TokenDistribution, CHI2_15_P001};
use crate::detnet::data::{synthetic_dataset, task_batches, TaskKind};
use crate::detnet::fixtures::{
    inference_data_for, inference_declaration, non_ai_declaration, training_data_for, training_declaration_with,
};
use crate::detnet::net::training_ops_per_item;
use crate::detnet::prng::PrngStream;
use crate::detnet::{
    init_weights, permute_data_order, BatchOutput, Checkpoint, ComputeProfile, Dataset, Engine, ExecutionTrace, Fixed,
    OptimizerState, TrainingRun, TrainingTranscript, Weights,
};
use crate::error::{Error, Result};
use crate::model::{
    aggregate_report, canonical_decode, commit, commit_value, read_json_file, write_canonical_file, ClusterSpec, Digest,
    Evidence, Measure, OptimizerFamily, Rational, Seed, Status, SubgoalId, Verdict, VerificationReport, WorkloadDeclaration,
    WorkloadKind,
};
use crate::nettap::{
    analyze_against, check_fill_transcript, expected_traffic, message, run_fill_challenge, tap_sample, ClusterMemory,
    ClusterMessage, DeclaredTraining, ExpectedTraffic, FillTranscript, MessageKind, TapLog,
};
use crate::reexec::{
    check_inflated_compute, default_duplicate_threshold, detect_glue, evaluate_properties, select_segments, verify_declared_ops,
    verify_faithfulness, verify_inference_sample, verify_init_and_order, verify_optimizer, GlueConfig, Replayer,
};

// ---------------------------------------------------------------------------
// Scenarios
// ---------------------------------------------------------------------------

/// What the Prover does. Magnitudes are validated by [`Scenario::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "behavior", rename_all = "snake_case")]
pub enum ProverBehavior {
    Honest,
    /// Checkpoints after `boundary` come from a run with another init.
    Glue {
        boundary: u32,
    },
    /// Training starts from weights not derived from the declared seed.
    PrecomputedWeights,
    /// The same training is run and declared `copies` times.
    DuplicateInflation {
        copies: u32,
    },
    /// Hidden training on the declared cluster, sized as a fraction of
    /// declared operations.
    UndeclaredExtraWorkload {
        fraction: Rational,
    },
    /// Messages on the cluster network that belong to no declared workload.
    CovertTraffic {
        messages: u32,
    },
    /// One certificate (by position in file order) is withheld.
    DeletedCertificate {
        index: u32,
    },
    /// Unregistered, unlicensed chips doing undeclared work.
    HiddenChips {
        count: u32,
    },
    /// A fraction of accelerator memory is kept occupied by hidden state.
    HiddenMemory {
        fraction: Rational,
    },
}

impl ProverBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            ProverBehavior::Honest => "honest",
            ProverBehavior::Glue { .. } => "glue",
            ProverBehavior::PrecomputedWeights => "precomputed_weights",
            ProverBehavior::DuplicateInflation { .. } => "duplicate_inflation",
            ProverBehavior::UndeclaredExtraWorkload { .. } => "undeclared_extra_workload",
            ProverBehavior::CovertTraffic { .. } => "covert_traffic",
            ProverBehavior::DeletedCertificate { .. } => "deleted_certificate",
            ProverBehavior::HiddenChips { .. } => "hidden_chips",
            ProverBehavior::HiddenMemory { .. } => "hidden_memory",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(flatten)]
    pub behavior: ProverBehavior,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn new(name: impl Into<String>, behavior: ProverBehavior, seed: u64) -> Scenario {
        Scenario { name: name.into(), behavior, seed }
    }

    pub fn honest(seed: u64) -> Scenario {
        Scenario::new("honest", ProverBehavior::Honest, seed)
    }

    /// Parses a `.scenario.json` document. Unknown behaviors are reported as
    /// [`Error::UnknownBehavior`].
    pub fn from_json(bytes: &[u8]) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let behavior = value.get("behavior").and_then(|b| b.as_str()).unwrap_or("<missing>").to_string();
        let scenario: Scenario = serde_json::from_value(value).map_err(|e| {
            if e.to_string().contains("unknown variant") || behavior == "<missing>" {
                Error::UnknownBehavior(behavior.clone())
            } else {
                Error::Json(e)
            }
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: &Rational| *f.numer() > 0 && *f <= Rational::from_integer(1);
        let problem = match &self.behavior {
            ProverBehavior::Glue { boundary } if *boundary >= SEGMENT_COUNT => {
                Some(format!("glue boundary {boundary} outside 0..{SEGMENT_COUNT}"))
            }
            ProverBehavior::DuplicateInflation { copies } if !(2..=10).contains(copies) => {
                Some(format!("duplicate copies {copies} outside 2..=10"))
            }
            ProverBehavior::UndeclaredExtraWorkload { fraction } if !frac_ok(fraction) => {
                Some(format!("extra workload fraction {fraction} outside (0, 1]"))
            }
            ProverBehavior::CovertTraffic { messages } if !(1..=1000).contains(messages) => {
                Some(format!("covert message count {messages} outside 1..=1000"))
            }
            ProverBehavior::HiddenChips { count } if !(1..=64).contains(count) => {
                Some(format!("hidden chip count {count} outside 1..=64"))
            }
            ProverBehavior::HiddenMemory { fraction } if !frac_ok(fraction) || *fraction == Rational::from_integer(1) => {
                Some(format!("hidden memory fraction {fraction} outside (0, 1)"))
            }
            _ => None,
        };
        match problem {
            Some(p) => Err(Error::OutOfRange(p)),
            None => Ok(()),
        }
    }
}

const SEGMENT_COUNT: u32 = crate::detnet::fixtures::SEGMENTS;

// ---------------------------------------------------------------------------
// World
// ---------------------------------------------------------------------------

/// The declared cluster and the measurement devices around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub cluster: ClusterSpec,
    pub profile: ComputeProfile,
    pub tick_seconds: u32,
    pub noise_sigma: f64,
    pub tap_rate: Rational,
    pub fill_fraction: Rational,
    /// Idle ticks before the first and after the last workload.
    pub idle_margin: u64,
}

pub const FIRMWARE: &[u8] = b"verifsim-firmware-1.0";
pub const LICENSOR: &str = "treaty-licensor";

pub fn reference_cluster() -> ClusterSpec {
    ClusterSpec {
        cluster_id: "cluster-a".into(),
        chip_count: 4,
        peak_ops_per_hour: crate::detnet::fixtures::PEAK_OPS_PER_HOUR,
        p_idle_milliwatts: 100_000,
        p_max_milliwatts: 400_000,
        chip_ids: (0..4).map(|i| format!("chip-{i}")).collect(),
        node_count: 2,
        memory_bytes_per_chip: 256 * 1024,
    }
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            cluster: reference_cluster(),
            profile: ComputeProfile::default(),
            tick_seconds: 1,
            noise_sigma: 0.01,
            tap_rate: Rational::new(1, 2),
            fill_fraction: Rational::new(9, 10),
            idle_margin: 8,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.cluster.validate()?;
        let model = EfficiencyModel::from_cluster(&self.cluster, self.tick_seconds, self.noise_sigma)?;
        let cluster_ops = model.peak_ops_per_tick();
        if cluster_ops != Amount::from_integer(self.profile.ops_per_tick as u128) {
            return Err(Error::Invariant(format!(
                "profile runs {} ops per tick but the cluster peaks at {cluster_ops}",
                self.profile.ops_per_tick
            )));
        }
        if self.profile.nodes != self.cluster.node_count {
            return Err(Error::Invariant("profile and cluster disagree on node count".into()));
        }
        Ok(())
    }

    pub fn efficiency_model(&self) -> Result<EfficiencyModel> {
        EfficiencyModel::from_cluster(&self.cluster, self.tick_seconds, self.noise_sigma)
    }
}

// ---------------------------------------------------------------------------
// Evidence bundle
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisteredChip {
    pub chip_id: String,
    /// Hex Ed25519 public key.
    pub public_key: String,
}

/// Chips the Verifier knows about, with their attestation keys.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Registry {
    pub chips: Vec<RegisteredChip>,
}

impl Registry {
    pub fn for_cluster(cluster: &ClusterSpec) -> Registry {
        let chips = cluster
            .chip_ids
            .iter()
            .map(|id| RegisteredChip { chip_id: id.clone(), public_key: hex::encode(chip_key(id).verifying_key().as_bytes()) })
            .collect();
        Registry { chips }
    }

    pub fn chip_ids(&self) -> Vec<String> {
        self.chips.iter().map(|c| c.chip_id.clone()).collect()
    }

    pub fn key(&self, chip_id: &str) -> Option<VerifyingKey> {
        let chip = self.chips.iter().find(|c| c.chip_id == chip_id)?;
        let bytes: [u8; 32] = hex::decode(&chip.public_key).ok()?.try_into().ok()?;
        VerifyingKey::from_bytes(&bytes).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub workload_id: String,
    pub start_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRecord {
    /// Commitment of the weights that served the requests.
    pub model_commitment: Digest,
    pub prompts: Dataset,
    pub outputs: Vec<BatchOutput>,
}

/// Everything the Prover hands over, one field per file family.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvidenceBundle {
    pub cluster: Option<ClusterSpec>,
    pub registry: Registry,
    pub declarations: Vec<WorkloadDeclaration>,
    pub schedule: Vec<ScheduleEntry>,
    pub transcripts: BTreeMap<String, TrainingTranscript>,
    pub datasets: BTreeMap<String, Dataset>,
    pub inferences: BTreeMap<String, InferenceRecord>,
    pub sensor: Option<SensorTrace>,
    /// `(file name, raw bytes)`, sorted by name.
    pub certificates: Vec<(String, Vec<u8>)>,
    pub counters: Vec<CounterAttestation>,
    pub licenses: Vec<LicenseEvent>,
    pub tap: Option<TapLog>,
    pub fill: Option<FillTranscript>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn read_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json_file(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Files in `dir` ending in `suffix`, sorted by name. A missing directory
/// yields nothing.
fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<(String, std::path::PathBuf)>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if let Some(stem) = name.strip_suffix(suffix) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl EvidenceBundle {
    /// Writes the bundle as canonical JSON files under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        for sub in ["decl", "ckpt", "data", "infer", "certs"] {
            fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(dir, e))?;
        }
        if let Some(c) = &self.cluster {
            write_canonical_file(&dir.join("cluster.json"), c)?;
        }
        write_canonical_file(&dir.join("registry.json"), &self.registry)?;
        write_canonical_file(&dir.join("schedule.json"), &self.schedule)?;
        for d in &self.declarations {
            write_canonical_file(&dir.join("decl").join(format!("{}.decl.json", d.workload_id)), d)?;
        }
        for (id, t) in &self.transcripts {
            write_canonical_file(&dir.join("ckpt").join(format!("{id}.ckpt.json")), t)?;
        }
        for (id, d) in &self.datasets {
            write_canonical_file(&dir.join("data").join(format!("{id}.data.json")), d)?;
        }
        for (id, r) in &self.inferences {
            write_canonical_file(&dir.join("infer").join(format!("{id}.infer.json")), r)?;
        }
        if let Some(s) = &self.sensor {
            write_canonical_file(&dir.join("power.trace.json"), s)?;
        }
        for (name, bytes) in &self.certificates {
            let path = dir.join("certs").join(name);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        write_canonical_file(&dir.join("counters.json"), &self.counters)?;
        write_canonical_file(&dir.join("licenses.json"), &self.licenses)?;
        if let Some(t) = &self.tap {
            write_canonical_file(&dir.join("network.tap.json"), t)?;
        }
        if let Some(f) = &self.fill {
            write_canonical_file(&dir.join("memory.fill.json"), f)?;
        }
        Ok(())
    }

    /// Reads a run directory. Declarations are required; every other file
    /// family may be absent, which later shows up as inconclusive checks.
    pub fn read_dir(dir: &Path) -> Result<EvidenceBundle> {
        let decl_files = files_with_suffix(&dir.join("decl"), ".decl.json")?;
        if decl_files.is_empty() {
            return Err(Error::Io {
                path: dir.join("decl").display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "no declarations"),
            });
        }
        let declarations = decl_files.iter().map(|(_, p)| read_json_file(p)).collect::<Result<Vec<WorkloadDeclaration>>>()?;
        let mut bundle = EvidenceBundle {
            cluster: read_optional(&dir.join("cluster.json"))?,
            registry: read_optional(&dir.join("registry.json"))?.unwrap_or_default(),
            declarations,
            schedule: read_optional(&dir.join("schedule.json"))?.unwrap_or_default(),
            sensor: read_optional(&dir.join("power.trace.json"))?,
            counters: read_optional(&dir.join("counters.json"))?.unwrap_or_default(),
            licenses: read_optional(&dir.join("licenses.json"))?.unwrap_or_default(),
            tap: read_optional(&dir.join("network.tap.json"))?,
            fill: read_optional(&dir.join("memory.fill.json"))?,
            ..EvidenceBundle::default()
        };
        for (id, p) in files_with_suffix(&dir.join("ckpt"), ".ckpt.json")? {
            bundle.transcripts.insert(id, read_json_file(&p)?);
        }
        for (id, p) in files_with_suffix(&dir.join("data"), ".data.json")? {
            bundle.datasets.insert(id, read_json_file(&p)?);
        }
        for (id, p) in files_with_suffix(&dir.join("infer"), ".infer.json")? {
            bundle.inferences.insert(id, read_json_file(&p)?);
        }
        for (stem, p) in files_with_suffix(&dir.join("certs"), ".cert.json")? {
            let bytes = fs::read(&p).map_err(|e| io_err(&p, e))?;
            bundle.certificates.push((format!("{stem}.cert.json"), bytes));
        }
        Ok(bundle)
    }
}

// ---------------------------------------------------------------------------
// Prover
// ---------------------------------------------------------------------------

/// A Prover run: the evidence handed over plus ground truth for tests.
#[derive(Debug, Clone)]
pub struct ProverRun {
    pub bundle: EvidenceBundle,
    /// What the cluster actually executed.
    pub trace: ExecutionTrace,
    /// Hardware operations of undeclared work on the declared cluster.
    pub undeclared_ops: u64,
    /// Every message on the cluster network, in stream order.
    pub stream: Vec<ClusterMessage>,
}

fn result_commitment(weights: &Weights) -> Digest {
    weights.commitment()
}

/// Training run the Prover executes and the checkpoints it presents for it.
pub fn training_evidence(
    behavior: &ProverBehavior,
    seed: &Seed,
    decl: &WorkloadDeclaration,
    data: &Dataset,
    engine: &mut Engine,
) -> Result<(TrainingRun, Vec<Checkpoint>)> {
    match behavior {
        ProverBehavior::Glue { boundary } => {
            let run = engine.run_training(decl, data)?;
            let donor_start = Checkpoint::new(
                0,
                init_weights(&decl.architecture, &seed.derive("glue-donor"))?,
                OptimizerState::new(&decl.optimizer_family, run.checkpoints[0].weights.param_count())?,
                0,
            );
            let donor = engine.run_training_from(decl, data, donor_start, run.batch_order.clone())?;
            let b = *boundary as usize;
            let mut presented = run.checkpoints[..=b].to_vec();
            presented.extend(donor.checkpoints[b + 1..].iter().cloned());
            Ok((run, presented))
        }
        ProverBehavior::PrecomputedWeights => {
            let weights = init_weights(&decl.architecture, &seed.derive("precomputed"))?;
            let state = OptimizerState::new(&decl.optimizer_family, weights.param_count())?;
            let order = permute_data_order(decl.total_batches(), &decl.master_seed);
            let run = engine.run_training_from(decl, data, Checkpoint::new(0, weights, state, 0), order)?;
            let presented = run.checkpoints.clone();
            Ok((run, presented))
        }
        _ => {
            let run = engine.run_training(decl, data)?;
            let presented = run.checkpoints.clone();
            Ok((run, presented))
        }
    }
}

fn transcript_of(decl: &WorkloadDeclaration, order: &[u32], checkpoints: Vec<Checkpoint>) -> Result<TrainingTranscript> {
    Ok(TrainingTranscript {
        declaration_commitment: decl.commitment()?,
        batch_order: order.to_vec(),
        commitments: checkpoints.iter().map(Checkpoint::commitments).collect(),
        checkpoints,
    })
}

/// Batches of hidden training needed to add `fraction` of `declared_ops`.
fn hidden_batches(fraction: Rational, declared_ops: u64, ops_per_batch: u64) -> u32 {
    let num = fraction.numer() * declared_ops;
    let den = fraction.denom() * ops_per_batch;
    ((num + den / 2) / den) as u32
}

/// Adds `count` messages of kind `Other` at uniformly drawn ticks in
/// `[0, ticks)` and restores tick order.
pub fn inject_covert(stream: &mut Vec<ClusterMessage>, count: u32, seed: &Seed, nodes: u32, ticks: u64) {
    let mut rng = PrngStream::new(seed, "covert");
    let nodes = nodes.max(2) as u64;
    for i in 0..count {
        let tick = rng.below(ticks.max(1));
        let src = rng.below(nodes) as u32;
        let dst = ((src as u64 + 1 + rng.below(nodes - 1)) % nodes) as u32;
        let payload = rng.next_u64().to_be_bytes();
        stream.push(message(tick, src, dst, MessageKind::Other, &[&payload[..], &i.to_be_bytes()].concat()));
    }
    stream.sort_by_key(|m| m.tick);
}

/// Runs the Prover's side of `scenario` and collects its evidence.
pub fn prove(scenario: &Scenario, world: &WorldConfig) -> Result<ProverRun> {
    scenario.validate()?;
    world.validate()?;
    let seed = Seed::from_u64(scenario.seed);
    let behavior = &scenario.behavior;
    let cluster = &world.cluster;
    let mut engine = Engine::new(world.profile.clone());

    let train = training_declaration_with(seed.derive("training"), OptimizerFamily::Sgd);
    let train_data = training_data_for(&train.master_seed);
    let (actual, presented) = training_evidence(behavior, &seed, &train, &train_data, &mut engine)?;
    let model = presented.last().expect("initial checkpoint").weights.clone();

    let copies = match behavior {
        ProverBehavior::DuplicateInflation { copies } => *copies,
        _ => 1,
    };
    let training_decls: Vec<WorkloadDeclaration> = (0..copies)
        .map(|i| {
            let mut d = train.clone();
            if i > 0 {
                d.workload_id = format!("{}-r{i}", train.workload_id);
            }
            d
        })
        .collect();

    let infer = inference_declaration(seed.derive("inference"), Fixed::from_ratio(1, 2));
    let prompts = inference_data_for(&infer.master_seed);
    let inference = engine.run_inference(&infer, &prompts.batches, &model)?;
    let non_ai = non_ai_declaration(seed.derive("non-ai"));

    let mut bundle =
        EvidenceBundle { cluster: Some(cluster.clone()), registry: Registry::for_cluster(cluster), ..Default::default() };
    let mut trace = ExecutionTrace::default();
    let mut stream = Vec::new();
    trace.push_idle(world.idle_margin);

    for d in &training_decls {
        let start = trace.len();
        bundle.schedule.push(ScheduleEntry { workload_id: d.workload_id.clone(), start_tick: start });
        stream.extend(crate::nettap::emit_training_messages(
            d,
            &actual.checkpoints,
            &actual.batch_order,
            &train_data,
            &world.profile,
            start,
        )?);
        trace.append(&actual.trace);
        bundle.transcripts.insert(d.workload_id.clone(), transcript_of(d, &actual.batch_order, presented.clone())?);
        bundle.datasets.insert(d.workload_id.clone(), train_data.clone());
    }

    let mut undeclared_ops = 0;
    if let ProverBehavior::UndeclaredExtraWorkload { fraction } = behavior {
        let declared: u64 =
            training_decls.iter().map(|d| d.claimed_model_ops).sum::<u64>() + infer.claimed_model_ops + non_ai.claimed_model_ops;
        let per_batch = training_ops_per_item(&train.architecture) * train.batch_size as u64;
        let n = hidden_batches(*fraction, declared, per_batch);
        if n > 0 {
            let mut hidden = training_declaration_with(seed.derive("hidden"), OptimizerFamily::Sgd);
            hidden.segment_count = n;
            hidden.batches_per_segment = 1;
            hidden.claimed_model_ops = per_batch * n as u64;
            let hidden_data =
                synthetic_dataset(&hidden.master_seed, &hidden.architecture, n, hidden.batch_size, TaskKind::Random);
            let run = engine.run_training(&hidden, &hidden_data)?;
            let start = trace.len();
            stream.extend(crate::nettap::emit_training_messages(
                &hidden,
                &run.checkpoints,
                &run.batch_order,
                &hidden_data,
                &world.profile,
                start,
            )?);
            trace.append(&run.trace);
            undeclared_ops = run.trace.total_hardware_ops();
        }
    }

    bundle.schedule.push(ScheduleEntry { workload_id: infer.workload_id.clone(), start_tick: trace.len() });
    trace.append(&inference.trace);
    bundle.inferences.insert(
        infer.workload_id.clone(),
        InferenceRecord { model_commitment: model.commitment(), prompts, outputs: inference.outputs.clone() },
    );

    bundle.schedule.push(ScheduleEntry { workload_id: non_ai.workload_id.clone(), start_tick: trace.len() });
    trace.push_busy(non_ai.claimed_model_ops, world.profile.ops_per_tick, non_ai.mfu_claimed);
    trace.push_idle(world.idle_margin);

    if let ProverBehavior::CovertTraffic { messages } = behavior {
        inject_covert(&mut stream, *messages, &seed, cluster.node_count, trace.len());
    }
    stream.sort_by_key(|m| m.tick);

    let mut declarations = training_decls.clone();
    declarations.push(infer.clone());
    declarations.push(non_ai.clone());

    let model_e = world.efficiency_model()?;
    bundle.sensor = Some(simulate_power_trace(&trace, &model_e, &seed.derive("sensor"))?);
    bundle.tap = Some(tap_sample(&stream, world.tap_rate, &seed.derive("tap"))?);

    // Attestation: every registered chip is licensed for the whole run and
    // certifies its share of each declared workload.
    let fw = commit(FIRMWARE);
    let licensor = licensor_key(LICENSOR);
    let period = trace.len() + world.idle_margin;
    let mut chips: Vec<ChipState> = Vec::new();
    for id in &cluster.chip_ids {
        let chip = boot_chip(id, fw, &[fw])?;
        let grant = grant_license(&licensor, id, 1, period)?;
        chips.push(license_cycle(&chip, Some(&grant), &licensor.verifying_key(), 0, &mut bundle.licenses));
    }
    let per_chip_denominator = cluster.chip_count as u64 * cluster.peak_ops_per_hour;
    let mut certs: Vec<WorkloadCertificate> = Vec::new();
    for d in &declarations {
        let result = match d.kind {
            WorkloadKind::Training => result_commitment(&model),
            WorkloadKind::Inference => commit_value(&inference.outputs)?,
            WorkloadKind::NonAi => commit(format!("{}/result", d.workload_id).as_bytes()),
        };
        for chip in &mut chips {
            let hours = Rational::new(d.claimed_model_ops, per_chip_denominator);
            certs.push(issue_certificate(chip, d.commitment()?, result, hours)?);
        }
    }
    for chip in &chips {
        bundle.counters.push(chip.attest_counter()?);
    }

    if let ProverBehavior::HiddenChips { count } = behavior {
        let hidden_work = commit(b"undeclared standalone workload");
        for i in 0..*count {
            let mut chip = boot_chip(&format!("rogue-{i}"), fw, &[fw])?;
            certs.push(issue_certificate(&mut chip, hidden_work, hidden_work, Rational::new(1, 4))?);
            let mut later = license_cycle(&chip, None, &licensor.verifying_key(), trace.len(), &mut bundle.licenses);
            if let Err(e) = issue_certificate(&mut later, hidden_work, hidden_work, Rational::new(1, 4)) {
                bundle.licenses.push(LicenseEvent {
                    chip_id: later.chip_id.clone(),
                    tick: later.current_tick,
                    accepted: false,
                    detail: e.to_string(),
                });
            }
        }
    }

    let mut files: Vec<(String, Vec<u8>)> = certs
        .iter()
        .map(|c| Ok((format!("{}-{:06}.cert.json", c.body.chip_id, c.body.counter_value), c.to_bytes()?)))
        .collect::<Result<_>>()?;
    files.sort();
    if let ProverBehavior::DeletedCertificate { index } = behavior {
        if *index as usize >= files.len() {
            return Err(Error::OutOfRange(format!("certificate {index} of {}", files.len())));
        }
        files.remove(*index as usize);
    }
    bundle.certificates = files;

    let hidden_bytes = match behavior {
        ProverBehavior::HiddenMemory { fraction } => {
            (cluster.total_memory_bytes() as u128 * *fraction.numer() as u128 / *fraction.denom() as u128) as u64
        }
        _ => 0,
    };
    let memory = ClusterMemory { declared_bytes: cluster.total_memory_bytes(), hidden_bytes };
    bundle.fill = Some(run_fill_challenge(&memory, &seed.derive("fill-challenge"), world.fill_fraction));
    declarations.sort_by(|a, b| a.workload_id.cmp(&b.workload_id));
    bundle.declarations = declarations;

    Ok(ProverRun { bundle, trace, undeclared_ops, stream })
}

// ---------------------------------------------------------------------------
// Verifier
// ---------------------------------------------------------------------------

/// Every mechanism the Verifier runs, in report order.
pub const MECHANISMS: [&str; 20] = [
    "faithfulness",
    "init_order",
    "optimizer",
    "declared_ops",
    "glue",
    "duplicates",
    "structure",
    "tokens",
    "inference",
    "classification",
    "properties",
    "accounting",
    "signature",
    "certificates",
    "counters",
    "cert_hours",
    "tap",
    "fill",
    "registry",
    "licensing",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    /// Mechanism switches; anything not listed is on.
    pub toggles: BTreeMap<String, bool>,
    pub profile: ComputeProfile,
    pub tick_seconds: u32,
    /// Sensor noise the Verifier assumes.
    pub noise_sigma: f64,
    pub sample_segments: u32,
    pub accounting: AccountingParams,
    pub glue: GlueConfig,
    pub duplicate_threshold: Rational,
    pub token_threshold: f64,
    pub structure_tolerance_raw: i64,
    pub capability_ceiling: f64,
    pub certificate_tolerance: Rational,
    pub silent_chip_threshold: Rational,
    pub fill_fraction: Rational,
}

/// Seed of the public restricted-task benchmark.
pub const BENCHMARK_SEED: u64 = 0x5eed_be4c;
pub const BENCHMARK_BATCHES: u32 = 8;

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            toggles: BTreeMap::new(),
            profile: ComputeProfile::default(),
            tick_seconds: 1,
            noise_sigma: 0.01,
            sample_segments: 3,
            accounting: AccountingParams::default(),
            glue: GlueConfig::default(),
            duplicate_threshold: default_duplicate_threshold(),
            token_threshold: CHI2_15_P001,
            structure_tolerance_raw: 0,
            capability_ceiling: DEFAULT_CAPABILITY_CEILING,
            certificate_tolerance: Rational::new(1, 20),
            silent_chip_threshold: Rational::from_integer(0),
            fill_fraction: Rational::new(9, 10),
        }
    }
}

/// Negated mean per-item loss above which a model counts as capable on the
/// restricted task.
pub const DEFAULT_CAPABILITY_CEILING: f64 = -0.035;

impl VerifierConfig {
    pub fn enabled(&self, mechanism: &str) -> bool {
        self.toggles.get(mechanism).copied().unwrap_or(true)
    }

    pub fn set(&mut self, mechanism: &str, on: bool) -> Result<()> {
        if !MECHANISMS.contains(&mechanism) {
            return Err(Error::OutOfRange(format!("unknown mechanism `{mechanism}`")));
        }
        self.toggles.insert(mechanism.to_string(), on);
        Ok(())
    }

    /// Only the listed mechanisms on.
    pub fn only(mechanisms: &[&str]) -> Result<VerifierConfig> {
        let mut cfg = VerifierConfig::default();
        for m in MECHANISMS {
            cfg.set(m, mechanisms.contains(&m))?;
        }
        Ok(cfg)
    }
}

/// First batch index of the held-back benchmark inputs.
pub const BENCHMARK_OFFSET: u32 = 1 << 20;

/// Held-back inputs of the restricted task. Batches below
/// [`BENCHMARK_OFFSET`] of the same task are fair game for training.
pub fn restricted_benchmark(architecture: &[u32], batch_size: u32) -> Dataset {
    let range = BENCHMARK_OFFSET..BENCHMARK_OFFSET + BENCHMARK_BATCHES;
    Dataset { batches: task_batches(&Seed::from_u64(BENCHMARK_SEED), architecture, range, batch_size, TaskKind::Teacher) }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub mechanism: String,
    pub subgoal: SubgoalId,
    pub workload_id: Option<String>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verification {
    pub report: VerificationReport,
    pub outcomes: Vec<MechanismOutcome>,
}

impl Verification {
    /// Mechanisms with at least one failing verdict.
    pub fn failing_mechanisms(&self) -> BTreeSet<&str> {
        self.outcomes.iter().filter(|o| o.status == Status::Fail).map(|o| o.mechanism.as_str()).collect()
    }

    pub fn status_of(&self, mechanism: &str) -> Vec<Status> {
        self.outcomes.iter().filter(|o| o.mechanism == mechanism).map(|o| o.status).collect()
    }
}

struct Collector<'a> {
    cfg: &'a VerifierConfig,
    verdicts: BTreeMap<SubgoalId, Vec<Verdict>>,
    outcomes: Vec<MechanismOutcome>,
}

impl Collector<'_> {
    fn on(&self, mechanism: &str) -> bool {
        self.cfg.enabled(mechanism)
    }

    fn push(&mut self, mechanism: &str, subgoal: SubgoalId, workload: Option<&str>, verdict: Verdict) {
        self.outcomes.push(MechanismOutcome {
            mechanism: mechanism.to_string(),
            subgoal,
            workload_id: workload.map(str::to_string),
            status: verdict.status,
        });
        self.verdicts.entry(subgoal).or_default().push(verdict);
    }
}

fn missing(check: &str, what: &str) -> Verdict {
    Verdict::inconclusive(Evidence::note(check, format!("{what} not provided")))
}

/// Runs every enabled mechanism over `bundle` and aggregates the verdicts.
/// `verifier_seed` drives the Verifier's own sampling.
pub fn verify(bundle: &EvidenceBundle, cfg: &VerifierConfig, verifier_seed: &Seed) -> Result<Verification> {
    let mut c = Collector { cfg, verdicts: BTreeMap::new(), outcomes: Vec::new() };
    let replayer = Replayer { profile: cfg.profile.clone(), ..Replayer::default() };

    for d in bundle.declarations.iter().filter(|d| d.kind == WorkloadKind::Training) {
        verify_training(&mut c, bundle, d, &replayer, verifier_seed)?;
    }
    if c.on("duplicates") {
        let v = check_inflated_compute(&bundle.declarations, cfg.duplicate_threshold)?;
        c.push("duplicates", SubgoalId::S1A1, None, v);
    }
    for d in bundle.declarations.iter().filter(|d| d.kind == WorkloadKind::Inference) {
        verify_inference(&mut c, bundle, d)?;
    }
    for d in bundle.declarations.iter().filter(|d| d.kind == WorkloadKind::NonAi) {
        if c.on("classification") {
            let label = d.non_ai_classification.clone().unwrap_or_default();
            let v = Verdict::check(!label.trim().is_empty(), Evidence::note("classification.non_ai", label));
            c.push("classification", SubgoalId::S1A3, Some(&d.workload_id), v);
        }
    }
    verify_cluster_use(&mut c, bundle)?;
    verify_chips(&mut c, bundle)?;

    let Collector { verdicts, outcomes, .. } = c;
    Ok(Verification { report: aggregate_report(verdicts), outcomes })
}

fn verify_training(
    c: &mut Collector<'_>,
    bundle: &EvidenceBundle,
    d: &WorkloadDeclaration,
    replayer: &Replayer,
    verifier_seed: &Seed,
) -> Result<()> {
    let id = d.workload_id.as_str();
    let s = SubgoalId::S1A1;
    if c.on("optimizer") {
        c.push("optimizer", s, Some(id), verify_optimizer(d));
    }
    if c.on("declared_ops") {
        c.push("declared_ops", s, Some(id), verify_declared_ops(d));
    }
    let transcript = bundle.transcripts.get(id);
    let data = bundle.datasets.get(id);
    if c.on("tokens") {
        let v = match data {
            Some(data) => {
                let reference = TokenDistribution::triangular_reference(TokenDistribution::of_batches(&data.batches).total_count);
                token_frequency_check(&data.batches, &reference, c.cfg.token_threshold)?
            }
            None => missing("tokens.chi_square", "training data"),
        };
        c.push("tokens", s, Some(id), v);
    }
    let (Some(t), Some(data)) = (transcript, data) else {
        for m in ["faithfulness", "init_order", "glue", "structure"] {
            if c.on(m) {
                c.push(m, s, Some(id), missing(&format!("{m}.inputs"), "transcript or data"));
            }
        }
        if c.on("properties") {
            c.push("properties", SubgoalId::S1B, Some(id), missing("properties.capability_score", "transcript"));
        }
        return Ok(());
    };
    if t.declaration_commitment != d.commitment()? {
        // A transcript for some other declaration proves nothing here.
        let v = Verdict::fail(Evidence::note("faithfulness.declaration_commitment", "transcript bound to another declaration"));
        c.push("faithfulness", s, Some(id), v);
        return Ok(());
    }
    let k = c.cfg.sample_segments.min(d.segment_count);
    let sample = select_segments(d.segment_count, &verifier_seed.derive(&format!("segments/{id}")), k)?;
    if c.on("faithfulness") {
        c.push("faithfulness", s, Some(id), verify_faithfulness(d, t, data, &sample, replayer)?);
    }
    if c.on("init_order") {
        c.push("init_order", s, Some(id), verify_init_and_order(d, t)?);
    }
    if c.on("glue") {
        c.push("glue", s, Some(id), detect_glue(d, t, data, &c.cfg.glue)?);
    }
    if c.on("structure") {
        let v = optimizer_structure_check(d, t, data, &sample.indices, c.cfg.structure_tolerance_raw)?;
        c.push("structure", s, Some(id), v);
    }
    if c.on("properties") {
        let v = match t.checkpoints.last() {
            Some(last) => {
                let bench = restricted_benchmark(&d.architecture, d.batch_size);
                evaluate_properties(&last.weights, &bench.batches, c.cfg.capability_ceiling)?
            }
            None => missing("properties.capability_score", "final checkpoint"),
        };
        c.push("properties", SubgoalId::S1B, Some(id), v);
    }
    Ok(())
}

fn verify_inference(c: &mut Collector<'_>, bundle: &EvidenceBundle, d: &WorkloadDeclaration) -> Result<()> {
    let id = d.workload_id.as_str();
    if c.on("declared_ops") {
        c.push("declared_ops", SubgoalId::S1A2, Some(id), verify_declared_ops(d));
    }
    if !c.on("inference") {
        return Ok(());
    }
    let Some(record) = bundle.inferences.get(id) else {
        c.push("inference", SubgoalId::S1A2, Some(id), missing("inference.mismatched_batches", "inference record"));
        return Ok(());
    };
    if record.prompts.commitment() != d.data_commitment {
        let v = Verdict::fail(Evidence::note("inference.data_commitment", "prompts differ from the declared data"));
        c.push("inference", SubgoalId::S1A2, Some(id), v);
        return Ok(());
    }
    let weights = bundle
        .transcripts
        .values()
        .filter_map(|t| t.checkpoints.last())
        .map(|cp| &cp.weights)
        .find(|w| w.commitment() == record.model_commitment);
    let v = match weights {
        Some(w) => {
            let sample: Vec<u32> = record.prompts.batches.iter().map(|b| b.batch_index).collect();
            verify_inference_sample(d, w, &record.prompts, &record.outputs, &sample)?
        }
        None => missing("inference.mismatched_batches", "declared model weights"),
    };
    c.push("inference", SubgoalId::S1A2, Some(id), v);
    Ok(())
}

/// The power draw the schedule implies, noiseless.
pub fn expected_trace(bundle: &EvidenceBundle, profile: &ComputeProfile, total_ticks: u64) -> ExecutionTrace {
    let mut trace = ExecutionTrace::default();
    for entry in &bundle.schedule {
        let Some(d) = bundle.declarations.iter().find(|d| d.workload_id == entry.workload_id) else { continue };
        if entry.start_tick > trace.len() {
            trace.push_idle(entry.start_tick - trace.len());
        }
        match d.kind {
            WorkloadKind::Training => {
                let per_segment = training_ops_per_item(&d.architecture) * d.batches_per_segment as u64 * d.batch_size as u64;
                for _ in 0..d.segment_count {
                    trace.push_busy(per_segment, profile.ops_per_tick, d.mfu_claimed);
                    trace.push_idle(1);
                }
            }
            WorkloadKind::Inference | WorkloadKind::NonAi => {
                trace.push_busy(d.claimed_model_ops, profile.ops_per_tick, d.mfu_claimed);
            }
        }
    }
    if total_ticks > trace.len() {
        trace.push_idle(total_ticks - trace.len());
    }
    trace
}

fn verify_cluster_use(c: &mut Collector<'_>, bundle: &EvidenceBundle) -> Result<()> {
    let s = SubgoalId::S2A;
    let cfg = c.cfg;
    let model = match &bundle.cluster {
        Some(cl) => Some(EfficiencyModel::from_cluster(cl, cfg.tick_seconds, cfg.noise_sigma)?),
        None => None,
    };
    let estimate = match (&bundle.sensor, &model) {
        (Some(sensor), Some(m)) if !sensor.is_empty() => {
            let end = sensor.samples.last().map_or(0, |x| x.tick + 1);
            Some(estimate_total_ops(sensor, m, 0, end)?)
        }
        _ => None,
    };
    if c.on("accounting") {
        let v = match &estimate {
            Some(est) => {
                let accounted = bundle
                    .declarations
                    .iter()
                    .map(|d| accounted_hw_ops_option_b(d.claimed_model_ops, cfg.accounting.hfu_over_mfu_floor))
                    .collect::<Result<Vec<_>>>()?;
                reconcile_ops(est, &accounted, &cfg.accounting)
            }
            None => missing("accounting.fraction", "power trace or cluster spec"),
        };
        c.push("accounting", s, None, v);
    }
    if c.on("signature") {
        let v = match (&bundle.sensor, &model) {
            (Some(sensor), Some(m)) if !sensor.is_empty() => {
                let expected = expected_trace(bundle, &cfg.profile, sensor.len() as u64);
                let clean = EfficiencyModel { noise_sigma: 0.0, ..m.clone() };
                let expected = simulate_power_trace(&expected, &clean, &Seed::from_u64(0))?;
                match signature_distance_option_c(&expected, sensor, cfg.noise_sigma) {
                    Ok(cmp) => cmp.verdict,
                    Err(e) => Verdict::inconclusive(Evidence::note("signature.nrmse", e.to_string())),
                }
            }
            _ => missing("signature.nrmse", "power trace or cluster spec"),
        };
        c.push("signature", s, None, v);
    }

    let parsed = parsed_certificates(bundle);
    if c.on("certificates") {
        let mut invalid = Vec::new();
        let mut checked = 0usize;
        for (name, bytes) in &bundle.certificates {
            let chip = parsed.iter().find(|(n, _)| n == name).map(|(_, cert)| cert.body.chip_id.clone());
            let key = match &chip {
                Some(id) => bundle.registry.key(id),
                // Unparseable: try every registered key, which all fail.
                None => bundle.registry.chips.first().and_then(|rc| bundle.registry.key(&rc.chip_id)),
            };
            if chip.is_some() && key.is_none() {
                continue; // unregistered chip; the registry check reports it
            }
            checked += 1;
            let ok = key.is_some_and(|k| verify_certificate_bytes(bytes, &k).is_pass());
            if !ok {
                invalid.push(name.clone());
            }
        }
        let v = if checked == 0 {
            missing("certificates.invalid", "certificates")
        } else {
            Verdict::check(
                invalid.is_empty(),
                Evidence::new("certificates.invalid", Measure::label(invalid.join(",")), Measure::None),
            )
            .with(Evidence::new("certificates.checked", Measure::count(checked), Measure::None))
        };
        c.push("certificates", s, None, v);
    }
    if c.on("counters") {
        let v = counter_verdict(bundle, &parsed);
        c.push("counters", s, None, v);
    }
    if c.on("cert_hours") {
        let v = match (&estimate, &bundle.cluster) {
            (Some(est), Some(cl)) if est.gaps.is_empty() => {
                let registered: Vec<WorkloadCertificate> = parsed
                    .iter()
                    .filter(|(_, cert)| bundle.registry.key(&cert.body.chip_id).is_some())
                    .map(|(_, cert)| cert.clone())
                    .collect();
                let upper = Amount::new(est.ops as u128 + est.error_bound as u128, cl.peak_ops_per_hour as u128);
                compute_accounting_link(&registered, upper, cfg.certificate_tolerance)
            }
            _ => missing("certificate.hours_fraction", "gap-free power trace"),
        };
        c.push("cert_hours", s, None, v);
    }
    if c.on("tap") {
        let (correct, complete) = match &bundle.tap {
            Some(tap) => {
                let expected = declared_traffic(bundle, &cfg.profile);
                match expected {
                    Ok(expected) => {
                        let a = analyze_against(tap, &expected);
                        (a.correctness, a.completeness)
                    }
                    Err(e) => {
                        let v = Verdict::inconclusive(Evidence::note("tap.replay_missing", e.to_string()));
                        (v.clone(), v)
                    }
                }
            }
            None => (missing("tap.falsified_messages", "tap log"), missing("tap.undeclared_messages", "tap log")),
        };
        c.push("tap", SubgoalId::S1A1, None, correct);
        c.push("tap", s, None, complete);
    }
    if c.on("fill") {
        let v = match (&bundle.fill, &bundle.cluster) {
            (Some(f), Some(cl)) => check_fill_transcript(f, cl.total_memory_bytes(), cfg.fill_fraction),
            _ => missing("fill.wrong_echoes", "fill transcript"),
        };
        c.push("fill", s, None, v);
    }
    Ok(())
}

/// Messages the declared training schedule implies.
pub fn declared_traffic(bundle: &EvidenceBundle, profile: &ComputeProfile) -> Result<ExpectedTraffic> {
    let mut declared = Vec::new();
    for d in bundle.declarations.iter().filter(|d| d.kind == WorkloadKind::Training) {
        let id = &d.workload_id;
        let (Some(transcript), Some(data), Some(entry)) =
            (bundle.transcripts.get(id), bundle.datasets.get(id), bundle.schedule.iter().find(|e| &e.workload_id == id))
        else {
            return Err(Error::Shape(format!("replay inputs for {id} missing")));
        };
        declared.push(DeclaredTraining { declaration: d, transcript, data, start_tick: entry.start_tick });
    }
    expected_traffic(&declared, profile)
}

fn parsed_certificates(bundle: &EvidenceBundle) -> Vec<(String, WorkloadCertificate)> {
    bundle
        .certificates
        .iter()
        .filter_map(|(name, bytes)| canonical_decode::<WorkloadCertificate>(bytes).ok().map(|c| (name.clone(), c)))
        .collect()
}

fn counter_verdict(bundle: &EvidenceBundle, parsed: &[(String, WorkloadCertificate)]) -> Verdict {
    if bundle.registry.chips.is_empty() {
        return missing("counter.missing", "chip registry");
    }
    let mut passes = Vec::new();
    for chip in &bundle.registry.chips {
        let id = &chip.chip_id;
        let Some(key) = bundle.registry.key(id) else {
            return Verdict::fail(Evidence::note("counter.registry_key", id.clone()));
        };
        let Some(att) = bundle.counters.iter().find(|a| &a.body.chip_id == id) else {
            return Verdict::inconclusive(Evidence::note("counter.attestation", format!("{id}: no counter attestation")));
        };
        let att_check = verify_counter_attestation(att, &key);
        if !att_check.is_pass() {
            return att_check.with(Evidence::note("counter.chip", id.clone()));
        }
        let certs: Vec<WorkloadCertificate> =
            parsed.iter().filter(|(_, c)| &c.body.chip_id == id).map(|(_, c)| c.clone()).collect();
        let v = check_counter_continuity(&certs, att.body.counter);
        if !v.is_pass() {
            return v.with(Evidence::note("counter.chip", id.clone()));
        }
        passes.push(id.clone());
    }
    Verdict::pass(Evidence::new("counter.missing", Measure::label(""), Measure::None)).with(Evidence::new(
        "counter.chips_checked",
        Measure::count(passes.len()),
        Measure::None,
    ))
}

fn verify_chips(c: &mut Collector<'_>, bundle: &EvidenceBundle) -> Result<()> {
    let parsed = parsed_certificates(bundle);
    let observed: Vec<String> = parsed.iter().map(|(_, cert)| cert.body.chip_id.clone()).collect();
    if c.on("registry") {
        let v = if bundle.registry.chips.is_empty() {
            missing("registry.unregistered", "chip registry")
        } else {
            registry_reconcile(&bundle.registry.chip_ids(), &observed, c.cfg.silent_chip_threshold)
        };
        c.push("registry", SubgoalId::S2B1, None, v);
    }
    if c.on("licensing") {
        let licensed: BTreeSet<&str> = bundle.licenses.iter().filter(|e| e.accepted).map(|e| e.chip_id.as_str()).collect();
        let certifying: BTreeSet<&str> = observed.iter().map(String::as_str).collect();
        let unlicensed: Vec<&str> = certifying.difference(&licensed).copied().collect();
        let v = if certifying.is_empty() {
            missing("licensing.unlicensed_chips", "certificates")
        } else {
            Verdict::check(
                unlicensed.is_empty(),
                Evidence::new("licensing.unlicensed_chips", Measure::label(unlicensed.join(",")), Measure::None),
            )
            .with(Evidence::new("licensing.licensed_chips", Measure::count(licensed.len()), Measure::None))
        };
        c.push("licensing", SubgoalId::S2B2, None, v);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Harness
// ---------------------------------------------------------------------------

pub fn verifier_seed_for(seed: u64) -> Seed {
    Seed::from_u64(seed).derive("verifier")
}

/// Prover run plus verification of one scenario.
pub fn run_scenario_with(scenario: &Scenario, world: &WorldConfig, cfg: &VerifierConfig) -> Result<Verification> {
    let run = prove(scenario, world)?;
    verify(&run.bundle, cfg, &verifier_seed_for(scenario.seed))
}

pub fn run_scenario(scenario: &Scenario) -> Result<VerificationReport> {
    Ok(run_scenario_with(scenario, &WorldConfig::default(), &VerifierConfig::default())?.report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub scenario: String,
    pub behavior: String,
    pub trials: u32,
    /// Trials whose overall verdict was non-compliant.
    pub detected: u32,
    pub inconclusive: u32,
    /// Trials in which each mechanism failed at least once.
    pub per_mechanism: BTreeMap<String, u32>,
    /// Trials with at least one failure under each subgoal.
    pub per_subgoal: BTreeMap<SubgoalId, u32>,
}

impl DetectionSummary {
    pub fn rate(&self) -> f64 {
        self.detected as f64 / self.trials as f64
    }

    pub fn mechanism_rate(&self, mechanism: &str) -> f64 {
        self.per_mechanism.get(mechanism).copied().unwrap_or(0) as f64 / self.trials as f64
    }

    fn empty(scenario: &Scenario, trials: u32) -> DetectionSummary {
        DetectionSummary {
            scenario: scenario.name.clone(),
            behavior: scenario.behavior.name().to_string(),
            trials,
            detected: 0,
            inconclusive: 0,
            per_mechanism: MECHANISMS.iter().map(|m| (m.to_string(), 0)).collect(),
            per_subgoal: SubgoalId::ALL.iter().map(|s| (*s, 0)).collect(),
        }
    }

    fn merge(mut self, other: DetectionSummary) -> DetectionSummary {
        self.detected += other.detected;
        self.inconclusive += other.inconclusive;
        for (k, v) in other.per_mechanism {
            *self.per_mechanism.entry(k).or_default() += v;
        }
        for (k, v) in other.per_subgoal {
            *self.per_subgoal.entry(k).or_default() += v;
        }
        self
    }
}

/// Seed of trial `i` of a template.
pub fn trial_seed(template_seed: u64, trial: u32) -> u64 {
    let s = Seed::from_u64(template_seed).derive(&format!("trial/{trial}"));
    u64::from_be_bytes(s.0[..8].try_into().expect("8 bytes"))
}

/// Runs `trials` independently seeded copies of `template` in parallel and
/// counts detections per mechanism and per subgoal.
pub fn detection_rate(template: &Scenario, trials: u32, world: &WorldConfig, cfg: &VerifierConfig) -> Result<DetectionSummary> {
    if trials == 0 {
        return Err(Error::OutOfRange("at least one trial is required".into()));
    }
    template.validate()?;
    (0..trials)
        .into_par_iter()
        .map(|i| {
            let scenario = Scenario { seed: trial_seed(template.seed, i), ..template.clone() };
            let v = run_scenario_with(&scenario, world, cfg)?;
            let mut one = DetectionSummary::empty(template, trials);
            match v.report.overall {
                crate::model::Overall::NonCompliant => one.detected = 1,
                crate::model::Overall::Inconclusive => one.inconclusive = 1,
                crate::model::Overall::Compliant => {}
            }
            for m in v.failing_mechanisms() {
                *one.per_mechanism.entry(m.to_string()).or_default() = 1;
            }
            for s in SubgoalId::ALL {
                one.per_subgoal.insert(s, v.report.has_fail(s) as u32);
            }
            Ok(one)
        })
        .try_reduce(|| DetectionSummary::empty(template, trials), |a, b| Ok(a.merge(b)))
}

/// Attack with the lowest overall detection rate.
pub fn weakest_link(summaries: &[DetectionSummary]) -> Option<(&str, f64)> {
    summaries
        .iter()
        .filter(|s| s.behavior != "honest")
        .map(|s| (s.scenario.as_str(), s.rate()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// One scenario per behavior at its default magnitude.
pub fn attack_catalog(seed: u64) -> Vec<Scenario> {
    vec![
        Scenario::honest(seed),
        Scenario::new("glue", ProverBehavior::Glue { boundary: 4 }, seed),
        Scenario::new("precomputed_weights", ProverBehavior::PrecomputedWeights, seed),
        Scenario::new("duplicate_inflation", ProverBehavior::DuplicateInflation { copies: 2 }, seed),
        Scenario::new(
            "undeclared_extra_workload",
            ProverBehavior::UndeclaredExtraWorkload { fraction: Rational::new(1, 5) },
            seed,
        ),
        Scenario::new("covert_traffic", ProverBehavior::CovertTraffic { messages: 10 }, seed),
        Scenario::new("deleted_certificate", ProverBehavior::DeletedCertificate { index: 5 }, seed),
        Scenario::new("hidden_chips", ProverBehavior::HiddenChips { count: 2 }, seed),
        Scenario::new("hidden_memory", ProverBehavior::HiddenMemory { fraction: Rational::new(1, 5) }, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Overall;

    fn verification(behavior: ProverBehavior, seed: u64) -> Verification {
        run_scenario_with(&Scenario::new("t", behavior, seed), &WorldConfig::default(), &VerifierConfig::default()).unwrap()
    }

    fn not_passing(v: &Verification) -> Vec<String> {
        v.outcomes.iter().filter(|o| o.status != Status::Pass).map(|o| format!("{}:{:?}", o.mechanism, o.status)).collect()
    }

    #[test]
    fn honest_world_is_compliant() {
        let v = verification(ProverBehavior::Honest, 1);
        assert!(not_passing(&v).is_empty(), "{:?}", not_passing(&v));
        assert_eq!(v.report.overall, Overall::Compliant);
    }

    #[test]
    fn glue_fails_training_subgoal_in_two_modules() {
        let v = verification(ProverBehavior::Glue { boundary: 4 }, 2);
        assert_eq!(v.report.overall, Overall::NonCompliant);
        assert!(v.report.has_fail(SubgoalId::S1A1));
        let failing = v.failing_mechanisms();
        assert!(failing.contains("glue"), "{failing:?}");
        assert!(failing.contains("tap"), "{failing:?}");
    }

    #[test]
    fn deleted_certificate_breaks_counter_continuity() {
        let v = verification(ProverBehavior::DeletedCertificate { index: 3 }, 3);
        assert_eq!(v.report.overall, Overall::NonCompliant);
        assert!(v.report.has_fail(SubgoalId::S2A));
        let failing = v.failing_mechanisms();
        assert!(failing.contains("counters"), "{failing:?}");
        let counters = v.report.verdicts(SubgoalId::S2A).iter().find(|x| x.check_name() == Some("counter.missing")).unwrap();
        assert!(counters.is_fail());
    }

    #[test]
    fn undeclared_work_fails_accounting_and_tap() {
        let v = verification(ProverBehavior::UndeclaredExtraWorkload { fraction: Rational::new(1, 5) }, 4);
        let failing = v.failing_mechanisms();
        for m in ["accounting", "signature", "cert_hours", "tap"] {
            assert!(failing.contains(m), "{m} missing from {failing:?}");
        }
    }

    #[test]
    fn each_attack_is_caught_by_its_mechanism() {
        let cases = [
            (ProverBehavior::PrecomputedWeights, "init_order", SubgoalId::S1A1),
            (ProverBehavior::DuplicateInflation { copies: 2 }, "duplicates", SubgoalId::S1A1),
            (ProverBehavior::CovertTraffic { messages: 40 }, "tap", SubgoalId::S2A),
            (ProverBehavior::HiddenChips { count: 2 }, "registry", SubgoalId::S2B1),
            (ProverBehavior::HiddenChips { count: 2 }, "licensing", SubgoalId::S2B2),
            (ProverBehavior::HiddenMemory { fraction: Rational::new(1, 5) }, "fill", SubgoalId::S2A),
        ];
        for (behavior, mechanism, subgoal) in cases {
            let v = verification(behavior.clone(), 5);
            assert!(v.failing_mechanisms().contains(mechanism), "{behavior:?}: {:?}", v.failing_mechanisms());
            assert!(v.report.has_fail(subgoal), "{behavior:?}");
        }
    }

    #[test]
    fn missing_tap_log_is_inconclusive_for_tap_only() {
        let mut run = prove(&Scenario::honest(6), &WorldConfig::default()).unwrap();
        run.bundle.tap = None;
        let v = verify(&run.bundle, &VerifierConfig::default(), &verifier_seed_for(6)).unwrap();
        assert_eq!(v.status_of("tap"), vec![Status::Inconclusive, Status::Inconclusive]);
        assert_eq!(v.report.overall, Overall::Compliant);
        let only_tap = verify(&run.bundle, &VerifierConfig::only(&["tap"]).unwrap(), &verifier_seed_for(6)).unwrap();
        assert_eq!(only_tap.report.overall, Overall::Inconclusive);
    }

    #[test]
    fn toggles_disable_mechanisms() {
        let mut cfg = VerifierConfig::default();
        cfg.set("glue", false).unwrap();
        cfg.set("tap", false).unwrap();
        cfg.set("faithfulness", false).unwrap();
        cfg.set("structure", false).unwrap();
        let run = prove(&Scenario::new("g", ProverBehavior::Glue { boundary: 4 }, 7), &WorldConfig::default()).unwrap();
        let v = verify(&run.bundle, &cfg, &verifier_seed_for(7)).unwrap();
        assert!(v.status_of("glue").is_empty());
        assert!(!v.failing_mechanisms().contains("tap"));
        assert!(cfg.set("no-such-mechanism", true).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let a = run_scenario(&Scenario::honest(8)).unwrap();
        let b = run_scenario(&Scenario::honest(8)).unwrap();
        assert_eq!(crate::model::canonical_encode(&a).unwrap(), crate::model::canonical_encode(&b).unwrap());
    }

    #[test]
    fn scenario_parsing_and_ranges() {
        let s = Scenario::from_json(br#"{"name":"g","behavior":"glue","boundary":3,"seed":1}"#).unwrap();
        assert_eq!(s.behavior, ProverBehavior::Glue { boundary: 3 });
        assert!(matches!(Scenario::from_json(br#"{"name":"x","behavior":"teleport"}"#), Err(Error::UnknownBehavior(_))));
        assert!(Scenario::from_json(br#"{"name":"g","behavior":"glue","boundary":10}"#).is_err());
        assert!(Scenario::from_json(br#"{"name":"m","behavior":"hidden_memory","fraction":[1,1]}"#).is_err());
        let f = Scenario::from_json(br#"{"name":"u","behavior":"undeclared_extra_workload","fraction":[1,5]}"#).unwrap();
        assert_eq!(f.behavior, ProverBehavior::UndeclaredExtraWorkload { fraction: Rational::new(1, 5) });
    }

    #[test]
    fn bundle_round_trips_through_files() {
        let run = prove(&Scenario::honest(9), &WorldConfig::default()).unwrap();
        let dir = std::env::temp_dir().join(format!("verifsim-bundle-{}", std::process::id()));
        run.bundle.write_dir(&dir).unwrap();
        let back = EvidenceBundle::read_dir(&dir).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back, run.bundle);
    }

    #[test]
    fn capability_ceiling_separates_task_training() {
        let bench = restricted_benchmark(&crate::detnet::fixtures::ARCHITECTURE, 8);
        let decl = training_declaration_with(Seed::from_u64(3), OptimizerFamily::Sgd);
        let data = training_data_for(&decl.master_seed);
        let honest = Engine::default().run_training(&decl, &data).unwrap();
        assert!(evaluate_properties(honest.final_weights(), &bench.batches, DEFAULT_CAPABILITY_CEILING).unwrap().is_pass());

        let mut capable = decl.clone();
        capable.segment_count = 100;
        let task = Dataset {
            batches: task_batches(&Seed::from_u64(BENCHMARK_SEED), &capable.architecture, 0..400, 8, TaskKind::Teacher),
        };
        let run = Engine::default().run_training(&capable, &task).unwrap();
        assert!(evaluate_properties(run.final_weights(), &bench.batches, DEFAULT_CAPABILITY_CEILING).unwrap().is_fail());
    }

    #[test]
    fn summary_counts_bounded_by_trials() {
        let s = detection_rate(
            &Scenario::new("c", ProverBehavior::CovertTraffic { messages: 10 }, 1),
            4,
            &WorldConfig::default(),
            &VerifierConfig::only(&["tap"]).unwrap(),
        )
        .unwrap();
        assert_eq!(s.trials, 4);
        assert!(s.detected <= 4 && s.per_mechanism.values().all(|&n| n <= 4));
        assert_eq!(s.per_mechanism["tap"], s.detected);
    }
}
