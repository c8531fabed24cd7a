//! Inter-node traffic of data-parallel training, tap sampling, tap-log
//! analysis against a replay of the declared schedule, and the memory fill
//! challenge.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detnet::net::{backward_wide, training_ops_per_item, Batch, Dataset};
use crate::detnet::prng::PrngStream;
use crate::detnet::{Checkpoint, ComputeProfile, Engine, ExecutionTrace, Fixed, TrainingTranscript};
use crate::error::{Error, Result};
use crate::model::{canonical_encode, commit, Digest, Evidence, Measure, Rational, Seed, Verdict, WorkloadDeclaration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    GradientAllreduce,
    WeightBroadcast,
    DataShard,
    Other,
}

/// Hex digests elsewhere; tap files carry base64 commitments.
mod b64_digest {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{de, Deserialize, Deserializer, Serializer};

    use crate::model::Digest;

    pub fn serialize<S: Serializer>(d: &Digest, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(d.as_bytes()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Digest, D::Error> {
        let s = String::deserialize(d)?;
        let raw = STANDARD.decode(&s).map_err(de::Error::custom)?;
        let bytes: [u8; 32] = raw.try_into().map_err(|_| de::Error::custom("commitment must be 32 bytes"))?;
        Ok(Digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterMessage {
    pub tick: u64,
    pub src_node: u32,
    pub dst_node: u32,
    pub kind: MessageKind,
    #[serde(with = "b64_digest")]
    pub payload_commitment: Digest,
    pub payload_bytes: u64,
}

impl ClusterMessage {
    fn key(&self) -> (u64, u32, u32, MessageKind) {
        (self.tick, self.src_node, self.dst_node, self.kind)
    }
}

/// What one node contributes to a segment's all-reduce: a commitment to
/// its shard of every batch and its wide gradient at every step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPayload {
    pub input_commitment: Digest,
    pub step_gradients: Vec<Vec<Vec<i64>>>,
}

pub fn message(tick: u64, src: u32, dst: u32, kind: MessageKind, payload: &[u8]) -> ClusterMessage {
    ClusterMessage {
        tick,
        src_node: src,
        dst_node: dst,
        kind,
        payload_commitment: commit(payload),
        payload_bytes: payload.len() as u64,
    }
}

/// Ticks one segment occupies: busy ticks plus the communication tick.
pub fn segment_ticks(declaration: &WorkloadDeclaration, profile: &ComputeProfile) -> u64 {
    let items = declaration.batches_per_segment as u64 * declaration.batch_size as u64;
    let ops = training_ops_per_item(&declaration.architecture) * items;
    let mut trace = ExecutionTrace::default();
    trace.push_busy(ops, profile.ops_per_tick, profile.training_utilization);
    trace.len() + 1
}

/// Messages of one segment, replayed from `start`. Also returns the
/// checkpoint the segment ends at.
pub fn segment_messages(
    declaration: &WorkloadDeclaration,
    start: &Checkpoint,
    batches: &[&Batch],
    nodes: u32,
    comm_tick: u64,
) -> Result<(Vec<ClusterMessage>, Checkpoint)> {
    let n = nodes as usize;
    if nodes < 2 || !declaration.batch_size.is_multiple_of(nodes) {
        return Err(Error::Shape(format!("{nodes} nodes cannot shard batches of {}", declaration.batch_size)));
    }
    let per = declaration.batch_size as usize / n;
    let mut weights = start.weights.clone();
    let mut state = start.optimizer_state.clone();
    let mut shard_inputs: Vec<Vec<Vec<Fixed>>> = vec![Vec::new(); n];
    let mut grads: Vec<Vec<Vec<Vec<i64>>>> = vec![Vec::new(); n];
    let mut engine = Engine::default();
    for batch in batches {
        for k in 0..n {
            let shard = batch.slice_items(k * per, (k + 1) * per);
            grads[k].push(backward_wide(&weights, &shard)?.layers);
            shard_inputs[k].push(shard.inputs);
        }
        engine.train_step(&mut weights, &mut state, batch, declaration)?;
    }
    let mut msgs = Vec::with_capacity(2 * n - 1);
    for k in 0..n {
        let payload = ShardPayload {
            input_commitment: commit(&canonical_encode(&shard_inputs[k])?),
            step_gradients: std::mem::take(&mut grads[k]),
        };
        msgs.push(message(
            comm_tick,
            k as u32,
            ((k + 1) % n) as u32,
            MessageKind::GradientAllreduce,
            &canonical_encode(&payload)?,
        ));
    }
    let end = Checkpoint::new(start.step_index + 1, weights, state, start.rng_cursor + batches.len() as u64);
    let weights_bytes = canonical_encode(&end.weights)?;
    for dst in 1..nodes {
        msgs.push(message(comm_tick, 0, dst, MessageKind::WeightBroadcast, &weights_bytes));
    }
    Ok((msgs, end))
}

/// Full message stream of a training run that starts at `start_tick`,
/// replayed segment by segment from the given checkpoints.
pub fn emit_training_messages(
    declaration: &WorkloadDeclaration,
    checkpoints: &[Checkpoint],
    batch_order: &[u32],
    data: &Dataset,
    profile: &ComputeProfile,
    start_tick: u64,
) -> Result<Vec<ClusterMessage>> {
    let per_segment = segment_ticks(declaration, profile);
    let bps = declaration.batches_per_segment as usize;
    let segments: Vec<Vec<ClusterMessage>> = (0..declaration.segment_count as usize)
        .into_par_iter()
        .map(|i| {
            let start = checkpoints
                .iter()
                .find(|c| c.step_index == i as u32)
                .ok_or_else(|| Error::Shape(format!("checkpoint {i} missing")))?;
            let slice: Vec<&Batch> = batch_order
                .get(i * bps..(i + 1) * bps)
                .ok_or_else(|| Error::Shape("batch order too short".into()))?
                .iter()
                .map(|&b| data.get(b).ok_or_else(|| Error::Shape(format!("batch {b} missing"))))
                .collect::<Result<_>>()?;
            let tick = start_tick + (i as u64 + 1) * per_segment - 1;
            Ok(segment_messages(declaration, start, &slice, profile.nodes, tick)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(segments.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapEntry {
    /// Position of the message in the full stream.
    pub index: u64,
    pub message: ClusterMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapLog {
    pub sample_rate: Rational,
    pub tap_seed: Seed,
    /// Payloads were encrypted on the wire.
    pub encrypted: bool,
    /// The Verifier holds the keys to encrypted payloads.
    pub key_escrow: bool,
    pub entries: Vec<TapEntry>,
}

/// Keeps message `i` iff the `i`-th draw of `(tap_seed, "tap")` falls below
/// `p * 2^64`.
pub fn tap_sample(stream: &[ClusterMessage], p: Rational, tap_seed: &Seed) -> Result<TapLog> {
    if *p.numer() == 0 || p > Rational::from_integer(1) {
        return Err(Error::OutOfRange(format!("tap rate {p} outside (0, 1]")));
    }
    let draws = PrngStream::new(tap_seed, "tap");
    let keep = |i: u64| (draws.draw_at(i) as u128) * (*p.denom() as u128) < (*p.numer() as u128) << 64;
    let entries = stream
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i as u64))
        .map(|(i, m)| TapEntry { index: i as u64, message: m.clone() })
        .collect();
    Ok(TapLog { sample_rate: p, tap_seed: *tap_seed, encrypted: false, key_escrow: false, entries })
}

/// Outcome of tap-log analysis on the two channels it informs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapAnalysis {
    /// Sampled messages whose content disagrees with the replay.
    pub correctness: Verdict,
    /// Sampled messages the declared schedule does not explain.
    pub completeness: Verdict,
}

/// One declared training workload as the Verifier replays it.
pub struct DeclaredTraining<'a> {
    pub declaration: &'a WorkloadDeclaration,
    pub transcript: &'a TrainingTranscript,
    pub data: &'a Dataset,
    pub start_tick: u64,
}

fn indices(list: &[u64]) -> String {
    list.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

/// Messages the declared schedule implies, keyed by `(tick, src, dst, kind)`.
#[derive(Debug, Clone, Default)]
pub struct ExpectedTraffic {
    messages: BTreeMap<(u64, u32, u32, MessageKind), ClusterMessage>,
}

impl ExpectedTraffic {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// Replays every declared training workload from its transcript.
pub fn expected_traffic(declared: &[DeclaredTraining<'_>], profile: &ComputeProfile) -> Result<ExpectedTraffic> {
    let mut messages = BTreeMap::new();
    for d in declared {
        let msgs = emit_training_messages(
            d.declaration,
            &d.transcript.checkpoints,
            &d.transcript.batch_order,
            d.data,
            profile,
            d.start_tick,
        )?;
        messages.extend(msgs.into_iter().map(|m| (m.key(), m)));
    }
    Ok(ExpectedTraffic { messages })
}

fn both_inconclusive(ev: Evidence, sampled: Evidence) -> TapAnalysis {
    TapAnalysis {
        correctness: Verdict::inconclusive(ev.clone()).with(sampled.clone()),
        completeness: Verdict::inconclusive(ev).with(sampled),
    }
}

/// Compares every sampled message against already replayed traffic.
pub fn analyze_against(tap: &TapLog, expected: &ExpectedTraffic) -> TapAnalysis {
    let sampled = Evidence::new("tap.sampled_messages", Measure::count(tap.entries.len()), Measure::None);
    if tap.encrypted && !tap.key_escrow {
        return both_inconclusive(Evidence::note("tap.encrypted", "payloads encrypted without key escrow"), sampled);
    }
    let mut falsified = Vec::new();
    let mut undeclared = Vec::new();
    for e in &tap.entries {
        match expected.messages.get(&e.message.key()) {
            None => undeclared.push(e.index),
            Some(m) if *m != e.message => falsified.push(e.index),
            Some(_) => {}
        }
    }
    let correctness = Verdict::check(
        falsified.is_empty(),
        Evidence::new("tap.falsified_messages", Measure::label(indices(&falsified)), Measure::None),
    )
    .with(sampled.clone());
    let completeness = Verdict::check(
        undeclared.is_empty(),
        Evidence::new("tap.undeclared_messages", Measure::label(indices(&undeclared)), Measure::None),
    )
    .with(sampled);
    TapAnalysis { correctness, completeness }
}

/// Compares every sampled message against the declared schedule. Replay
/// failures leave both channels inconclusive.
pub fn analyze_tap_log(tap: &TapLog, declared: &[DeclaredTraining<'_>], profile: &ComputeProfile) -> Result<TapAnalysis> {
    if tap.encrypted && !tap.key_escrow {
        return Ok(analyze_against(tap, &ExpectedTraffic::default()));
    }
    match expected_traffic(declared, profile) {
        Ok(expected) => Ok(analyze_against(tap, &expected)),
        Err(e) => Ok(both_inconclusive(
            Evidence::note("tap.replay_missing", e.to_string()),
            Evidence::new("tap.sampled_messages", Measure::count(tap.entries.len()), Measure::None),
        )),
    }
}

/// Probability that at least one of `m` covert messages is sampled.
pub fn covert_detection_probability(p: f64, m: u32) -> f64 {
    1.0 - (1.0 - p).powi(m as i32)
}

/// Memory actually available on a cluster; a Prover hiding weights keeps
/// `hidden_bytes` of it occupied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterMemory {
    pub declared_bytes: u64,
    pub hidden_bytes: u64,
}

pub const FILL_BLOCK_BYTES: u64 = 64 * 1024;

/// The Prover's answers to a fill challenge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillTranscript {
    pub challenge_seed: Seed,
    pub block_bytes: u64,
    pub block_count: u64,
    /// Hash of each block together with the post-upload nonce.
    pub echoes: Vec<Digest>,
}

fn fill_block_count(declared_bytes: u64, fill_fraction: Rational) -> u64 {
    (declared_bytes as u128 * *fill_fraction.numer() as u128 / *fill_fraction.denom() as u128 / FILL_BLOCK_BYTES as u128) as u64
}

fn block_echo(seed: &Seed, index: u64) -> Digest {
    let stream = PrngStream::new(seed, &format!("fill/{index}"));
    let mut bytes = Vec::with_capacity(FILL_BLOCK_BYTES as usize + 32);
    for w in 0..FILL_BLOCK_BYTES / 8 {
        bytes.extend_from_slice(&stream.draw_at(w).to_be_bytes());
    }
    bytes.extend_from_slice(seed.derive("fill-nonce").as_bytes());
    commit(&bytes)
}

/// The Prover's side: store what fits, echo what was stored. Blocks that
/// did not fit can only be guessed.
pub fn run_fill_challenge(memory: &ClusterMemory, challenge_seed: &Seed, fill_fraction: Rational) -> FillTranscript {
    let count = fill_block_count(memory.declared_bytes, fill_fraction);
    let free = memory.declared_bytes.saturating_sub(memory.hidden_bytes) / FILL_BLOCK_BYTES;
    let echoes = (0..count)
        .into_par_iter()
        .map(|i| if i < free { block_echo(challenge_seed, i) } else { commit(b"evicted block") })
        .collect();
    FillTranscript { challenge_seed: *challenge_seed, block_bytes: FILL_BLOCK_BYTES, block_count: count, echoes }
}

/// The Verifier's side.
pub fn check_fill_transcript(transcript: &FillTranscript, declared_bytes: u64, fill_fraction: Rational) -> Verdict {
    let count = fill_block_count(declared_bytes, fill_fraction);
    if count == 0 {
        return Verdict::inconclusive(Evidence::new("fill.blocks", Measure::count(0), Measure::None));
    }
    if transcript.block_count != count || transcript.echoes.len() as u64 != count {
        return Verdict::fail(Evidence::new("fill.blocks", Measure::count(transcript.echoes.len()), Measure::count(count)));
    }
    let wrong = transcript
        .echoes
        .par_iter()
        .enumerate()
        .filter(|(i, e)| block_echo(&transcript.challenge_seed, *i as u64) != **e)
        .count();
    Verdict::check(wrong == 0, Evidence::new("fill.wrong_echoes", Measure::count(wrong), Measure::count(0))).with(Evidence::new(
        "fill.blocks",
        Measure::count(count),
        Measure::None,
    ))
}

pub fn memory_fill_challenge(memory: &ClusterMemory, challenge_seed: &Seed, fill_fraction: Rational) -> Verdict {
    let transcript = run_fill_challenge(memory, challenge_seed, fill_fraction);
    check_fill_transcript(&transcript, memory.declared_bytes, fill_fraction)
}
