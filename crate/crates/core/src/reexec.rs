//! Verifier-side partial re-execution of declared workloads, cheap
//! constraint checks over whole transcripts, and property evaluation of
//! declared models.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detnet::data::{synthetic_batches_from, TaskKind};
use crate::detnet::engine::{infer_batch, initial_checkpoint, permute_data_order, BatchOutput, Checkpoint};
use crate::detnet::net::{forward_batch, inference_ops_per_item, training_ops_per_item, Batch, Dataset, Weights};
use crate::detnet::optim::max_step_raw;
use crate::detnet::prng::PrngStream;
use crate::detnet::{ComputeProfile, Engine, TrainingTranscript};
use crate::error::{Error, Result};
use crate::model::{Evidence, Measure, Rational, Seed, Verdict, WorkloadDeclaration, WorkloadKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSample {
    /// Sorted, distinct segment indices.
    pub indices: Vec<u32>,
    pub verifier_seed: Seed,
}

/// Which cheap whole-transcript constraints to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSuite {
    pub init_check: bool,
    pub order_check: bool,
    pub memorization_check: bool,
    pub continuity_check: bool,
    pub optimizer_check: bool,
    pub duplicate_check: bool,
}

impl Default for ConstraintSuite {
    fn default() -> Self {
        ConstraintSuite {
            init_check: true,
            order_check: true,
            memorization_check: true,
            continuity_check: true,
            optimizer_check: true,
            duplicate_check: true,
        }
    }
}

/// Draws `k` distinct segments uniformly via a partial Fisher-Yates shuffle.
pub fn select_segments(segment_count: u32, verifier_seed: &Seed, k: u32) -> Result<SegmentSample> {
    if k == 0 || k > segment_count {
        return Err(Error::OutOfRange(format!("sample size {k} for {segment_count} segments")));
    }
    let mut pool: Vec<u32> = (0..segment_count).collect();
    let mut stream = PrngStream::new(verifier_seed, "segments");
    for i in 0..k as usize {
        let j = i + stream.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    let mut indices = pool[..k as usize].to_vec();
    indices.sort_unstable();
    Ok(SegmentSample { indices, verifier_seed: *verifier_seed })
}

/// How the Verifier replays segments.
#[derive(Debug, Clone)]
pub struct Replayer {
    pub profile: ComputeProfile,
    /// Per-operation fault rate of the Verifier's own hardware; 0 disables.
    pub fault_rate: f64,
    pub fault_seed: Seed,
}

impl Default for Replayer {
    fn default() -> Self {
        Replayer { profile: ComputeProfile::default(), fault_rate: 0.0, fault_seed: Seed::from_u64(0) }
    }
}

impl Replayer {
    fn engine(&self, segment: u32, attempt: u32) -> Engine {
        let engine = Engine::new(self.profile.clone());
        if self.fault_rate > 0.0 {
            engine.with_faults(self.fault_rate, &self.fault_seed.derive(&format!("replay/{segment}/{attempt}")))
        } else {
            engine
        }
    }

    fn faults_enabled(&self) -> bool {
        self.fault_rate > 0.0
    }
}

enum SegmentOutcome {
    Match,
    Mismatch { checkpoint: u32 },
    Missing(String),
}

fn segment_batches<'a>(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &'a Dataset,
    segment: u32,
) -> std::result::Result<Vec<&'a Batch>, String> {
    let order = transcript
        .segment_batches(segment as usize, declaration.batches_per_segment)
        .ok_or_else(|| format!("batch order does not cover segment {segment}"))?;
    order.iter().map(|&b| data.get(b).ok_or_else(|| format!("batch {b} of segment {segment} not provided"))).collect()
}

fn replay_segment(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &Dataset,
    segment: u32,
    replayer: &Replayer,
) -> Result<SegmentOutcome> {
    let Some(start) = transcript.checkpoint(segment) else {
        return Ok(SegmentOutcome::Missing(format!("checkpoint {segment} not provided")));
    };
    let Some(expected) = transcript.commitments.get(segment as usize + 1) else {
        return Ok(SegmentOutcome::Missing(format!("commitment {} not provided", segment + 1)));
    };
    if !start.is_self_consistent() || transcript.commitments[segment as usize] != start.commitments() {
        return Ok(SegmentOutcome::Mismatch { checkpoint: segment });
    }
    let slice = match segment_batches(declaration, transcript, data, segment) {
        Ok(s) => s,
        Err(msg) => return Ok(SegmentOutcome::Missing(msg)),
    };
    let attempts = if replayer.faults_enabled() { 2 } else { 1 };
    for attempt in 0..attempts {
        let out = replayer.engine(segment, attempt).train_segment(start, &slice, declaration)?;
        if out.checkpoint.commitments() == *expected {
            return Ok(SegmentOutcome::Match);
        }
    }
    Ok(SegmentOutcome::Mismatch { checkpoint: segment + 1 })
}

/// Replays each sampled segment from its starting checkpoint and requires
/// an exact commitment match at its end.
pub fn verify_faithfulness(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &Dataset,
    sample: &SegmentSample,
    replayer: &Replayer,
) -> Result<Verdict> {
    let outcomes: Vec<(u32, SegmentOutcome)> = sample
        .indices
        .par_iter()
        .map(|&s| replay_segment(declaration, transcript, data, s, replayer).map(|o| (s, o)))
        .collect::<Result<_>>()?;
    let mut mismatched = BTreeSet::new();
    let mut missing = Vec::new();
    for (segment, outcome) in &outcomes {
        match outcome {
            SegmentOutcome::Match => {}
            SegmentOutcome::Mismatch { checkpoint } => {
                mismatched.insert(*checkpoint);
                log::debug!("segment {segment} replay disagrees at checkpoint {checkpoint}");
            }
            SegmentOutcome::Missing(msg) => missing.push(msg.clone()),
        }
    }
    let sampled = Evidence::new("faithfulness.segments_replayed", Measure::count(outcomes.len()), Measure::None);
    let inconsistent: Vec<String> = transcript
        .checkpoints
        .iter()
        .enumerate()
        .filter(|(i, c)| !c.is_self_consistent() || transcript.commitments.get(*i) != Some(&c.commitments()))
        .map(|(i, _)| i.to_string())
        .collect();
    if !inconsistent.is_empty() {
        return Ok(Verdict::fail(Evidence::note("faithfulness.inconsistent_checkpoints", inconsistent.join(","))).with(sampled));
    }
    if let Some(&first) = mismatched.iter().next() {
        let list = mismatched.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        return Ok(Verdict::fail(Evidence::new("faithfulness.mismatched_checkpoint", Measure::count(first), Measure::count(0)))
            .with(Evidence::note("faithfulness.mismatched_checkpoints", list))
            .with(sampled));
    }
    if !missing.is_empty() {
        return Ok(Verdict::inconclusive(Evidence::note("faithfulness.missing_data", missing.join("; "))).with(sampled));
    }
    Ok(Verdict::pass(Evidence::new("faithfulness.mismatched_checkpoints", Measure::count(0), Measure::count(0))).with(sampled))
}

/// Recomputes the seed-derived initialization and data order.
pub fn verify_init_and_order(declaration: &WorkloadDeclaration, transcript: &TrainingTranscript) -> Result<Verdict> {
    let init = initial_checkpoint(declaration)?;
    let init_ok = transcript.commitments.first() == Some(&init.commitments());
    let order = permute_data_order(declaration.total_batches(), &declaration.master_seed);
    let first_diff = order
        .iter()
        .zip(&transcript.batch_order)
        .position(|(a, b)| a != b)
        .or_else(|| (order.len() != transcript.batch_order.len()).then_some(order.len().min(transcript.batch_order.len())));
    let init_ev = Evidence::new("init.seed_derived", Measure::count(init_ok as i64), Measure::count(1));
    let order_ev = match first_diff {
        None => Evidence::new("order.first_deviation", Measure::None, Measure::None),
        Some(i) => Evidence::new("order.first_deviation", Measure::count(i), Measure::None),
    };
    let ok = init_ok && first_diff.is_none();
    let verdict = if init_ok { Verdict::check(ok, order_ev).with(init_ev) } else { Verdict::fail(init_ev).with(order_ev) };
    Ok(verdict)
}

fn total_loss(weights: &Weights, batches: &[&Batch]) -> Result<i64> {
    batches.iter().map(|b| forward_batch(weights, b).map(|o| o.loss.raw() as i64)).sum()
}

/// Loss on recently seen data must fall by a larger fraction than loss on
/// unseen data. Fractions rather than absolute drops, so that a recent set
/// that happens to start with a low loss is not penalized. `margin_ppm` is
/// in millionths of the starting loss.
pub fn memorization_check(
    before: &Checkpoint,
    after: &Checkpoint,
    recent: &[&Batch],
    holdout: &[&Batch],
    margin_ppm: i64,
) -> Result<Verdict> {
    let (rb, ra) = (total_loss(&before.weights, recent)? as i128, total_loss(&after.weights, recent)? as i128);
    let (hb, ha) = (total_loss(&before.weights, holdout)? as i128, total_loss(&after.weights, holdout)? as i128);
    let unscored =
        |gap: Measure| Verdict::inconclusive(Evidence::new("memorization.relative_gap_ppm", gap, Measure::count(margin_ppm)));
    if rb <= 0 || hb <= 0 {
        return Ok(unscored(Measure::None));
    }
    // (rb - ra) / rb - (hb - ha) / hb, in ppm, cross-multiplied to stay exact.
    let scaled = ((rb - ra) * hb - (hb - ha) * rb) * 1_000_000;
    let gap_ppm = scaled.div_euclid(rb * hb);
    if ra == rb && ha == hb {
        return Ok(unscored(Measure::count(0)));
    }
    let ev = Evidence::new("memorization.relative_gap_ppm", Measure::count(gap_ppm as i64), Measure::count(margin_ppm));
    Ok(Verdict::check(scaled > margin_ppm as i128 * rb * hb, ev))
}

/// Settings for the boundary checks in [`detect_glue`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlueConfig {
    /// Memorization margin in millionths of the starting loss.
    pub margin: i64,
    /// Seed for the Verifier's private holdout batches.
    pub holdout_seed: Seed,
    pub holdout_batches: u32,
    pub suite: ConstraintSuite,
}

impl Default for GlueConfig {
    fn default() -> Self {
        GlueConfig {
            margin: 0,
            holdout_seed: Seed::from_u64(0).derive("holdout"),
            holdout_batches: 16,
            suite: ConstraintSuite::default(),
        }
    }
}

/// Per-boundary outcome of [`detect_glue`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryCheck {
    pub boundary: u32,
    pub memorization: Option<Verdict>,
    pub step_raw: Option<i64>,
}

/// Runs the memorization and continuity checks at every segment boundary.
/// Boundary `i` joins checkpoint `i` to checkpoint `i + 1`.
pub fn glue_boundaries(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &Dataset,
    config: &GlueConfig,
) -> Result<Vec<BoundaryCheck>> {
    let holdout = synthetic_batches_from(
        &config.holdout_seed,
        &declaration.architecture,
        u32::MAX / 2,
        config.holdout_batches,
        declaration.batch_size,
        TaskKind::Random,
    );
    let holdout: Vec<&Batch> = holdout.iter().collect();
    (0..transcript.segment_count() as u32)
        .into_par_iter()
        .map(|i| {
            let (Some(before), Some(after)) = (transcript.checkpoint(i), transcript.checkpoint(i + 1)) else {
                return Ok(BoundaryCheck { boundary: i, memorization: None, step_raw: None });
            };
            let step_raw = config.suite.continuity_check.then(|| before.weights.max_abs_diff(&after.weights));
            let memorization = match segment_batches(declaration, transcript, data, i) {
                Ok(recent) if config.suite.memorization_check => {
                    Some(memorization_check(before, after, &recent, &holdout, config.margin)?)
                }
                _ => None,
            };
            Ok(BoundaryCheck { boundary: i, memorization, step_raw })
        })
        .collect()
}

/// Flags boundaries where the transcript looks like pieces of different
/// runs glued together.
pub fn detect_glue(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &Dataset,
    config: &GlueConfig,
) -> Result<Verdict> {
    if transcript.segment_count() < 2 {
        return Ok(Verdict::inconclusive(Evidence::new(
            "glue.segments",
            Measure::count(transcript.segment_count()),
            Measure::count(2),
        )));
    }
    let bound =
        declaration.batches_per_segment as i64 * max_step_raw(&declaration.optimizer_family, &declaration.optimizer_params)?;
    let checks = glue_boundaries(declaration, transcript, data, config)?;
    let mut offending = Vec::new();
    let mut unchecked = 0;
    for c in &checks {
        let mem_fail = c.memorization.as_ref().is_some_and(Verdict::is_fail);
        let jump = c.step_raw.is_some_and(|s| s > bound);
        if mem_fail || jump {
            offending.push(c.boundary);
        }
        if c.step_raw.is_none() && c.memorization.as_ref().is_none_or(Verdict::is_inconclusive) {
            unchecked += 1;
        }
    }
    let list = offending.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let max_step = checks.iter().filter_map(|c| c.step_raw).max().unwrap_or(0);
    let continuity = Evidence::new("glue.max_step_raw", Measure::count(max_step), Measure::count(bound));
    if !offending.is_empty() {
        return Ok(
            Verdict::fail(Evidence::new("glue.offending_boundaries", Measure::label(list), Measure::None)).with(continuity)
        );
    }
    if unchecked == checks.len() {
        return Ok(Verdict::inconclusive(Evidence::note("glue.offending_boundaries", "no boundary could be checked")));
    }
    Ok(Verdict::pass(Evidence::new("glue.offending_boundaries", Measure::label(""), Measure::None)).with(continuity))
}

/// Parses the boundary list out of a [`detect_glue`] verdict.
pub fn offending_boundaries(verdict: &Verdict) -> Vec<u32> {
    match verdict.find("glue.offending_boundaries").map(|e| &e.measured) {
        Some(Measure::Label(s)) => s.split(',').filter_map(|t| t.parse().ok()).collect(),
        _ => Vec::new(),
    }
}

/// Default near-duplicate rate above which declarations count as inflated.
pub fn default_duplicate_threshold() -> Rational {
    Rational::new(1, 20)
}

/// Share of declarations repeating an earlier `(data_commitment,
/// architecture)` pair.
pub fn check_inflated_compute(declarations: &[WorkloadDeclaration], threshold: Rational) -> Result<Verdict> {
    let n = declarations.len();
    if n == 0 {
        return Ok(Verdict::inconclusive(Evidence::note("duplicates.rate", "no declarations")));
    }
    let distinct: BTreeSet<_> = declarations.iter().map(|d| (d.data_commitment, d.architecture.clone())).collect();
    let commitments: Vec<_> = declarations.iter().map(WorkloadDeclaration::commitment).collect::<Result<_>>()?;
    let mut identical_pairs = 0u64;
    for i in 0..n {
        for j in i + 1..n {
            identical_pairs += (commitments[i] == commitments[j]) as u64;
        }
    }
    let rate = Rational::new((n - distinct.len()) as u64, n as u64);
    let to_f = |r: Rational| *r.numer() as f64 / *r.denom() as f64;
    Ok(Verdict::check(
        rate <= threshold,
        Evidence::new("duplicates.rate", Measure::real(to_f(rate)), Measure::real(to_f(threshold))),
    )
    .with(Evidence::new("duplicates.identical_pairs", Measure::count(identical_pairs), Measure::None)))
}

/// Capability score on a restricted-task benchmark: the negated mean
/// per-item loss. The model passes iff its score stays below
/// `capability_ceiling`, so a ceiling of `-inf` fails every model.
pub fn evaluate_properties(weights: &Weights, eval_batches: &[Batch], capability_ceiling: f64) -> Result<Verdict> {
    let items: usize = eval_batches.iter().map(Batch::items).sum();
    if items == 0 {
        return Ok(Verdict::inconclusive(Evidence::note("properties.capability_score", "empty benchmark")));
    }
    let refs: Vec<&Batch> = eval_batches.iter().collect();
    let mean_loss = total_loss(weights, &refs)? as f64 / 65536.0 / items as f64;
    let score = -mean_loss;
    Ok(Verdict::check(
        score < capability_ceiling,
        Evidence::new("properties.capability_score", Measure::real(score), Measure::real(capability_ceiling)),
    ))
}

/// Declared model operations must match the declared shape.
pub fn verify_declared_ops(declaration: &WorkloadDeclaration) -> Verdict {
    let per_item = match declaration.kind {
        WorkloadKind::Training => training_ops_per_item(&declaration.architecture),
        WorkloadKind::Inference => inference_ops_per_item(&declaration.architecture),
        WorkloadKind::NonAi => {
            return Verdict::inconclusive(Evidence::note("ops.declared", "non-AI workload; no model shape"));
        }
    };
    let expected = per_item * declaration.total_batches() as u64 * declaration.batch_size as u64;
    Verdict::check(
        expected == declaration.claimed_model_ops,
        Evidence::new("ops.declared", Measure::count(declaration.claimed_model_ops), Measure::count(expected)),
    )
}

pub fn verify_optimizer(declaration: &WorkloadDeclaration) -> Verdict {
    Verdict::check(
        declaration.optimizer_family.is_allowed(),
        Evidence::new(
            "optimizer.family",
            Measure::label(declaration.optimizer_family.to_string()),
            Measure::label("sgd|momentum|adam-like"),
        ),
    )
}

/// Replays the sampled inference batches and compares outputs exactly.
pub fn verify_inference_sample(
    declaration: &WorkloadDeclaration,
    weights: &Weights,
    prompts: &Dataset,
    claimed: &[BatchOutput],
    sample: &[u32],
) -> Result<Verdict> {
    let mut mismatched = Vec::new();
    let mut missing = Vec::new();
    for &i in sample {
        let (Some(batch), Some(claim)) = (prompts.get(i), claimed.iter().find(|o| o.batch_index == i)) else {
            missing.push(i);
            continue;
        };
        if infer_batch(declaration, batch, weights)? != *claim {
            mismatched.push(i);
        }
    }
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let replayed = Evidence::new("inference.batches_replayed", Measure::count(sample.len() - missing.len()), Measure::None);
    if !mismatched.is_empty() {
        return Ok(Verdict::fail(Evidence::new(
            "inference.mismatched_batches",
            Measure::label(join(&mismatched)),
            Measure::None,
        ))
        .with(replayed));
    }
    if !missing.is_empty() {
        return Ok(Verdict::inconclusive(Evidence::note("inference.missing_batches", join(&missing))).with(replayed));
    }
    Ok(Verdict::pass(Evidence::new("inference.mismatched_batches", Measure::label(""), Measure::None)).with(replayed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::data::synthetic_dataset;
    use crate::detnet::fixed::Fixed;
    use crate::detnet::fixtures::{training_data_for, training_declaration};
    use crate::model::OptimizerFamily;

    fn honest(seed: u64) -> (WorkloadDeclaration, TrainingTranscript, Dataset) {
        let decl = training_declaration(seed);
        let data = training_data_for(&decl.master_seed);
        let run = Engine::default().run_training(&decl, &data).unwrap();
        let transcript = run.transcript(&decl).unwrap();
        (decl, transcript, data)
    }

    #[test]
    fn select_all_and_repeatable() {
        let s = Seed::from_u64(5);
        assert_eq!(select_segments(10, &s, 10).unwrap().indices, (0..10).collect::<Vec<_>>());
        assert_eq!(select_segments(10, &s, 3).unwrap(), select_segments(10, &s, 3).unwrap());
        assert!(select_segments(10, &s, 0).is_err());
        assert!(select_segments(10, &s, 11).is_err());
        let three = select_segments(10, &s, 3).unwrap().indices;
        assert_eq!(three.iter().collect::<BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn honest_run_passes_everything() {
        let (decl, t, data) = honest(1);
        let sample = select_segments(decl.segment_count, &Seed::from_u64(9), 3).unwrap();
        assert!(verify_faithfulness(&decl, &t, &data, &sample, &Replayer::default()).unwrap().is_pass());
        assert!(verify_init_and_order(&decl, &t).unwrap().is_pass());
        let glue = detect_glue(&decl, &t, &data, &GlueConfig::default()).unwrap();
        assert!(glue.is_pass(), "{glue:?}");
    }

    #[test]
    fn missing_data_is_inconclusive() {
        let (decl, t, mut data) = honest(2);
        let all = select_segments(decl.segment_count, &Seed::from_u64(1), decl.segment_count).unwrap();
        let victim = t.segment_batches(4, decl.batches_per_segment).unwrap()[0];
        data.batches.retain(|b| b.batch_index != victim);
        let v = verify_faithfulness(&decl, &t, &data, &all, &Replayer::default()).unwrap();
        assert!(v.is_inconclusive(), "{v:?}");
    }

    #[test]
    fn swapped_order_fails_with_position() {
        let (decl, mut t, _) = honest(3);
        t.batch_order.swap(2, 7);
        let v = verify_init_and_order(&decl, &t).unwrap();
        assert!(v.is_fail());
        assert_eq!(v.find("order.first_deviation").unwrap().measured, Measure::count(2));
    }

    fn holdout(decl: &WorkloadDeclaration) -> Vec<Batch> {
        synthetic_batches_from(&Seed::from_u64(77), &decl.architecture, u32::MAX / 2, 16, decl.batch_size, TaskKind::Random)
    }

    #[test]
    fn memorization_separates_adjacent_from_unrelated_checkpoints() {
        let mut unrelated_fails = 0;
        for seed in 0..10 {
            let (decl, t, data) = honest(seed);
            let (_, other, _) = honest(seed + 1000);
            let hold = holdout(&decl);
            let hold: Vec<&Batch> = hold.iter().collect();
            let recent = segment_batches(&decl, &t, &data, 3).unwrap();
            let (before, after) = (t.checkpoint(3).unwrap(), t.checkpoint(4).unwrap());
            assert!(memorization_check(before, after, &recent, &hold, 0).unwrap().is_pass(), "seed {seed}");
            let foreign = other.checkpoint(4).unwrap();
            unrelated_fails += usize::from(memorization_check(before, foreign, &recent, &hold, 0).unwrap().is_fail());
        }
        assert!(unrelated_fails >= 5, "{unrelated_fails}/10");
    }

    #[test]
    fn glued_halves_fail_at_the_seam() {
        let (decl, mut t, data) = honest(6);
        let (_, other, _) = honest(7);
        for i in 6..t.checkpoints.len() {
            t.checkpoints[i] = other.checkpoints[i].clone();
            t.commitments[i] = other.commitments[i];
        }
        let v = detect_glue(&decl, &t, &data, &GlueConfig::default()).unwrap();
        assert!(v.is_fail());
        assert!(offending_boundaries(&v).contains(&5), "{:?}", offending_boundaries(&v));
    }

    #[test]
    fn single_segment_glue_is_inconclusive() {
        let (mut decl, mut t, data) = honest(8);
        decl.segment_count = 1;
        t.checkpoints.truncate(2);
        t.commitments.truncate(2);
        assert!(detect_glue(&decl, &t, &data, &GlueConfig::default()).unwrap().is_inconclusive());
    }

    #[test]
    fn zero_learning_rate_memorization_is_inconclusive() {
        let mut decl = training_declaration(4);
        decl.optimizer_params.learning_rate = Fixed::ZERO;
        let data = training_data_for(&decl.master_seed);
        let run = Engine::default().run_training(&decl, &data).unwrap();
        let recent: Vec<&Batch> = data.batches[..2].iter().collect();
        let holdout: Vec<&Batch> = data.batches[2..4].iter().collect();
        let v = memorization_check(&run.checkpoints[0], &run.checkpoints[1], &recent, &holdout, 0).unwrap();
        assert!(v.is_inconclusive());
    }

    #[test]
    fn duplicate_rates() {
        let a = training_declaration(1);
        let ten = vec![a.clone(); 10];
        let v = check_inflated_compute(&ten, default_duplicate_threshold()).unwrap();
        assert!(v.is_fail());
        assert_eq!(v.evidence[0].measured, Measure::real(0.9));
        assert_eq!(v.find("duplicates.identical_pairs").unwrap().measured, Measure::count(45));
        let mut hundred: Vec<_> = (0..99).map(|i| training_declaration(100 + i)).collect();
        hundred.push(hundred[0].clone());
        assert!(check_inflated_compute(&hundred, default_duplicate_threshold()).unwrap().is_pass());
    }

    #[test]
    fn property_boundaries() {
        let arch = [4, 8, 2];
        let w = crate::detnet::init_weights(&arch, &Seed::from_u64(1)).unwrap();
        let bench = synthetic_dataset(&Seed::from_u64(2), &arch, 2, 8, TaskKind::Teacher).batches;
        assert!(evaluate_properties(&w, &bench, f64::NEG_INFINITY).unwrap().is_fail());
        assert!(evaluate_properties(&w, &bench, f64::INFINITY).unwrap().is_pass());
        assert!(evaluate_properties(&w, &[], 0.0).unwrap().is_inconclusive());
    }

    #[test]
    fn declared_ops_and_optimizer() {
        let mut decl = training_declaration(1);
        assert!(verify_declared_ops(&decl).is_pass());
        decl.claimed_model_ops += 1;
        assert!(verify_declared_ops(&decl).is_fail());
        decl.optimizer_family = OptimizerFamily::Other("lion".into());
        assert!(verify_optimizer(&decl).is_fail());
    }
}
