//! Data and code heuristics: token statistics, optimizer structure,
//! hash-range sampling of usage data and its storage overhead.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detnet::net::{backward_wide, Batch, Dataset, WideGradient};
use crate::detnet::optim::apply_update;
use crate::detnet::TrainingTranscript;
use crate::error::{Error, Result};
use crate::model::{commit_value, Evidence, Measure, Rational, Verdict, WorkloadDeclaration};

/// Number of token buckets inputs are mapped into.
pub const TOKEN_BUCKETS: usize = 16;

/// Upper 0.1% point of the chi-square distribution with 15 degrees of
/// freedom (scipy.stats.chi2.ppf(0.999, 15)).
pub const CHI2_15_P001: f64 = 37.697;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub histogram: Vec<u64>,
    pub total_count: u64,
}

impl TokenDistribution {
    pub fn from_counts(histogram: Vec<u64>) -> TokenDistribution {
        let total_count = histogram.iter().sum();
        TokenDistribution { histogram, total_count }
    }

    pub fn validate(&self) -> Result<()> {
        if self.histogram.iter().sum::<u64>() != self.total_count {
            return Err(Error::Invariant("histogram does not sum to total_count".into()));
        }
        Ok(())
    }

    /// Token of an input value: its sixteenth of `[-1, 1)`.
    pub fn token_of(raw: i32) -> usize {
        ((raw as i64 + 65536).clamp(0, 131071) >> 13) as usize
    }

    pub fn of_batches<'a>(batches: impl IntoIterator<Item = &'a Batch>) -> TokenDistribution {
        let mut h = vec![0u64; TOKEN_BUCKETS];
        for b in batches {
            for x in &b.inputs {
                h[Self::token_of(x.raw())] += 1;
            }
        }
        Self::from_counts(h)
    }

    /// Reference for natural inputs: the triangular law on `[-1, 1)`,
    /// scaled to `total` and rounded.
    pub fn triangular_reference(total: u64) -> TokenDistribution {
        let cdf = |x: f64| if x < 0.0 { (1.0 + x).powi(2) / 2.0 } else { 1.0 - (1.0 - x).powi(2) / 2.0 };
        let h = (0..TOKEN_BUCKETS)
            .map(|k| {
                let a = -1.0 + k as f64 / 8.0;
                ((cdf(a + 0.125) - cdf(a)) * total as f64).round() as u64
            })
            .collect();
        Self::from_counts(h)
    }
}

/// Pearson chi-square of `observed` against the shape of `reference`.
pub fn chi_square(observed: &TokenDistribution, reference: &TokenDistribution) -> f64 {
    let n = observed.total_count as f64;
    let r = reference.total_count as f64;
    observed
        .histogram
        .iter()
        .zip(&reference.histogram)
        .filter(|(_, &e)| e > 0)
        .map(|(&o, &e)| {
            let expected = n * e as f64 / r;
            (o as f64 - expected).powi(2) / expected
        })
        .sum()
}

pub fn token_frequency_check(data: &[Batch], reference: &TokenDistribution, threshold: f64) -> Result<Verdict> {
    reference.validate()?;
    if reference.total_count == 0 || reference.histogram.len() != TOKEN_BUCKETS {
        return Err(Error::Invariant("reference distribution must cover every bucket".into()));
    }
    let observed = TokenDistribution::of_batches(data);
    if observed.total_count == 0 {
        return Ok(Verdict::inconclusive(Evidence::note("tokens.chi_square", "no data")));
    }
    let stat = chi_square(&observed, reference);
    Ok(Verdict::check(stat < threshold, Evidence::new("tokens.chi_square", Measure::real(stat), Measure::real(threshold))))
}

/// Gradient assembled item by item, a factoring independent of the batched
/// backward pass the engine uses. Wrapping accumulation makes the two agree
/// bit for bit.
pub fn reference_gradient(weights: &crate::detnet::Weights, batch: &Batch) -> Result<WideGradient> {
    let mut acc = WideGradient::zeros(&weights.architecture);
    for i in 0..batch.items() {
        acc.accumulate(&backward_wide(weights, &batch.slice_items(i, i + 1))?);
    }
    Ok(acc)
}

/// Declared updates must have the structure of gradient descent: the
/// allowed optimizer applied to the reference gradient reproduces each
/// sampled segment within `tolerance_raw`.
pub fn optimizer_structure_check(
    declaration: &WorkloadDeclaration,
    transcript: &TrainingTranscript,
    data: &Dataset,
    segments: &[u32],
    tolerance_raw: i64,
) -> Result<Verdict> {
    let family = Evidence::new(
        "structure.optimizer_family",
        Measure::label(declaration.optimizer_family.to_string()),
        Measure::label("sgd|momentum|adam-like"),
    );
    if !declaration.optimizer_family.is_allowed() {
        return Ok(Verdict::fail(family));
    }
    let bps = declaration.batches_per_segment;
    let deviations: Vec<Option<i64>> = segments
        .par_iter()
        .map(|&i| {
            let (Some(start), Some(end)) = (transcript.checkpoint(i), transcript.checkpoint(i + 1)) else {
                return Ok(None);
            };
            let Some(order) = transcript.segment_batches(i as usize, bps) else { return Ok(None) };
            let mut weights = start.weights.clone();
            let mut state = start.optimizer_state.clone();
            for &b in order {
                let Some(batch) = data.get(b) else { return Ok(None) };
                let grad = reference_gradient(&weights, batch)?.rescale();
                apply_update(&mut weights, &mut state, &grad, &declaration.optimizer_family, &declaration.optimizer_params)?;
            }
            Ok(Some(weights.max_abs_diff(&end.weights)))
        })
        .collect::<Result<_>>()?;
    if deviations.iter().any(Option::is_none) || deviations.is_empty() {
        return Ok(Verdict::inconclusive(Evidence::note("structure.max_deviation_raw", "segment data missing")).with(family));
    }
    let worst = deviations.into_iter().flatten().max().unwrap_or(0);
    Ok(Verdict::check(
        worst <= tolerance_raw,
        Evidence::new("structure.max_deviation_raw", Measure::count(worst), Measure::count(tolerance_raw)),
    )
    .with(family))
}

/// Keeps item `i` iff its commitment, read as a fraction of 2^64, is below
/// `q`. Anyone holding the items can recompute the subset.
pub fn hash_range_sample<T: Serialize + Sync>(items: &[T], q: Rational) -> Result<Vec<usize>> {
    if *q.numer() == 0 || q > Rational::from_integer(1) {
        return Err(Error::OutOfRange(format!("range fraction {q} outside (0, 1]")));
    }
    let keep: Vec<bool> = items
        .par_iter()
        .map(|item| commit_value(item).map(|d| (d.leading_u64() as u128) * (*q.denom() as u128) < (*q.numer() as u128) << 64))
        .collect::<Result<_>>()?;
    Ok(keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect())
}

/// Stored sample size must sit within four binomial standard deviations of
/// `q * total`.
pub fn verify_sample_completeness(total_count: u64, q: Rational, stored_count: u64) -> Verdict {
    let qf = *q.numer() as f64 / *q.denom() as f64;
    let n = total_count as f64;
    let expected = n * qf;
    let bound = 4.0 * (n * qf * (1.0 - qf)).sqrt();
    let ok = total_count == 0 || (stored_count as f64 - expected).abs() <= bound;
    Verdict::check(ok, Evidence::new("sampling.stored", Measure::count(stored_count), Measure::real(expected)))
        .with(Evidence::new("sampling.bound", Measure::real(bound), Measure::None))
}

/// Inputs to the usage-data storage overhead estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareCostModel {
    pub flops_per_second: f64,
    pub params_count: f64,
    pub bytes_in: f64,
    pub bytes_out: f64,
    pub ssd_write_bytes_per_second: f64,
    pub ssd_price: f64,
    pub ssd_capacity_bytes: f64,
    pub amortization_months: f64,
    pub retention_months: f64,
    pub gpu_price_per_hour: f64,
}

impl HardwareCostModel {
    /// One H100 serving a 70B dense model with 2-byte inputs and outputs,
    /// a 2 TB $90 SSD amortized over a year, one month of retention.
    pub fn h100_reference() -> HardwareCostModel {
        HardwareCostModel {
            flops_per_second: 1.98e15,
            params_count: 70e9,
            bytes_in: 2.0,
            bytes_out: 2.0,
            ssd_write_bytes_per_second: 7e9,
            ssd_price: 90.0,
            ssd_capacity_bytes: 2e12,
            amortization_months: 12.0,
            retention_months: 1.0,
            gpu_price_per_hour: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.flops_per_second,
            self.params_count,
            self.bytes_in,
            self.bytes_out,
            self.ssd_write_bytes_per_second,
            self.ssd_price,
            self.ssd_capacity_bytes,
            self.amortization_months,
            self.retention_months,
            self.gpu_price_per_hour,
        ];
        if all.iter().any(|v| v.is_nan() || *v <= 0.0) {
            return Err(Error::Invariant("cost model fields must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageOverhead {
    pub throughput_bytes_per_second: f64,
    pub latency_overhead_fraction: f64,
    pub storage_cost_per_byte: f64,
    pub processing_cost_per_byte: f64,
    pub cost_overhead_fraction: f64,
}

/// Cost of keeping usage data next to the cost of running the model on it.
/// A forward pass costs two FLOP per parameter per token; one token is
/// `bytes_in` bytes of input.
pub fn storage_overhead(m: &HardwareCostModel) -> Result<StorageOverhead> {
    m.validate()?;
    let throughput = m.flops_per_second * (m.bytes_in + m.bytes_out) / (2.0 * m.params_count);
    let storage = m.ssd_price / (m.ssd_capacity_bytes * m.amortization_months) * m.retention_months;
    let processing = m.params_count * 2.0 * m.gpu_price_per_hour / (m.flops_per_second * 3600.0) / m.bytes_in;
    Ok(StorageOverhead {
        throughput_bytes_per_second: throughput,
        latency_overhead_fraction: throughput / m.ssd_write_bytes_per_second,
        storage_cost_per_byte: storage,
        processing_cost_per_byte: processing,
        cost_overhead_fraction: storage / processing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::data::{synthetic_dataset, TaskKind};
    use crate::detnet::fixed::Fixed;
    use crate::detnet::fixtures::{training_data_for, training_declaration_with};
    use crate::detnet::Engine;
    use crate::model::{OptimizerFamily, Seed};

    #[test]
    fn reference_has_expected_shape() {
        let r = TokenDistribution::triangular_reference(1 << 20);
        assert!(r.validate().is_ok());
        assert_eq!(r.histogram[7], r.histogram[8]);
        assert!(r.histogram[0] < r.histogram[7]);
        assert_eq!(chi_square(&r, &r), 0.0);
    }

    #[test]
    fn natural_data_passes_and_uniform_payload_fails() {
        let reference = TokenDistribution::triangular_reference(1 << 20);
        let data = synthetic_dataset(&Seed::from_u64(1), &[48, 16, 2], 40, 8, TaskKind::Random).batches;
        assert!(token_frequency_check(&data, &reference, CHI2_15_P001).unwrap().is_pass());
        let mut disguised = data.clone();
        let mut stream = crate::detnet::PrngStream::new(&Seed::from_u64(2), "payload");
        for b in &mut disguised {
            for x in &mut b.inputs {
                *x = Fixed((stream.next_u64() >> 47) as i32 - 65536);
            }
        }
        assert!(token_frequency_check(&disguised, &reference, CHI2_15_P001).unwrap().is_fail());
        assert!(token_frequency_check(&[], &reference, CHI2_15_P001).unwrap().is_inconclusive());
    }

    #[test]
    fn structure_check_accepts_honest_and_rejects_overwrites() {
        for family in [OptimizerFamily::Sgd, OptimizerFamily::AdamLike] {
            let decl = training_declaration_with(Seed::from_u64(3), family);
            let data = training_data_for(&decl.master_seed);
            let run = Engine::default().run_training(&decl, &data).unwrap();
            let mut t = run.transcript(&decl).unwrap();
            let all: Vec<u32> = (0..decl.segment_count).collect();
            assert!(optimizer_structure_check(&decl, &t, &data, &all, 0).unwrap().is_pass());
            // Weights overwritten with payload bytes at checkpoint 5.
            let ckpt = t.checkpoints.iter_mut().find(|c| c.step_index == 5).unwrap();
            for (i, p) in ckpt.weights.params_mut().enumerate() {
                *p = Fixed(i as i32 * 977);
            }
            let v = optimizer_structure_check(&decl, &t, &data, &all, 0).unwrap();
            assert!(v.is_fail(), "{v:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let items: Vec<u64> = (0..100).collect();
        assert_eq!(hash_range_sample(&items, Rational::from_integer(1)).unwrap().len(), 100);
        let a = hash_range_sample(&items, Rational::new(1, 3)).unwrap();
        assert_eq!(a, hash_range_sample(&items, Rational::new(1, 3)).unwrap());
        assert!(hash_range_sample(&items, Rational::from_integer(0)).is_err());
    }

    #[test]
    fn completeness_bounds() {
        assert!(verify_sample_completeness(10_000, Rational::new(1, 10), 1000).is_pass());
        assert!(verify_sample_completeness(10_000, Rational::new(1, 10), 500).is_fail());
        assert!(verify_sample_completeness(0, Rational::new(1, 10), 0).is_pass());
    }

    #[test]
    fn overhead_scales_with_flops() {
        let base = HardwareCostModel::h100_reference();
        let fast = HardwareCostModel { flops_per_second: 2.0 * base.flops_per_second, ..base.clone() };
        let (a, b) = (storage_overhead(&base).unwrap(), storage_overhead(&fast).unwrap());
        assert!((b.throughput_bytes_per_second / a.throughput_bytes_per_second - 2.0).abs() < 1e-12);
        assert!((b.processing_cost_per_byte / a.processing_cost_per_byte - 0.5).abs() < 1e-12);
        let infinite_ssd = HardwareCostModel { ssd_write_bytes_per_second: f64::MAX, ..base };
        assert!(storage_overhead(&infinite_ssd).unwrap().latency_overhead_fraction < 1e-300);
    }
}
