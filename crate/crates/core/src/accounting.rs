//! Power-sensor simulation and compute accounting.
//!
//! The Verifier estimates how many operations a cluster performed from its
//! power draw, then checks that declared workloads account for most of it.

use num_rational::Ratio;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::detnet::prng::chacha_from;
use crate::detnet::ExecutionTrace;
use crate::error::{Error, Result};
use crate::model::{ClusterSpec, Evidence, Measure, Rational, Seed, Verdict};

/// Exact wide quantity used when reconciling ops or chip-hours.
pub type Amount = Ratio<u128>;

pub fn amount(r: Rational) -> Amount {
    Amount::new(*r.numer() as u128, *r.denom() as u128)
}

fn to_f64(a: &Amount) -> f64 {
    *a.numer() as f64 / *a.denom() as f64
}

/// Linear power model of a whole cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    pub chip_count: u32,
    pub peak_ops_per_hour: u64,
    pub tick_seconds: u32,
    pub p_idle_milliwatts: u64,
    pub p_max_milliwatts: u64,
    /// Relative standard deviation of each sensor reading.
    pub noise_sigma: f64,
}

impl EfficiencyModel {
    pub fn from_cluster(cluster: &ClusterSpec, tick_seconds: u32, noise_sigma: f64) -> Result<EfficiencyModel> {
        let model = EfficiencyModel {
            chip_count: cluster.chip_count,
            peak_ops_per_hour: cluster.peak_ops_per_hour,
            tick_seconds,
            p_idle_milliwatts: cluster.p_idle_milliwatts * cluster.chip_count as u64,
            p_max_milliwatts: cluster.p_max_milliwatts * cluster.chip_count as u64,
            noise_sigma,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_max_milliwatts <= self.p_idle_milliwatts {
            return Err(Error::Invariant("p_max must exceed p_idle".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Invariant(format!("noise sigma {} must be finite and >= 0", self.noise_sigma)));
        }
        if self.tick_seconds == 0 || self.chip_count == 0 {
            return Err(Error::Invariant("tick length and chip count must be positive".into()));
        }
        Ok(())
    }

    /// Cluster operations per tick at full utilization.
    pub fn peak_ops_per_tick(&self) -> Amount {
        Amount::new(self.chip_count as u128 * self.peak_ops_per_hour as u128 * self.tick_seconds as u128, 3600)
    }

    fn dynamic_range(&self) -> u128 {
        (self.p_max_milliwatts - self.p_idle_milliwatts) as u128
    }

    /// Noiseless draw at `utilization`, floored to the milliwatt.
    pub fn power_at(&self, utilization: Rational) -> u64 {
        let u = amount(utilization);
        let dynamic = (Amount::from_integer(self.dynamic_range()) * u).floor().to_integer();
        self.p_idle_milliwatts + dynamic as u64
    }

    pub fn chip_hours_per_tick(&self) -> Amount {
        Amount::new(self.chip_count as u128 * self.tick_seconds as u128, 3600)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PowerSample {
    pub tick: u64,
    /// Whole-cluster draw.
    pub milliwatts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SensorTrace {
    pub tick_seconds: u32,
    pub samples: Vec<PowerSample>,
}

impl SensorTrace {
    pub fn validate(&self) -> Result<()> {
        if self.samples.windows(2).any(|w| w[1].tick <= w[0].tick) {
            return Err(Error::Invariant("sensor ticks must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-tick draw of the cluster running `trace`, with mean-one lognormal
/// multiplicative noise seeded from `noise_seed`.
pub fn simulate_power_trace(trace: &ExecutionTrace, model: &EfficiencyModel, noise_seed: &Seed) -> Result<SensorTrace> {
    model.validate()?;
    let sigma = model.noise_sigma;
    let noise = LogNormal::new(-sigma * sigma / 2.0, sigma).map_err(|e| Error::Invariant(e.to_string()))?;
    let mut rng = chacha_from(noise_seed, "sensor");
    let samples = trace
        .ticks
        .iter()
        .map(|t| {
            let clean = model.power_at(t.utilization);
            let milliwatts = if sigma == 0.0 { clean } else { (clean as f64 * noise.sample(&mut rng)).floor() as u64 };
            PowerSample { tick: t.tick, milliwatts }
        })
        .collect();
    Ok(SensorTrace { tick_seconds: model.tick_seconds, samples })
}

/// A window of ticks with no sensor reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickGap {
    pub first: u64,
    pub last: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpsEstimate {
    pub ops: u64,
    /// Three-sigma bound from sensor noise plus milliwatt rounding.
    pub error_bound: u64,
    /// Unmeasured stretches inside the window; non-empty means the
    /// estimate cannot be trusted.
    pub gaps: Vec<TickGap>,
}

impl OpsEstimate {
    pub fn lower(&self) -> u64 {
        self.ops.saturating_sub(self.error_bound)
    }
}

/// Sum over ticks in `[t_a, t_b)` of the operations implied by each
/// reading: `peak_ops_per_tick * (P - P_idle) / (P_max - P_idle)`.
pub fn estimate_total_ops(sensor: &SensorTrace, model: &EfficiencyModel, t_a: u64, t_b: u64) -> Result<OpsEstimate> {
    sensor.validate()?;
    if t_b < t_a {
        return Err(Error::OutOfRange(format!("window [{t_a}, {t_b}) is reversed")));
    }
    let peak = model.peak_ops_per_tick();
    let range = model.dynamic_range() as i128;
    let idle = model.p_idle_milliwatts as i128;
    let mut excess: i128 = 0;
    let mut variance = 0.0;
    let mut gaps = Vec::new();
    let mut expected = t_a;
    let mut count = 0u64;
    for s in sensor.samples.iter().filter(|s| s.tick >= t_a && s.tick < t_b) {
        if s.tick > expected {
            gaps.push(TickGap { first: expected, last: s.tick - 1 });
        }
        expected = s.tick + 1;
        excess += s.milliwatts as i128 - idle;
        let sd = model.noise_sigma * s.milliwatts as f64;
        variance += sd * sd;
        count += 1;
    }
    if expected < t_b {
        gaps.push(TickGap { first: expected, last: t_b - 1 });
    }
    let scale = Amount::new(*peak.numer(), *peak.denom() * range as u128);
    let ops = if excess <= 0 { 0 } else { (Amount::from_integer(excess as u128) * scale).floor().to_integer() as u64 };
    // One milliwatt of floor per reading, plus the final floor.
    let rounding = (Amount::from_integer(count as u128) * scale).ceil().to_integer() as f64 + 1.0;
    let noise = 3.0 * variance.sqrt() * to_f64(&scale);
    Ok(OpsEstimate { ops, error_bound: (noise + rounding).ceil() as u64, gaps })
}

/// Ticks whose reading sits measurably above idle, in chip-hours.
pub fn active_chip_hours(sensor: &SensorTrace, model: &EfficiencyModel) -> Amount {
    let cutoff = model.p_idle_milliwatts as f64 * (1.0 + 3.0 * model.noise_sigma) + 1.0;
    let active = sensor.samples.iter().filter(|s| s.milliwatts as f64 > cutoff).count() as u128;
    model.chip_hours_per_tick() * Amount::from_integer(active)
}

/// Chip-hours a declaration accounts for, assuming the cluster ran at no
/// better than `mfu_conservative`.
pub fn accounted_chip_hours_option_a(
    claimed_model_ops: u64,
    peak_ops_per_hour: u64,
    mfu_conservative: Rational,
) -> Result<Amount> {
    if *mfu_conservative.numer() == 0 || mfu_conservative > Rational::from_integer(1) {
        return Err(Error::OutOfRange(format!("mfu {mfu_conservative} outside (0, 1]")));
    }
    if peak_ops_per_hour == 0 {
        return Err(Error::DivisionByZero("peak_ops_per_hour"));
    }
    Ok(Amount::from_integer(claimed_model_ops as u128)
        / (Amount::from_integer(peak_ops_per_hour as u128) * amount(mfu_conservative)))
}

/// Hardware operations a declaration accounts for, given an assumed
/// hardware-to-model operation ratio. Ratio 1 is the most conservative.
pub fn accounted_hw_ops_option_b(claimed_model_ops: u64, hfu_over_mfu: Rational) -> Result<Amount> {
    if hfu_over_mfu < Rational::from_integer(1) {
        return Err(Error::OutOfRange(format!("hfu/mfu ratio {hfu_over_mfu} below 1")));
    }
    Ok(Amount::from_integer(claimed_model_ops as u128) * amount(hfu_over_mfu))
}

/// Linear interpolation of `values` onto `len` evenly spaced points.
fn resample(values: &[f64], len: usize) -> Vec<f64> {
    if values.len() == len || values.len() < 2 || len < 2 {
        return (0..len).map(|i| values[i.min(values.len() - 1)]).collect();
    }
    let step = (values.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|i| {
            let x = i as f64 * step;
            let lo = x.floor() as usize;
            let hi = (lo + 1).min(values.len() - 1);
            values[lo] + (values[hi] - values[lo]) * (x - lo as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureComparison {
    /// Root-mean-square difference over root-mean-square expected draw.
    pub distance: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Compares a measured trace against the draw the declared workload should
/// produce. Traces of different lengths are linearly resampled onto the
/// expected length when within a factor of two of each other.
pub fn signature_distance_option_c(
    expected: &SensorTrace,
    measured: &SensorTrace,
    noise_sigma: f64,
) -> Result<SignatureComparison> {
    let (n_e, n_m) = (expected.len(), measured.len());
    if n_e == 0 || n_m == 0 || n_m > 2 * n_e || n_e > 2 * n_m {
        return Err(Error::Shape(format!("cannot align traces of {n_e} and {n_m} ticks")));
    }
    let e: Vec<f64> = expected.samples.iter().map(|s| s.milliwatts as f64).collect();
    let m: Vec<f64> = measured.samples.iter().map(|s| s.milliwatts as f64).collect();
    let m = resample(&m, n_e);
    let rms = |xs: &mut dyn Iterator<Item = f64>| {
        let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
        (sum / n as f64).sqrt()
    };
    let diff = rms(&mut e.iter().zip(&m).map(|(a, b)| a - b));
    let scale = rms(&mut e.iter().copied());
    let distance = if scale == 0.0 { diff } else { diff / scale };
    let threshold = 3.0 * noise_sigma + 1e-6;
    let verdict =
        Verdict::check(distance < threshold, Evidence::new("signature.nrmse", Measure::real(distance), Measure::real(threshold)));
    Ok(SignatureComparison { distance, threshold, verdict })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountingParams {
    pub mfu_conservative: Rational,
    pub hfu_over_mfu_floor: Rational,
    pub accounted_fraction_threshold: Rational,
}

impl Default for AccountingParams {
    fn default() -> Self {
        AccountingParams {
            mfu_conservative: Rational::new(1, 4),
            hfu_over_mfu_floor: Rational::from_integer(1),
            accounted_fraction_threshold: Rational::new(19, 20),
        }
    }
}

impl AccountingParams {
    pub fn validate(&self) -> Result<()> {
        let one = Rational::from_integer(1);
        let zero = Rational::from_integer(0);
        if self.mfu_conservative <= zero || self.mfu_conservative > one {
            return Err(Error::Invariant("mfu_conservative must lie in (0, 1]".into()));
        }
        if self.hfu_over_mfu_floor < one {
            return Err(Error::Invariant("hfu_over_mfu_floor must be >= 1".into()));
        }
        if self.accounted_fraction_threshold <= zero || self.accounted_fraction_threshold > one {
            return Err(Error::Invariant("accounted_fraction_threshold must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Share of the measured total covered by declarations, against the
/// total's lower bound. Fail evidence carries the unaccounted residual.
pub fn reconcile(total: Amount, total_error_bound: Amount, accounted: &[Amount], params: &AccountingParams) -> Verdict {
    let sum: Amount = accounted.iter().cloned().fold(Amount::from_integer(0), |a, b| a + b);
    let lower = if total > total_error_bound { total - total_error_bound } else { Amount::from_integer(0) };
    let zero = Amount::from_integer(0);
    if lower == zero {
        if sum > zero {
            return Verdict::inconclusive(Evidence::new("accounting.fraction", Measure::None, Measure::None))
                .with(Evidence::new("accounting.accounted", Measure::real(to_f64(&sum)), Measure::None));
        }
        return Verdict::pass(Evidence::note("accounting.fraction", "no measurable use"));
    }
    let fraction = sum / lower;
    let threshold = amount(params.accounted_fraction_threshold);
    let ev = Evidence::new("accounting.fraction", Measure::real(to_f64(&fraction)), Measure::real(to_f64(&threshold)));
    if fraction >= threshold {
        Verdict::pass(ev)
    } else {
        let residual = lower - sum;
        Verdict::fail(ev).with(Evidence::new("accounting.unaccounted", Measure::real(to_f64(&residual)), Measure::None))
    }
}

/// [`reconcile`] on an ops estimate, flagging sensor gaps as inconclusive.
pub fn reconcile_ops(total: &OpsEstimate, accounted: &[Amount], params: &AccountingParams) -> Verdict {
    if let Some(g) = total.gaps.first() {
        return Verdict::inconclusive(Evidence::new("accounting.sensor_gap", Measure::count(g.first), Measure::count(g.last)));
    }
    reconcile(Amount::from_integer(total.ops as u128), Amount::from_integer(total.error_bound as u128), accounted, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detnet::fixtures::PEAK_OPS_PER_HOUR;
    use crate::detnet::TickRecord;

    fn model(sigma: f64) -> EfficiencyModel {
        EfficiencyModel {
            chip_count: 4,
            peak_ops_per_hour: PEAK_OPS_PER_HOUR,
            tick_seconds: 1,
            p_idle_milliwatts: 400_000,
            p_max_milliwatts: 1_600_000,
            noise_sigma: sigma,
        }
    }

    fn flat(ticks: u64, util: Rational) -> ExecutionTrace {
        let per = 2400 * *util.numer() / *util.denom();
        ExecutionTrace {
            ticks: (0..ticks)
                .map(|tick| TickRecord { tick, utilization: util, hardware_ops: per, messages_emitted: 0 })
                .collect(),
        }
    }

    #[test]
    fn constant_traces_without_noise() {
        let m = model(0.0);
        let idle = simulate_power_trace(&flat(50, Rational::from_integer(0)), &m, &Seed::from_u64(1)).unwrap();
        assert!(idle.samples.iter().all(|s| s.milliwatts == 400_000));
        assert_eq!(estimate_total_ops(&idle, &m, 0, 50).unwrap().ops, 0);
        let full = simulate_power_trace(&flat(3600, Rational::from_integer(1)), &m, &Seed::from_u64(1)).unwrap();
        assert!(full.samples.iter().all(|s| s.milliwatts == 1_600_000));
        assert_eq!(estimate_total_ops(&full, &m, 0, 3600).unwrap().ops, 4 * PEAK_OPS_PER_HOUR);
    }

    #[test]
    fn lognormal_noise_has_mean_one() {
        let m = model(0.01);
        let trace = simulate_power_trace(&flat(10_000, Rational::new(1, 2)), &m, &Seed::from_u64(3)).unwrap();
        let mean = trace.samples.iter().map(|s| s.milliwatts as f64).sum::<f64>() / 10_000.0;
        assert!((mean / 1_000_000.0 - 1.0).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn gaps_are_reported() {
        let m = model(0.0);
        let mut trace = simulate_power_trace(&flat(20, Rational::new(1, 2)), &m, &Seed::from_u64(1)).unwrap();
        trace.samples.retain(|s| !(5..8).contains(&s.tick));
        let est = estimate_total_ops(&trace, &m, 0, 20).unwrap();
        assert_eq!(est.gaps, vec![TickGap { first: 5, last: 7 }]);
        assert!(reconcile_ops(&est, &[], &AccountingParams::default()).is_inconclusive());
        assert!(estimate_total_ops(&trace, &m, 0, 25).unwrap().gaps.contains(&TickGap { first: 20, last: 24 }));
    }

    #[test]
    fn option_a_and_b_substitution() {
        assert_eq!(accounted_chip_hours_option_a(100, 100, Rational::new(1, 2)).unwrap(), Amount::from_integer(2));
        assert_eq!(accounted_chip_hours_option_a(0, 7, Rational::new(1, 3)).unwrap(), Amount::from_integer(0));
        assert!(accounted_chip_hours_option_a(1, 1, Rational::from_integer(0)).is_err());
        assert_eq!(accounted_hw_ops_option_b(1_000_000, Rational::new(3, 2)).unwrap(), Amount::from_integer(1_500_000));
        assert_eq!(accounted_hw_ops_option_b(42, Rational::from_integer(1)).unwrap(), Amount::from_integer(42));
        assert!(accounted_hw_ops_option_b(1, Rational::new(1, 2)).is_err());
    }

    #[test]
    fn signature_identity_and_shape_mismatch() {
        let m = model(0.0);
        let a = simulate_power_trace(&flat(100, Rational::new(1, 2)), &m, &Seed::from_u64(1)).unwrap();
        let c = signature_distance_option_c(&a, &a, 0.01).unwrap();
        assert_eq!(c.distance, 0.0);
        assert!(c.verdict.is_pass());
        let short = simulate_power_trace(&flat(40, Rational::new(1, 2)), &m, &Seed::from_u64(1)).unwrap();
        assert!(signature_distance_option_c(&a, &short, 0.01).is_err());
        let other = simulate_power_trace(&flat(120, Rational::new(3, 10)), &m, &Seed::from_u64(1)).unwrap();
        assert!(signature_distance_option_c(&a, &other, 0.01).unwrap().verdict.is_fail());
    }

    #[test]
    fn reconcile_edges() {
        let p = AccountingParams::default();
        let full = reconcile(Amount::from_integer(100), Amount::from_integer(0), &[Amount::from_integer(100)], &p);
        assert!(full.is_pass());
        assert_eq!(full.evidence[0].measured, Measure::real(1.0));
        let short = reconcile(Amount::from_integer(100), Amount::from_integer(0), &[Amount::from_integer(80)], &p);
        assert!(short.is_fail());
        assert_eq!(short.find("accounting.unaccounted").unwrap().measured, Measure::real(20.0));
        assert!(reconcile(Amount::from_integer(0), Amount::from_integer(0), &[Amount::from_integer(5)], &p).is_inconclusive());
    }
}
