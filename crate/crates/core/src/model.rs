//! Canonical domain types, content addressing and the subgoal taxonomy.
//!
//! Everything that gets committed to is encoded as canonical JSON: UTF-8,
//! object keys in byte-lexicographic order, no insignificant whitespace and
//! integers only. Fixed-point quantities travel as their raw scaled integers
//! and rationals as `[numerator, denominator]` pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest as _, Sha256};

use crate::detnet::fixed::Fixed;
use crate::error::{Error, Result};

/// Exact non-negative rational used for utilizations, fractions and
/// chip-hours.
pub type Rational = num_rational::Ratio<u64>;

// ---------------------------------------------------------------------------
// Digests and seeds
// ---------------------------------------------------------------------------

macro_rules! hex32_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self> {
                // Lowercase only, so that the textual form is unique.
                if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
                    return Err(Error::Encoding(format!("expected 64 lowercase hex chars, got `{s}`")));
                }
                let mut out = [0u8; 32];
                hex::decode_to_slice(s, &mut out).map_err(|e| Error::Encoding(e.to_string()))?;
                Ok(Self(out))
            }

            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), &self.to_hex()[..16])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex32_newtype!(
    /// A SHA-256 content commitment.
    Digest
);

hex32_newtype!(
    /// A 32-byte seed. Every random choice in the simulator descends from one.
    Seed
);

impl Digest {
    /// The leading 64 bits read as a fraction in `[0, 1)`.
    pub fn unit_fraction(&self) -> f64 {
        let lead = u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"));
        lead as f64 / 18_446_744_073_709_551_616.0
    }

    pub fn leading_u64(&self) -> u64 {
        u64::from_be_bytes(self.0[..8].try_into().expect("8 bytes"))
    }
}

impl Seed {
    /// Seed derived from a small integer, as used by the CLI's `--seed`.
    pub fn from_u64(value: u64) -> Seed {
        let mut h = Sha256::new();
        h.update(b"verifsim/seed");
        h.update(value.to_be_bytes());
        Seed(h.finalize().into())
    }

    /// Child seed for an independent purpose.
    pub fn derive(&self, label: &str) -> Seed {
        let mut h = Sha256::new();
        h.update(b"verifsim/derive");
        h.update(self.0);
        h.update((label.len() as u32).to_be_bytes());
        h.update(label.as_bytes());
        Seed(h.finalize().into())
    }
}

/// SHA-256 of `bytes`.
pub fn commit(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Commitment over the canonical encoding of `value`.
pub fn commit_value<T: Serialize>(value: &T) -> Result<Digest> {
    Ok(commit(&canonical_encode(value)?))
}

// ---------------------------------------------------------------------------
// Canonical JSON
// ---------------------------------------------------------------------------

/// Encode `value` as canonical JSON bytes.
///
/// Floats are rejected, including integral ones such as `2.0`.
pub fn canonical_encode<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let value = serde_json::to_value(value).map_err(|e| Error::Encoding(e.to_string()))?;
    let mut out = Vec::with_capacity(256);
    write_canonical(&value, &mut out)?;
    Ok(out)
}

fn write_canonical(value: &Value, out: &mut Vec<u8>) -> Result<()> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(b) => out.extend_from_slice(if *b { b"true" } else { b"false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(i.to_string().as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(Error::Encoding(format!("non-integer number {n} in committed data")));
            }
        }
        Value::String(s) => {
            serde_json::to_writer(&mut *out, s).map_err(|e| Error::Encoding(e.to_string()))?;
        }
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_canonical(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                serde_json::to_writer(&mut *out, key).map_err(|e| Error::Encoding(e.to_string()))?;
                out.push(b':');
                write_canonical(&map[key], out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

/// Decode canonical JSON. Accepts any well-formed JSON; see
/// [`canonical_decode_strict`] for the byte-exact variant.
pub fn canonical_decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Decode and additionally require that `bytes` is exactly the canonical
/// encoding of the decoded value.
pub fn canonical_decode_strict<T: DeserializeOwned + Serialize>(bytes: &[u8]) -> Result<T> {
    let value: T = serde_json::from_slice(bytes)?;
    if canonical_encode(&value)? != bytes {
        return Err(Error::Encoding("input is not in canonical form".into()));
    }
    Ok(value)
}

/// Write `value` as canonical JSON to `path`.
pub fn write_canonical_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = canonical_encode(value)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    canonical_decode(&bytes)
}

// ---------------------------------------------------------------------------
// Cluster and declarations
// ---------------------------------------------------------------------------

/// A declared AI compute cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub cluster_id: String,
    pub chip_count: u32,
    /// Theoretical operations per hour, per chip.
    pub peak_ops_per_hour: u64,
    pub p_idle_milliwatts: u64,
    pub p_max_milliwatts: u64,
    pub chip_ids: Vec<String>,
    /// Data-parallel nodes (servers); divides `chip_count`.
    pub node_count: u32,
    /// Accelerator memory per chip, bytes.
    pub memory_bytes_per_chip: u64,
}

impl ClusterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chip_count == 0 {
            return Err(Error::Invariant("chip_count must be at least 1".into()));
        }
        if self.p_idle_milliwatts > self.p_max_milliwatts {
            return Err(Error::Invariant("p_idle exceeds p_max".into()));
        }
        if self.chip_ids.len() != self.chip_count as usize {
            return Err(Error::Invariant(format!(
                "chip_ids has {} entries for chip_count {}",
                self.chip_ids.len(),
                self.chip_count
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.chip_ids {
            if !seen.insert(id) {
                return Err(Error::Invariant(format!("duplicate chip id `{id}`")));
            }
        }
        if self.node_count == 0 || !self.chip_count.is_multiple_of(self.node_count) {
            return Err(Error::Invariant("node_count must divide chip_count".into()));
        }
        Ok(())
    }

    pub fn total_memory_bytes(&self) -> u64 {
        self.memory_bytes_per_chip * self.chip_count as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Training,
    Inference,
    NonAi,
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WorkloadKind::Training => "training",
            WorkloadKind::Inference => "inference",
            WorkloadKind::NonAi => "non_ai",
        })
    }
}

/// Declared optimizer. Anything outside the three supported families is kept
/// verbatim so that the engine can refuse it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum OptimizerFamily {
    Sgd,
    Momentum,
    AdamLike,
    Other(String),
}

impl OptimizerFamily {
    pub fn is_allowed(&self) -> bool {
        !matches!(self, OptimizerFamily::Other(_))
    }
}

impl From<String> for OptimizerFamily {
    fn from(s: String) -> Self {
        match s.as_str() {
            "sgd" => OptimizerFamily::Sgd,
            "momentum" => OptimizerFamily::Momentum,
            "adam-like" => OptimizerFamily::AdamLike,
            _ => OptimizerFamily::Other(s),
        }
    }
}

impl From<OptimizerFamily> for String {
    fn from(f: OptimizerFamily) -> Self {
        f.to_string()
    }
}

impl fmt::Display for OptimizerFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerFamily::Sgd => f.write_str("sgd"),
            OptimizerFamily::Momentum => f.write_str("momentum"),
            OptimizerFamily::AdamLike => f.write_str("adam-like"),
            OptimizerFamily::Other(s) => f.write_str(s),
        }
    }
}

/// Fixed-point optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OptimizerParams {
    pub learning_rate: Fixed,
    /// Momentum coefficient, also the first-moment decay of adam-like.
    pub momentum: Fixed,
    /// Second-moment decay of adam-like.
    pub beta2: Fixed,
    pub epsilon: Fixed,
    /// Per-element gradient clip applied before every update.
    pub grad_clip: Fixed,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            learning_rate: Fixed::from_ratio(1, 10),
            momentum: Fixed::from_ratio(9, 10),
            beta2: Fixed::from_ratio(99, 100),
            epsilon: Fixed::from_ratio(1, 100),
            grad_clip: Fixed::ONE,
        }
    }
}

/// The Prover's self-report for one workload.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorkloadDeclaration {
    pub workload_id: String,
    pub kind: WorkloadKind,
    /// Layer widths, input first. Empty for non-AI workloads.
    pub architecture: Vec<u32>,
    pub optimizer_family: OptimizerFamily,
    pub optimizer_params: OptimizerParams,
    pub master_seed: Seed,
    pub data_commitment: Digest,
    pub segment_count: u32,
    pub batches_per_segment: u32,
    pub batch_size: u32,
    pub claimed_model_ops: u64,
    pub claimed_chip_hours: Rational,
    pub mfu_claimed: Rational,
    /// Sampling temperature for inference; zero means greedy.
    pub sampling_temperature: Fixed,
    /// Verifier-side classification record for non-AI workloads.
    pub non_ai_classification: Option<String>,
}

impl WorkloadDeclaration {
    pub fn validate(&self) -> Result<()> {
        if self.segment_count == 0 {
            return Err(Error::Invariant("segment_count must be at least 1".into()));
        }
        if *self.mfu_claimed.denom() == 0 || *self.mfu_claimed.numer() == 0 || self.mfu_claimed > Rational::from_integer(1) {
            return Err(Error::Invariant("mfu_claimed must lie in (0, 1]".into()));
        }
        match self.kind {
            WorkloadKind::NonAi => {
                if !self.architecture.is_empty() {
                    return Err(Error::Invariant("non_ai declarations carry no architecture".into()));
                }
            }
            WorkloadKind::Training | WorkloadKind::Inference => {
                if self.architecture.len() < 2 || self.architecture.contains(&0) {
                    return Err(Error::Invariant("architecture needs at least two non-zero layer widths".into()));
                }
                if self.batch_size == 0 || self.batches_per_segment == 0 {
                    return Err(Error::Invariant("batch_size and batches_per_segment must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn total_batches(&self) -> u32 {
        self.segment_count * self.batches_per_segment
    }

    pub fn commitment(&self) -> Result<Digest> {
        commit_value(self)
    }
}

/// Theoretical-capacity equivalence: how many reference chips match `count`
/// chips of another kind, rounded down.
pub fn cluster_equivalent_chips(cluster_ops_per_chip: u128, count: u128, reference_ops: u128) -> Result<u128> {
    if reference_ops == 0 {
        return Err(Error::DivisionByZero("reference_ops"));
    }
    let total =
        cluster_ops_per_chip.checked_mul(count).ok_or_else(|| Error::OutOfRange("cluster capacity overflows u128".into()))?;
    Ok(total / reference_ops)
}

// ---------------------------------------------------------------------------
// Subgoals, verdicts, reports
// ---------------------------------------------------------------------------

/// The seven leaves of the verification framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubgoalId {
    /// Declared training is accurate.
    S1A1,
    /// Declared inference is accurate.
    S1A2,
    /// Declared non-AI use is accurate.
    S1A3,
    /// Declared models have the required properties.
    S1B,
    /// No undeclared use of declared clusters.
    S2A,
    /// No undeclared clusters inside known data centers.
    S2B1,
    /// No undeclared standalone clusters.
    S2B2,
}

impl SubgoalId {
    pub const ALL: [SubgoalId; 7] =
        [SubgoalId::S1A1, SubgoalId::S1A2, SubgoalId::S1A3, SubgoalId::S1B, SubgoalId::S2A, SubgoalId::S2B1, SubgoalId::S2B2];

    pub fn label(&self) -> &'static str {
        match self {
            SubgoalId::S1A1 => "1.A.1 training declared accurately",
            SubgoalId::S1A2 => "1.A.2 inference declared accurately",
            SubgoalId::S1A3 => "1.A.3 non-AI use declared accurately",
            SubgoalId::S1B => "1.B declared models have required properties",
            SubgoalId::S2A => "2.A no undeclared use of declared clusters",
            SubgoalId::S2B1 => "2.B.1 no undeclared clusters in known data centers",
            SubgoalId::S2B2 => "2.B.2 no undeclared standalone clusters",
        }
    }
}

impl fmt::Display for SubgoalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A measured value or threshold inside a piece of evidence.
///
/// Fractions and other reals are carried as micro-units so that evidence
/// stays integer-only and commits canonically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Count(i64),
    Micro(i64),
    Label(String),
    None,
}

impl Measure {
    pub fn count<T: TryInto<i64>>(n: T) -> Measure {
        Measure::Count(n.try_into().unwrap_or(i64::MAX))
    }

    /// Real value stored at 1e-6 resolution. Non-finite values saturate.
    pub fn real(x: f64) -> Measure {
        let scaled = (x * 1e6).round();
        let clamped = if scaled.is_nan() {
            0
        } else if scaled >= i64::MAX as f64 {
            i64::MAX
        } else if scaled <= i64::MIN as f64 {
            i64::MIN
        } else {
            scaled as i64
        };
        Measure::Micro(clamped)
    }

    pub fn label(s: impl Into<String>) -> Measure {
        Measure::Label(s.into())
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Measure::Count(n) => Some(*n as f64),
            Measure::Micro(m) => Some(*m as f64 / 1e6),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Evidence {
    pub check: String,
    pub measured: Measure,
    pub threshold: Measure,
}

impl Evidence {
    pub fn new(check: impl Into<String>, measured: Measure, threshold: Measure) -> Evidence {
        Evidence { check: check.into(), measured, threshold }
    }

    pub fn note(check: impl Into<String>, text: impl Into<String>) -> Evidence {
        Evidence::new(check, Measure::Label(text.into()), Measure::None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

/// Outcome of a single check.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict")]
pub struct Verdict {
    pub status: Status,
    pub evidence: Vec<Evidence>,
}

#[derive(Deserialize)]
struct RawVerdict {
    status: Status,
    evidence: Vec<Evidence>,
}

impl TryFrom<RawVerdict> for Verdict {
    type Error = Error;

    fn try_from(raw: RawVerdict) -> Result<Self> {
        Verdict::from_parts(raw.status, raw.evidence)
    }
}

impl Verdict {
    pub fn from_parts(status: Status, evidence: Vec<Evidence>) -> Result<Verdict> {
        if status != Status::Inconclusive && evidence.is_empty() {
            return Err(Error::Invariant(format!("{status:?} verdict without evidence")));
        }
        Ok(Verdict { status, evidence })
    }

    pub fn pass(evidence: Evidence) -> Verdict {
        Verdict { status: Status::Pass, evidence: vec![evidence] }
    }

    pub fn fail(evidence: Evidence) -> Verdict {
        Verdict { status: Status::Fail, evidence: vec![evidence] }
    }

    pub fn inconclusive(evidence: Evidence) -> Verdict {
        Verdict { status: Status::Inconclusive, evidence: vec![evidence] }
    }

    /// Pass or fail depending on `ok`, with one evidence entry.
    pub fn check(ok: bool, evidence: Evidence) -> Verdict {
        if ok {
            Verdict::pass(evidence)
        } else {
            Verdict::fail(evidence)
        }
    }

    pub fn with(mut self, evidence: Evidence) -> Verdict {
        self.evidence.push(evidence);
        self
    }

    pub fn is_pass(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn is_fail(&self) -> bool {
        self.status == Status::Fail
    }

    pub fn is_inconclusive(&self) -> bool {
        self.status == Status::Inconclusive
    }

    /// Name of the first evidence entry, used as the mechanism name.
    pub fn check_name(&self) -> Option<&str> {
        self.evidence.first().map(|e| e.check.as_str())
    }

    pub fn find(&self, check: &str) -> Option<&Evidence> {
        self.evidence.iter().find(|e| e.check == check)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overall {
    Compliant,
    NonCompliant,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subgoals: BTreeMap<SubgoalId, Vec<Verdict>>,
    pub overall: Overall,
}

impl VerificationReport {
    pub fn verdicts(&self, id: SubgoalId) -> &[Verdict] {
        self.subgoals.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_fail(&self, id: SubgoalId) -> bool {
        self.verdicts(id).iter().any(Verdict::is_fail)
    }

    /// Verdicts whose mechanism (first evidence check) is `name`.
    pub fn mechanism(&self, name: &str) -> impl Iterator<Item = &Verdict> + '_ {
        let name = name.to_string();
        self.subgoals.values().flatten().filter(move |v| v.check_name() == Some(name.as_str()))
    }
}

/// Weakest-link aggregation: one failure anywhere is non-compliance, and
/// compliance needs a pass on every one of the seven subgoals.
pub fn aggregate_report(verdicts: BTreeMap<SubgoalId, Vec<Verdict>>) -> VerificationReport {
    let mut subgoals = verdicts;
    for id in SubgoalId::ALL {
        subgoals.entry(id).or_default();
    }
    let any_fail = subgoals.values().flatten().any(Verdict::is_fail);
    let all_covered = subgoals.values().all(|vs| vs.iter().any(Verdict::is_pass));
    let overall = if any_fail {
        Overall::NonCompliant
    } else if all_covered {
        Overall::Compliant
    } else {
        Overall::Inconclusive
    };
    VerificationReport { subgoals, overall }
}
