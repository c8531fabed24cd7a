//! Emulated secure-boot chips that sign workload certificates, plus the
//! completeness checks built on them: monotonic counters, accounting
//! links, offline licensing and a chip registry.

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::accounting::{amount, Amount};
use crate::error::{Error, Result};
use crate::model::{canonical_decode_strict, canonical_encode, Digest, Evidence, Measure, Rational, Verdict};

/// Signing key derived from the chip id, so fixtures are reproducible. Real
/// chips would generate keys from hardware randomness.
pub fn chip_key(chip_id: &str) -> SigningKey {
    derived_key("verifsim/chip-key", chip_id)
}

/// Key of the party granting offline licenses.
pub fn licensor_key(licensor_id: &str) -> SigningKey {
    derived_key("verifsim/licensor-key", licensor_id)
}

fn derived_key(domain: &str, id: &str) -> SigningKey {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update((id.len() as u64).to_be_bytes());
    h.update(id.as_bytes());
    SigningKey::from_bytes(&h.finalize().into())
}

fn sign_b64<T: Serialize>(key: &SigningKey, body: &T) -> Result<String> {
    Ok(BASE64.encode(key.sign(&canonical_encode(body)?).to_bytes()))
}

fn verify_b64<T: Serialize>(key: &VerifyingKey, body: &T, signature: &str) -> std::result::Result<(), String> {
    let raw = BASE64.decode(signature).map_err(|e| format!("signature encoding: {e}"))?;
    let bytes: [u8; 64] = raw.as_slice().try_into().map_err(|_| format!("signature has {} bytes", raw.len()))?;
    let msg = canonical_encode(body).map_err(|e| e.to_string())?;
    key.verify_strict(&msg, &Signature::from_bytes(&bytes)).map_err(|_| "bad signature".to_string())
}

#[derive(Debug, Clone)]
pub struct ChipState {
    pub chip_id: String,
    signing_key: SigningKey,
    pub firmware_hash: Digest,
    pub monotonic_counter: u64,
    pub license_expiry_tick: u64,
    pub last_license_sequence: Option<u64>,
    pub current_tick: u64,
    pub throttled: bool,
}

impl ChipState {
    pub fn public_key(&self) -> VerifyingKey {
        self.signing_key.verifying_key()
    }

    fn refuse(&self, reason: impl Into<String>) -> Error {
        Error::Refused { chip_id: self.chip_id.clone(), reason: reason.into() }
    }

    /// Signed statement of the current counter value.
    pub fn attest_counter(&self) -> Result<CounterAttestation> {
        let body = CounterBody { chip_id: self.chip_id.clone(), counter: self.monotonic_counter, tick: self.current_tick };
        let signature = sign_b64(&self.signing_key, &body)?;
        Ok(CounterAttestation { body, signature })
    }
}

/// Boots a chip iff its firmware is approved. Fresh chips start at counter 0
/// with a license that expires at tick 0.
pub fn boot_chip(chip_id: &str, firmware_hash: Digest, approved_hashes: &[Digest]) -> Result<ChipState> {
    if !approved_hashes.contains(&firmware_hash) {
        return Err(Error::Refused { chip_id: chip_id.into(), reason: format!("unapproved firmware {firmware_hash}") });
    }
    Ok(ChipState {
        chip_id: chip_id.into(),
        signing_key: chip_key(chip_id),
        firmware_hash,
        monotonic_counter: 0,
        license_expiry_tick: 0,
        last_license_sequence: None,
        current_tick: 0,
        throttled: false,
    })
}

/// Reboots into `firmware_hash`. Counter and license survive the reboot.
pub fn reboot(state: &ChipState, firmware_hash: Digest, approved_hashes: &[Digest]) -> Result<ChipState> {
    let fresh = boot_chip(&state.chip_id, firmware_hash, approved_hashes)?;
    Ok(ChipState { firmware_hash: fresh.firmware_hash, ..state.clone() })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateBody {
    pub chip_id: String,
    pub counter_value: u64,
    pub declaration_commitment: Digest,
    pub result_commitment: Digest,
    pub chip_hours: Rational,
}

/// Wire form: the body fields plus a base64 Ed25519 signature over the
/// body's canonical encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadCertificate {
    #[serde(flatten)]
    pub body: CertificateBody,
    pub signature: String,
}

impl WorkloadCertificate {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        canonical_encode(self)
    }
}

pub fn issue_certificate(
    chip: &mut ChipState,
    declaration_commitment: Digest,
    result_commitment: Digest,
    chip_hours: Rational,
) -> Result<WorkloadCertificate> {
    if chip.throttled {
        return Err(chip.refuse("license expired; chip throttled"));
    }
    let body = CertificateBody {
        chip_id: chip.chip_id.clone(),
        counter_value: chip.monotonic_counter,
        declaration_commitment,
        result_commitment,
        chip_hours,
    };
    let signature = sign_b64(&chip.signing_key, &body)?;
    chip.monotonic_counter += 1;
    Ok(WorkloadCertificate { body, signature })
}

pub fn verify_certificate(cert: &WorkloadCertificate, public_key: &VerifyingKey) -> Verdict {
    match verify_b64(public_key, &cert.body, &cert.signature) {
        Ok(()) => Verdict::pass(Evidence::new("certificate.signature", Measure::label("valid"), Measure::None)),
        Err(msg) => Verdict::fail(Evidence::new("certificate.signature", Measure::label(msg), Measure::None)),
    }
}

/// Verifies a certificate straight from its wire bytes. Bytes that do not
/// decode, or are not the canonical encoding of what they decode to, fail.
pub fn verify_certificate_bytes(bytes: &[u8], public_key: &VerifyingKey) -> Verdict {
    match canonical_decode_strict::<WorkloadCertificate>(bytes) {
        Ok(cert) => verify_certificate(&cert, public_key),
        Err(e) => Verdict::fail(Evidence::new("certificate.parse", Measure::label(e.to_string()), Measure::None)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterBody {
    pub chip_id: String,
    pub counter: u64,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterAttestation {
    #[serde(flatten)]
    pub body: CounterBody,
    pub signature: String,
}

pub fn verify_counter_attestation(att: &CounterAttestation, public_key: &VerifyingKey) -> Verdict {
    match verify_b64(public_key, &att.body, &att.signature) {
        Ok(()) => Verdict::pass(Evidence::new("counter.attestation", Measure::count(att.body.counter), Measure::None)),
        Err(msg) => Verdict::fail(Evidence::new("counter.attestation", Measure::label(msg), Measure::None)),
    }
}

fn join(values: impl IntoIterator<Item = u64>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// One chip's certificates must carry counters exactly `0..final`, in order.
pub fn check_counter_continuity(certs: &[WorkloadCertificate], attested_final_counter: u64) -> Verdict {
    let counters: Vec<u64> = certs.iter().map(|c| c.body.counter_value).collect();
    let chips: BTreeSet<&str> = certs.iter().map(|c| c.body.chip_id.as_str()).collect();
    if chips.len() > 1 {
        return Verdict::fail(Evidence::note("counter.mixed_chips", chips.into_iter().collect::<Vec<_>>().join(",")));
    }
    let mut seen = BTreeMap::new();
    for &c in &counters {
        *seen.entry(c).or_insert(0u32) += 1;
    }
    let duplicates: Vec<u64> = seen.iter().filter(|(_, &n)| n > 1).map(|(&c, _)| c).collect();
    if !duplicates.is_empty() {
        return Verdict::fail(Evidence::new("counter.duplicates", Measure::label(join(duplicates)), Measure::None));
    }
    let missing: Vec<u64> = (0..attested_final_counter).filter(|c| !seen.contains_key(c)).collect();
    if !missing.is_empty() {
        return Verdict::fail(Evidence::new("counter.missing", Measure::label(join(missing)), Measure::None));
    }
    let beyond: Vec<u64> = seen.keys().copied().filter(|&c| c >= attested_final_counter).collect();
    if !beyond.is_empty() {
        return Verdict::fail(Evidence::new(
            "counter.beyond_attested",
            Measure::label(join(beyond)),
            Measure::count(attested_final_counter),
        ));
    }
    if let Some(i) = counters.windows(2).position(|w| w[1] < w[0]) {
        return Verdict::fail(Evidence::new("counter.out_of_order", Measure::count(i + 1), Measure::None));
    }
    Verdict::pass(Evidence::new("counter.missing", Measure::label(""), Measure::count(attested_final_counter)))
}

/// Certificates must account for the verified chip time: their total lies
/// in `[total * (1 - tolerance), total]`.
pub fn compute_accounting_link(certs: &[WorkloadCertificate], verified_total_chip_hours: Amount, tolerance: Rational) -> Verdict {
    let sum = certs.iter().fold(Amount::from_integer(0), |acc, c| acc + amount(c.body.chip_hours));
    let one = Amount::from_integer(1);
    let tol = amount(tolerance).min(one);
    let lower = verified_total_chip_hours * (one - tol);
    let to_f = |a: &Amount| *a.numer() as f64 / *a.denom() as f64;
    let measured = Measure::real(if verified_total_chip_hours == Amount::from_integer(0) {
        to_f(&sum)
    } else {
        to_f(&(sum / verified_total_chip_hours))
    });
    let ev = Evidence::new("certificate.hours_fraction", measured, Measure::real(to_f(&(one - tol))));
    if sum > verified_total_chip_hours {
        let excess = sum - verified_total_chip_hours;
        return Verdict::fail(ev).with(Evidence::new("certificate.hours_excess", Measure::real(to_f(&excess)), Measure::None));
    }
    if sum < lower {
        let residual = verified_total_chip_hours - sum;
        return Verdict::fail(ev).with(Evidence::new(
            "certificate.hours_residual",
            Measure::real(to_f(&residual)),
            Measure::None,
        ));
    }
    Verdict::pass(ev)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseBody {
    pub chip_id: String,
    /// Strictly increasing per chip; replays are rejected.
    pub sequence: u64,
    pub period_ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseGrant {
    #[serde(flatten)]
    pub body: LicenseBody,
    pub signature: String,
}

pub fn grant_license(licensor: &SigningKey, chip_id: &str, sequence: u64, period_ticks: u64) -> Result<LicenseGrant> {
    let body = LicenseBody { chip_id: chip_id.into(), sequence, period_ticks };
    Ok(LicenseGrant { signature: sign_b64(licensor, &body)?, body })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LicenseEvent {
    pub chip_id: String,
    pub tick: u64,
    pub accepted: bool,
    pub detail: String,
}

/// Advances the chip to `current_tick`, applying `grant` if it is valid.
/// Invalid grants are ignored and logged.
pub fn license_cycle(
    chip: &ChipState,
    grant: Option<&LicenseGrant>,
    licensor: &VerifyingKey,
    current_tick: u64,
    log: &mut Vec<LicenseEvent>,
) -> ChipState {
    let mut next = chip.clone();
    next.current_tick = next.current_tick.max(current_tick);
    if let Some(g) = grant {
        let problem = if g.body.chip_id != chip.chip_id {
            Some(format!("grant for {}", g.body.chip_id))
        } else if chip.last_license_sequence.is_some_and(|s| g.body.sequence <= s) {
            Some(format!("replayed sequence {}", g.body.sequence))
        } else {
            verify_b64(licensor, &g.body, &g.signature).err()
        };
        let accepted = problem.is_none();
        if accepted {
            next.license_expiry_tick = next.license_expiry_tick.max(next.current_tick) + g.body.period_ticks;
            next.last_license_sequence = Some(g.body.sequence);
        }
        log.push(LicenseEvent {
            chip_id: chip.chip_id.clone(),
            tick: next.current_tick,
            accepted,
            detail: problem.unwrap_or_else(|| format!("extended to {}", next.license_expiry_tick)),
        });
    }
    next.throttled = next.current_tick > next.license_expiry_tick;
    next
}

/// Every certifying chip must be registered, and no more than
/// `silent_threshold` of registered chips may go unseen.
pub fn registry_reconcile(declared_chip_ids: &[String], observed_chip_ids: &[String], silent_threshold: Rational) -> Verdict {
    let declared: BTreeSet<&str> = declared_chip_ids.iter().map(String::as_str).collect();
    let observed: BTreeSet<&str> = observed_chip_ids.iter().map(String::as_str).collect();
    let unregistered: Vec<&str> = observed.difference(&declared).copied().collect();
    if !unregistered.is_empty() {
        return Verdict::fail(Evidence::new("registry.unregistered", Measure::label(unregistered.join(",")), Measure::None));
    }
    let silent = declared.difference(&observed).count();
    let fraction =
        if declared.is_empty() { Rational::from_integer(0) } else { Rational::new(silent as u64, declared.len() as u64) };
    let to_f = |r: Rational| *r.numer() as f64 / *r.denom() as f64;
    Verdict::check(
        fraction <= silent_threshold,
        Evidence::new("registry.silent_fraction", Measure::real(to_f(fraction)), Measure::real(to_f(silent_threshold))),
    )
}
