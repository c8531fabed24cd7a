//! Pinned digests of deterministic outputs, plus a from-scratch
//! recomputation of the seed and stream derivations.

use sha2::{Digest as _, Sha256};
use verifsim_core::detnet::fixtures::{training_data_for, training_declaration};
use verifsim_core::detnet::{initial_checkpoint, prng_stream, ComputeProfile, Engine};
use verifsim_core::model::{commit_value, Seed};
use verifsim_core::scenarios::{run_scenario, Scenario};

fn sha(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

#[test]
fn seed_and_stream_match_a_direct_hash() {
    let seed = sha(&[b"verifsim/seed", &1u64.to_be_bytes()]);
    assert_eq!(Seed::from_u64(1).0, seed);
    let child = sha(&[b"verifsim/derive", &seed, &5u32.to_be_bytes(), b"child"]);
    assert_eq!(Seed::from_u64(1).derive("child").0, child);
    let draws = prng_stream(&Seed::from_u64(1), "golden", 3);
    for (k, d) in draws.iter().enumerate() {
        let out = sha(&[&seed, &6u32.to_be_bytes(), b"golden", &(k as u64).to_be_bytes()]);
        assert_eq!(*d, u64::from_be_bytes(out[..8].try_into().unwrap()));
    }
    assert_eq!(draws, [13926707636810264086, 11322938876290065183, 17830079557829945139]);
}

#[test]
fn fixture_training_digests() {
    let decl = training_declaration(1);
    let data = training_data_for(&decl.master_seed);
    assert_eq!(decl.commitment().unwrap().to_hex(), "5d5d24ef5bbceba3573827448a6f21187404e844918814cf1941fbe97ed8f990");
    assert_eq!(data.commitment().to_hex(), "d19bac1d238a4c5c2438c376f10da8c123cd45d037e66614a9b9b2ba71ee00bc");
    let init = initial_checkpoint(&decl).unwrap();
    assert_eq!(init.weights_commitment.to_hex(), "70e696456a1d1ba08dba09bfdaa729174b154395707dcd087b083ea665e77a68");
    let run = Engine::new(ComputeProfile::default()).run_training(&decl, &data).unwrap();
    assert_eq!(run.final_weights().commitment().to_hex(), "a4cee2a5d1d52e87b12b2e2e9f2f4010d93e6bf2b13ff764d53ddb4bf735d186");
}

#[test]
fn honest_report_digest() {
    let report = run_scenario(&Scenario::honest(1)).unwrap();
    assert_eq!(commit_value(&report).unwrap().to_hex(), "a31a18d8a3058721fc0a1de3a5e8a40e85a7f92349f6f842e312e2abf417ba2f");
}
