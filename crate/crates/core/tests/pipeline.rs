use std::fs;

use verifsim_core::detnet::Checkpoint;
use verifsim_core::model::{Overall, Status, SubgoalId};
use verifsim_core::scenarios::{
    attack_catalog, prove, verifier_seed_for, verify, EvidenceBundle, ProverBehavior, Scenario, VerifierConfig, WorldConfig,
};

fn verify_dir(dir: &std::path::Path, seed: u64, cfg: &VerifierConfig) -> verifsim_core::scenarios::Verification {
    let bundle = EvidenceBundle::read_dir(dir).unwrap();
    verify(&bundle, cfg, &verifier_seed_for(seed)).unwrap()
}

fn written(scenario: &Scenario) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    prove(scenario, &WorldConfig::default()).unwrap().bundle.write_dir(dir.path()).unwrap();
    dir
}

#[test]
fn honest_run_survives_the_filesystem() {
    let dir = written(&Scenario::honest(21));
    let v = verify_dir(dir.path(), 21, &VerifierConfig::default());
    assert_eq!(v.report.overall, Overall::Compliant, "{:?}", v.failing_mechanisms());
}

#[test]
fn only_the_honest_catalog_entry_is_compliant() {
    for scenario in attack_catalog(8) {
        let run = prove(&scenario, &WorldConfig::default()).unwrap();
        let v = verify(&run.bundle, &VerifierConfig::default(), &verifier_seed_for(scenario.seed)).unwrap();
        let honest = matches!(scenario.behavior, ProverBehavior::Honest);
        assert_eq!(v.report.overall == Overall::Compliant, honest, "{}: {:?}", scenario.name, v.failing_mechanisms());
    }
}

#[test]
fn flipped_certificate_byte_fails_certificates() {
    let dir = written(&Scenario::honest(22));
    let cert = fs::read_dir(dir.path().join("certs")).unwrap().next().unwrap().unwrap().path();
    let mut bytes = fs::read(&cert).unwrap();
    let pos = bytes.iter().position(|&b| b == b'"').unwrap() + 1;
    bytes[pos] ^= 0x01;
    fs::write(&cert, bytes).unwrap();
    let v = verify_dir(dir.path(), 22, &VerifierConfig::default());
    assert!(v.failing_mechanisms().contains("certificates"), "{:?}", v.failing_mechanisms());
}

#[test]
fn checkpoint_not_matching_its_commitment_fails() {
    let mut run = prove(&Scenario::honest(27), &WorldConfig::default()).unwrap();
    let transcript = run.bundle.transcripts.values_mut().next().unwrap();
    let last = transcript.checkpoints.len() - 1;
    transcript.checkpoints[last].weights.layers[1].biases[0].0 ^= 4;
    let v = verify(&run.bundle, &VerifierConfig::only(&["faithfulness"]).unwrap(), &verifier_seed_for(27)).unwrap();
    assert_eq!(v.report.overall, Overall::NonCompliant);
}

#[test]
fn edited_checkpoint_fails_replay() {
    let scenario = Scenario::honest(23);
    let mut run = prove(&scenario, &WorldConfig::default()).unwrap();
    let transcript = run.bundle.transcripts.values_mut().next().unwrap();
    let last = transcript.checkpoints.len() - 1;
    let old = transcript.checkpoints[last].clone();
    let mut weights = old.weights;
    weights.layers[0].weights[0].0 = weights.layers[0].weights[0].0.wrapping_add(1);
    let forged = Checkpoint::new(old.step_index, weights, old.optimizer_state, old.rng_cursor);
    transcript.commitments[last] = forged.commitments();
    transcript.checkpoints[last] = forged;
    let mut cfg = VerifierConfig::only(&["faithfulness"]).unwrap();
    cfg.sample_segments = 10;
    let v = verify(&run.bundle, &cfg, &verifier_seed_for(23)).unwrap();
    assert_eq!(v.report.overall, Overall::NonCompliant);
    assert!(v.report.has_fail(SubgoalId::S1A1));
}

#[test]
fn missing_power_trace_leaves_accounting_inconclusive() {
    let dir = written(&Scenario::honest(24));
    fs::remove_file(dir.path().join("power.trace.json")).unwrap();
    let v = verify_dir(dir.path(), 24, &VerifierConfig::default());
    assert!(v.status_of("accounting").iter().all(|s| *s == Status::Inconclusive));
    assert!(!v.status_of("accounting").is_empty());
}

#[test]
fn glue_is_caught_with_the_glue_mechanism_disabled() {
    let scenario = Scenario::new("glue", ProverBehavior::Glue { boundary: 6 }, 25);
    let run = prove(&scenario, &WorldConfig::default()).unwrap();
    let mut cfg = VerifierConfig::default();
    cfg.set("glue", false).unwrap();
    let v = verify(&run.bundle, &cfg, &verifier_seed_for(25)).unwrap();
    assert_eq!(v.report.overall, Overall::NonCompliant);
    assert!(!v.failing_mechanisms().contains("glue"));
}

#[test]
fn tampered_declaration_is_rejected_or_flagged() {
    let dir = written(&Scenario::honest(26));
    let decl = fs::read_dir(dir.path().join("decl"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("train-"));
    let decl = decl.unwrap();
    let text = fs::read_to_string(&decl).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let ops = value["claimed_model_ops"].as_u64().unwrap();
    value["claimed_model_ops"] = serde_json::json!(ops * 2);
    fs::write(&decl, serde_json::to_vec(&value).unwrap()).unwrap();
    let v = verify_dir(dir.path(), 26, &VerifierConfig::default());
    assert_eq!(v.report.overall, Overall::NonCompliant);
}
