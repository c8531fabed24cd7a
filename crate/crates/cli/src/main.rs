use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use verifsim_core::detnet::data::{synthetic_dataset, TaskKind};
use verifsim_core::detnet::init_weights;
use verifsim_core::model::{canonical_encode, write_canonical_file, Overall, Seed};
use verifsim_core::oracle::{self, OracleKind};
use verifsim_core::scenarios::{
    detection_rate, prove, verifier_seed_for, verify, weakest_link, DetectionSummary, EvidenceBundle, Scenario, VerifierConfig,
    WorldConfig, MECHANISMS,
};
use verifsim_core::svg;

const EXIT_COMPLIANT: u8 = 0;
const EXIT_BAD_INPUT: u8 = 2;
const EXIT_NON_COMPLIANT: u8 = 3;
const EXIT_INCONCLUSIVE: u8 = 4;

#[derive(Parser)]
#[command(name = "verifsim", version, about = "Deterministic Prover/Verifier simulator for AI compute verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Prover scenario and write its evidence files
    Simulate(SimulateArgs),
    /// Check a run directory; exit 0 compliant, 3 non-compliant, 4 inconclusive
    Verify(VerifyArgs),
    /// Monte Carlo detection rates of a scenario
    Attack(AttackArgs),
    /// Collect detection summaries into one report
    Report(ReportArgs),
    /// Emit brute-force reference values
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice; there is no other entropy source
    #[arg(long)]
    seed: u64,
    /// Relative standard deviation of the power sensor
    #[arg(long, default_value_t = 0.01)]
    noise_sigma: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (VERIFSIM_OUT takes precedence)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `simulate`
    run: PathBuf,
    /// Where report.json goes; defaults to the run directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Switch a mechanism, e.g. `--toggle glue=off`
    #[arg(long = "toggle", value_name = "MECHANISM=on|off")]
    toggles: Vec<String>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    /// Worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "toggle", value_name = "MECHANISM=on|off")]
    toggles: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `.summary.json` files
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    seed: u64,
    /// rational_forward | finite_diff | binomial_bounds | detection_formula | wrap_exhaustive
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 10)]
    m: u32,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Svg,
}

/// Failure that maps to the bad-input exit code.
#[derive(Debug)]
struct BadInput(anyhow::Error);

fn bad(e: impl Into<anyhow::Error>) -> BadInput {
    BadInput(e.into())
}

fn out_dir(flag: Option<PathBuf>) -> Option<PathBuf> {
    std::env::var_os("VERIFSIM_OUT").map(PathBuf::from).or(flag)
}

fn world(common: &Common) -> anyhow::Result<WorldConfig> {
    if !(common.noise_sigma >= 0.0 && common.noise_sigma.is_finite()) {
        bail!("--noise-sigma must be a finite non-negative number");
    }
    Ok(WorldConfig { noise_sigma: common.noise_sigma, ..WorldConfig::default() })
}

fn verifier_config(common: &Common, toggles: &[String]) -> anyhow::Result<VerifierConfig> {
    let mut cfg = VerifierConfig { noise_sigma: common.noise_sigma, ..VerifierConfig::default() };
    for t in toggles {
        let (name, state) = t.split_once('=').with_context(|| format!("toggle `{t}` is not MECHANISM=on|off"))?;
        let on = match state {
            "on" => true,
            "off" => false,
            other => bail!("toggle state `{other}` is not on|off"),
        };
        cfg.set(name, on).with_context(|| format!("known mechanisms: {}", MECHANISMS.join(", ")))?;
    }
    Ok(cfg)
}

fn load_scenario(path: &Path, seed: u64) -> anyhow::Result<Scenario> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario = Scenario::from_json(&bytes).with_context(|| format!("parsing {}", path.display()))?;
    scenario.seed = seed;
    Ok(scenario)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn simulate(args: SimulateArgs) -> Result<u8, BadInput> {
    let scenario = load_scenario(&args.scenario, args.common.seed).map_err(bad)?;
    let world = world(&args.common).map_err(bad)?;
    let out = out_dir(args.out).ok_or_else(|| bad(anyhow::anyhow!("--out or VERIFSIM_OUT is required")))?;
    let run = prove(&scenario, &world).map_err(bad)?;
    run.bundle.write_dir(&out).map_err(bad)?;
    log::info!("{} evidence written to {}", scenario.name, out.display());
    println!(
        "{}: {} certificates, {} tapped messages -> {}",
        scenario.name,
        run.bundle.certificates.len(),
        run.bundle.tap.as_ref().map_or(0, |t| t.entries.len()),
        out.display()
    );
    Ok(EXIT_COMPLIANT)
}

fn verify_run(args: VerifyArgs) -> Result<u8, BadInput> {
    let cfg = verifier_config(&args.common, &args.toggles).map_err(bad)?;
    let bundle = EvidenceBundle::read_dir(&args.run).map_err(bad)?;
    let verification = verify(&bundle, &cfg, &verifier_seed_for(args.common.seed)).map_err(bad)?;
    let out = out_dir(args.out).unwrap_or_else(|| args.run.clone());
    write_canonical_file(&out.join("report.json"), &verification.report).map_err(bad)?;
    for o in &verification.outcomes {
        log::info!("{:<14} {:<5} {:?}", o.mechanism, o.subgoal, o.status);
    }
    let overall = verification.report.overall;
    println!("{}", serde_json::to_string(&overall).expect("enum serializes").trim_matches('"'));
    Ok(match overall {
        Overall::Compliant => EXIT_COMPLIANT,
        Overall::NonCompliant => EXIT_NON_COMPLIANT,
        Overall::Inconclusive => EXIT_INCONCLUSIVE,
    })
}

fn attack(args: AttackArgs) -> Result<u8, BadInput> {
    let scenario = load_scenario(&args.scenario, args.common.seed).map_err(bad)?;
    let world = world(&args.common).map_err(bad)?;
    let cfg = verifier_config(&args.common, &args.toggles).map_err(bad)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build().map_err(bad)?;
    let summary = pool.install(|| detection_rate(&scenario, args.trials, &world, &cfg)).map_err(bad)?;
    println!("{}: detected {}/{} (inconclusive {})", summary.scenario, summary.detected, summary.trials, summary.inconclusive);
    if let Some(out) = out_dir(args.out) {
        let name = &summary.scenario;
        write_bytes(&out.join(format!("{name}.summary.json")), &canonical_encode(&summary).map_err(bad)?).map_err(bad)?;
        if args.format == Format::Svg {
            write_bytes(&out.join(format!("{name}.svg")), svg::mechanism_chart(&summary).as_bytes()).map_err(bad)?;
        }
    }
    Ok(EXIT_COMPLIANT)
}

fn read_summaries(dir: &Path) -> anyhow::Result<Vec<DetectionSummary>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".summary.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .summary.json files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", p.display()))
        })
        .collect()
}

fn report(args: ReportArgs) -> Result<u8, BadInput> {
    let summaries = read_summaries(&args.input).map_err(bad)?;
    let (body, name) = match args.format {
        Format::Svg => (svg::summaries_chart(&summaries), "detection.svg"),
        Format::Json => {
            let weakest = weakest_link(&summaries).map(|(s, r)| json!({"scenario": s, "rate": r}));
            let rows: Vec<_> = summaries
                .iter()
                .map(|s| json!({"scenario": s.scenario, "behavior": s.behavior, "trials": s.trials, "rate": s.rate()}))
                .collect();
            let doc = json!({"scenarios": rows, "weakest_link": weakest});
            (serde_json::to_string_pretty(&doc).map_err(bad)? + "\n", "detection.json")
        }
    };
    match out_dir(args.out) {
        Some(out) => write_bytes(&out.join(name), body.as_bytes()).map_err(bad)?,
        None => print!("{body}"),
    }
    Ok(EXIT_COMPLIANT)
}

const ORACLE_ARCH: [u32; 3] = [8, 6, 2];

fn run_oracle(args: &OracleArgs) -> anyhow::Result<serde_json::Value> {
    let kind: OracleKind = args.kind.parse()?;
    let seed = Seed::from_u64(args.seed);
    let fixture = || -> anyhow::Result<_> {
        let weights = init_weights(&ORACLE_ARCH, &seed.derive("oracle-net"))?;
        let data = synthetic_dataset(&seed.derive("oracle-data"), &ORACLE_ARCH, 1, 4, TaskKind::Random);
        Ok((weights, data.batches.into_iter().next().expect("one batch")))
    };
    Ok(match kind {
        OracleKind::RationalForward => {
            let (weights, batch) = fixture()?;
            let outputs: Vec<Vec<i64>> = (0..batch.items())
                .map(|i| oracle::rational_forward(&weights, &batch.input(i).iter().map(|v| v.raw()).collect::<Vec<_>>()))
                .collect();
            json!({"kind": kind.name(), "architecture": ORACLE_ARCH, "weights": weights.commitment(), "outputs_raw": outputs})
        }
        OracleKind::FiniteDiff => {
            let (weights, batch) = fixture()?;
            json!({"kind": kind.name(), "architecture": ORACLE_ARCH, "weights": weights.commitment(), "h": 1e-6,
                   "gradient": oracle::finite_diff(&weights, &batch, 1e-6)})
        }
        OracleKind::BinomialBounds => {
            let b = oracle::binomial_bounds(args.p, args.trials, 3.0)?;
            json!({"kind": kind.name(), "p": args.p, "n": args.trials, "sigmas": 3, "bounds": b})
        }
        OracleKind::DetectionFormula => {
            json!({"kind": kind.name(), "p": args.p, "m": args.m, "probability": oracle::detection_formula(args.p, args.m)?})
        }
        OracleKind::WrapExhaustive => json!({"kind": kind.name(), "report": oracle::wrap_exhaustive()}),
    })
}

fn oracle_cmd(args: OracleArgs) -> Result<u8, BadInput> {
    let value = run_oracle(&args).map_err(bad)?;
    let body = serde_json::to_string_pretty(&value).map_err(bad)? + "\n";
    match out_dir(args.out.clone()) {
        Some(out) => write_bytes(&out.join(format!("{}.oracle.json", args.kind)), body.as_bytes()).map_err(bad)?,
        None => print!("{body}"),
    }
    Ok(EXIT_COMPLIANT)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify_run(a),
        Command::Attack(a) => attack(a),
        Command::Report(a) => report(a),
        Command::Oracle(a) => oracle_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(BadInput(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_BAD_INPUT)
        }
    }
}
