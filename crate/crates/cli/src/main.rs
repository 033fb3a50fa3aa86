//! `hllguard` command-line driver.
//!
//! Exit codes:
//!
//! | code | meaning                                  |
//! |------|------------------------------------------|
//! | 0    | success                                  |
//! | 1    | I/O or other failure                     |
//! | 2    | usage error                              |
//! | 3    | malformed sketch, attack-set or flow file |
//! | 4    | sketches are not mergeable               |
//! | 5    | manipulation detected                    |

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hllguard::attack::{craft_inflation, craft_m1, filter_m2, AttackSet, BlackBox, OracleBudget};
use hllguard::experiment::{
    detect, fig4, histogram_csv, m2, trial_rng, DetectConfig, Fig4Config, M2Config, SnsSetup, Threshold,
};
use hllguard::flows::{self, port_sweep, random_base_flow, ElementFormat, FlowTemplate};
use hllguard::hll::{merge, precision_for, HashConfig, Sketch};
use hllguard::sns::{sns_merge, SnsSketch};
use hllguard::stats::normal_cdf;
use hllguard::Error;
use rand::RngCore;
use serde_json::{json, Value};

const EXIT_OTHER: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_UNMERGEABLE: u8 = 4;
const EXIT_ATTACK: u8 = 5;

#[derive(Parser)]
#[command(
    name = "hllguard",
    version,
    about = "HyperLogLog sketches, estimate-manipulation attacks and the SNS guard"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plain HyperLogLog sketch files.
    #[command(subcommand)]
    Sketch(SketchCmd),
    /// Build attack sets.
    #[command(subcommand)]
    Attack(AttackCmd),
    /// Salted + unsalted protected sketches.
    #[command(subcommand)]
    Sns(SnsCmd),
    /// Seeded experiments that print JSON reports.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Subcommand)]
enum SketchCmd {
    New {
        #[arg(short = 'b', long, default_value_t = 14)]
        precision: u8,
        #[command(flatten)]
        hash: HashArgs,
        /// Add a secret salt; drawn from --seed, or from OS entropy without one.
        #[arg(long)]
        salted: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    Insert {
        sketch: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        /// Write here instead of updating the sketch in place.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Estimate {
        sketch: PathBuf,
    },
    Merge {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Info {
        sketch: PathBuf,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Elements of rank exactly 1 under a known hash configuration.
    CraftM1 {
        #[arg(long)]
        count: usize,
        #[arg(short = 'b', long, default_value_t = 14)]
        precision: u8,
        #[command(flatten)]
        hash: HashArgs,
        /// Seeds the port-sweep candidate stream.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Elements of rank at least --min-rank, from a fixed candidate budget.
    CraftInflation {
        #[arg(long)]
        min_rank: u8,
        #[arg(long)]
        budget: u64,
        #[arg(short = 'b', long, default_value_t = 14)]
        precision: u8,
        #[command(flatten)]
        hash: HashArgs,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Black-box insert-and-observe filtering against an unsalted victim.
    FilterM2(M2Args),
}

#[derive(Subcommand)]
enum SnsCmd {
    New {
        #[arg(long, default_value_t = 1024)]
        m_salted: usize,
        #[arg(long, default_value_t = 1024)]
        m_unsalted: usize,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[command(flatten)]
        hash: HashArgs,
        /// Also flag estimates that are inflated rather than deflated.
        #[arg(long)]
        two_sided: bool,
        /// Seeds the salt; OS entropy without one.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    Insert {
        sketch: PathBuf,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the verdict; exits 5 when manipulation is detected.
    Check { sketch: PathBuf },
    /// Merge two nodes; exits 5 when either input is flagged.
    Merge {
        left: PathBuf,
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Distribution of the normalized salted/unsalted estimate gap on clean data.
    Fig4 {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 100_000)]
        cardinality: u64,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value_t = 0.25)]
        range: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Histogram CSV path; the summary JSON goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection rate of an attack set plus a clean false-positive control.
    Detect {
        /// Attack-set or element file; without one an M1 set is generated.
        #[arg(long)]
        attack: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Size of the generated M1 set.
        #[arg(long, default_value_t = 100_000)]
        m1_count: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 100)]
        control_trials: usize,
        /// Clean elements mixed in per attack element.
        #[arg(long, default_value_t = 0.0)]
        clean_ratio: f64,
        #[command(flatten)]
        geometry: GeometryArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
        #[arg(long)]
        two_sided: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Black-box filtering experiment; report JSON to stdout.
    M2(M2Args),
}

#[derive(Args)]
struct HashArgs {
    /// Public hash seed, used for both index and value digests.
    #[arg(long, default_value_t = 0)]
    hash_seed: u64,
}

impl HashArgs {
    fn config(&self) -> HashConfig {
        HashConfig::unsalted(self.hash_seed)
    }
}

#[derive(Args)]
struct GeometryArgs {
    #[arg(long, default_value_t = 1024)]
    m_salted: usize,
    #[arg(long, default_value_t = 1024)]
    m_unsalted: usize,
}

#[derive(Args)]
struct ThresholdArgs {
    /// False-positive target used to calibrate the threshold.
    #[arg(long, conflicts_with = "dt")]
    fp_target: Option<f64>,
    /// Fixed normalized-difference threshold.
    #[arg(long)]
    dt: Option<f64>,
}

impl ThresholdArgs {
    fn threshold(&self, default: Threshold) -> Threshold {
        match (self.fp_target, self.dt) {
            (Some(p), _) => Threshold::FpTarget(p),
            (None, Some(d)) => Threshold::Fixed(d),
            (None, None) => default,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// Element file: flow CSV, hex lines or an attack-set file.
    #[arg(long, conflicts_with = "generate", required_unless_present = "generate")]
    input: Option<PathBuf>,
    /// Defaults to csv for `.csv` files and hex lines otherwise.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Insert this many random five-tuple flows instead of reading a file.
    #[arg(long)]
    generate: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl InputArgs {
    fn elements(&self) -> hllguard::Result<Vec<Vec<u8>>> {
        match (&self.input, self.generate) {
            (Some(path), _) => read_input(path, self.format),
            (None, Some(n)) => generated_flows(self.seed, n),
            (None, None) => unreachable!("clap requires one of --input/--generate"),
        }
    }
}

#[derive(Args)]
struct M2Args {
    #[arg(long, default_value_t = 250_000)]
    candidates: usize,
    #[arg(long, default_value_t = 3)]
    rounds: u32,
    #[arg(short = 'b', long, default_value_t = 14)]
    precision: u8,
    #[command(flatten)]
    hash: HashArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Attack-set output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Hex,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) => EXIT_OTHER,
            Error::Decode(_) | Error::Parse { .. } => EXIT_FORMAT,
            Error::PrecisionMismatch { .. } | Error::ConfigMismatch { .. } => EXIT_UNMERGEABLE,
            Error::AttackDetected { .. } => EXIT_ATTACK,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("hllguard: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult<u8> {
    match command {
        Command::Sketch(c) => sketch(c).map(|()| 0),
        Command::Attack(c) => attack(c).map(|()| 0),
        Command::Sns(c) => sns(c),
        Command::Experiment(c) => experiment(c).map(|()| 0),
    }
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    // a closed pipe is not an error
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn read_input(path: &Path, format: Option<Format>) -> hllguard::Result<Vec<Vec<u8>>> {
    let format = match format {
        Some(Format::Csv) => ElementFormat::Csv,
        Some(Format::Hex) => ElementFormat::HexLines,
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => ElementFormat::Csv,
        None => ElementFormat::HexLines,
    };
    flows::read_elements(path, format)
}

fn generated_flows(seed: u64, count: usize) -> hllguard::Result<Vec<Vec<u8>>> {
    flows::generate_flows(seed, count, &FlowTemplate::default())?
        .iter()
        .map(|f| f.encode())
        .collect()
}

/// Port sweep from a random base flow, the candidate stream for crafted sets.
fn sweep_candidates(seed: u64) -> impl Iterator<Item = Vec<u8>> {
    port_sweep(random_base_flow(seed)).map(|f| f.encode().expect("sweep keeps one address family"))
}

fn entropy(seed: Option<u64>) -> Box<dyn RngCore> {
    match seed {
        Some(s) => Box::new(trial_rng(s, 0)),
        None => Box::new(rand::rng()),
    }
}

fn load_sketch(path: &Path) -> CliResult<Sketch> {
    Ok(Sketch::from_bytes(&fs::read(path).map_err(Error::from)?)?)
}

fn load_sns(path: &Path) -> CliResult<SnsSketch> {
    Ok(SnsSketch::from_bytes(&fs::read(path).map_err(Error::from)?)?)
}

fn write(path: &Path, bytes: &[u8]) -> CliResult {
    fs::write(path, bytes).map_err(|e| Error::from(e).into())
}

fn sketch(cmd: SketchCmd) -> CliResult {
    match cmd {
        SketchCmd::New {
            precision,
            hash,
            salted,
            seed,
            out,
        } => {
            let mut config = hash.config();
            if salted {
                config = config.with_salt(entropy(seed).next_u64());
            }
            write(&out, &Sketch::new(precision, config)?.to_bytes())
        }
        SketchCmd::Insert { sketch, input, out } => {
            let mut s = load_sketch(&sketch)?;
            s.insert_all(input.elements()?);
            write(out.as_ref().unwrap_or(&sketch), &s.to_bytes())
        }
        SketchCmd::Estimate { sketch } => {
            let _ = writeln!(io::stdout().lock(), "{:.3}", load_sketch(&sketch)?.estimate());
            Ok(())
        }
        SketchCmd::Merge { left, right, out } => {
            let merged = merge(&load_sketch(&left)?, &load_sketch(&right)?)?;
            write(&out, &merged.to_bytes())
        }
        SketchCmd::Info { sketch } => {
            let s = load_sketch(&sketch)?;
            print_json(&sketch_info(&s));
            Ok(())
        }
    }
}

fn sketch_info(s: &Sketch) -> Value {
    json!({
        "m": s.num_registers(),
        "b": s.precision(),
        "salted": s.is_salted(),
        "zero_registers": s.zero_register_count(),
        "estimate": s.estimate(),
        "config_fingerprint": s.config().fingerprint(s.precision()),
    })
}

/// Stats shared by the crafted-set commands, measured on a fresh target sketch.
fn crafted_stats(set: &AttackSet, config: &HashConfig, precision: u8, examined: u64, min_rank: u8) -> CliResult<Value> {
    let mut target = Sketch::new(precision, *config)?;
    let mut matching = 0usize;
    for e in set.elements() {
        if target.hash(e).value >= min_rank {
            matching += 1;
        }
        target.insert(e);
    }
    let n = set.true_cardinality();
    let estimate = target.estimate();
    Ok(json!({
        "model": set.model(),
        "count": n,
        "candidates_examined": examined,
        "min_rank": min_rank,
        "matching_fraction": if n == 0 { 1.0 } else { matching as f64 / n as f64 },
        "estimate": estimate,
        "ratio": if n == 0 { Value::Null } else { json!(estimate / n as f64) },
        "config_fingerprint": set.config_fingerprint(),
    }))
}

fn attack(cmd: AttackCmd) -> CliResult {
    match cmd {
        AttackCmd::CraftM1 {
            count,
            precision,
            hash,
            seed,
            out,
        } => {
            let config = hash.config();
            let crafted = craft_m1(&config, precision, count, sweep_candidates(seed))?;
            crafted.set.save(&out)?;
            print_json(&crafted_stats(
                &crafted.set,
                &config,
                precision,
                crafted.candidates_examined,
                1,
            )?);
            Ok(())
        }
        AttackCmd::CraftInflation {
            min_rank,
            budget,
            precision,
            hash,
            seed,
            out,
        } => {
            let config = hash.config();
            let crafted = craft_inflation(&config, precision, min_rank, budget, sweep_candidates(seed))?;
            crafted.set.save(&out)?;
            print_json(&crafted_stats(
                &crafted.set,
                &config,
                precision,
                crafted.candidates_examined,
                min_rank,
            )?);
            Ok(())
        }
        AttackCmd::FilterM2(args) => {
            if args.rounds == 0 {
                return Err(usage("--rounds must be at least 1"));
            }
            let template = Sketch::new(args.precision, args.hash.config())?;
            let candidates = generated_flows(args.seed, args.candidates)?;
            let mut budget = OracleBudget::default();
            let outcome = filter_m2(
                || BlackBox::new(template.empty_like()),
                candidates,
                args.rounds,
                &mut budget,
            )?;
            let retained = outcome.set.true_cardinality();
            let estimate = hllguard::attack::fresh_estimate(&template, outcome.set.elements());
            if let Some(out) = &args.out {
                outcome.set.save(out)?;
            }
            print_json(&json!({
                "candidates": args.candidates,
                "rounds": outcome.rounds,
                "precision": args.precision,
                "retained": retained,
                "retained_estimate": estimate,
                "ratio": if retained == 0 { Value::Null } else { json!(estimate / retained as f64) },
                "budget": budget,
            }));
            Ok(())
        }
    }
}

fn sns(cmd: SnsCmd) -> CliResult<u8> {
    match cmd {
        SnsCmd::New {
            m_salted,
            m_unsalted,
            threshold,
            hash,
            two_sided,
            seed,
            out,
        } => {
            precision_for(m_salted)?;
            precision_for(m_unsalted)?;
            let params = threshold
                .threshold(Threshold::FpTarget(normal_cdf(-5.0)))
                .params(m_salted, m_unsalted)?;
            let mut s = SnsSketch::with_params(m_salted, m_unsalted, hash.config(), params, &mut *entropy(seed))?;
            s.set_two_sided(two_sided);
            write(&out, &s.to_bytes())?;
            Ok(0)
        }
        SnsCmd::Insert { sketch, input, out } => {
            let mut s = load_sns(&sketch)?;
            s.insert_all(input.elements()?);
            write(out.as_ref().unwrap_or(&sketch), &s.to_bytes())?;
            Ok(0)
        }
        SnsCmd::Check { sketch } => {
            let s = load_sns(&sketch)?;
            let v = s.check();
            print_json(&json!({
                "verdict": v,
                "d_t": s.params().d_t,
                "sigma": s.params().sigma,
                "two_sided": s.two_sided(),
                "floor": s.floor(),
            }));
            Ok(if v.attacked { EXIT_ATTACK } else { 0 })
        }
        SnsCmd::Merge { left, right, out } => {
            let merged = sns_merge(&load_sns(&left)?, &load_sns(&right)?)?;
            // without a shared salt only the unsalted sketch survives
            match &merged.protected {
                Some(p) => write(&out, &p.to_bytes())?,
                None => write(&out, &merged.unsalted.to_bytes())?,
            }
            print_json(&json!({
                "protected": merged.is_protected(),
                "verdicts": merged.verdicts,
                "estimate": merged.unsalted.estimate(),
            }));
            Ok(0)
        }
    }
}

fn experiment(cmd: ExperimentCmd) -> CliResult {
    match cmd {
        ExperimentCmd::Fig4 {
            trials,
            cardinality,
            geometry,
            threshold,
            bins,
            range,
            seed,
            out,
        } => {
            if trials < 100 {
                return Err(usage("--trials must be at least 100"));
            }
            let config = Fig4Config {
                trials,
                cardinality,
                setup: SnsSetup {
                    m_salted: geometry.m_salted,
                    m_unsalted: geometry.m_unsalted,
                    threshold: threshold.threshold(SnsSetup::default().threshold),
                    ..SnsSetup::default()
                },
                seed,
                bins,
                range,
            };
            let report = fig4(&config)?;
            if let Some(out) = &out {
                write(out, histogram_csv(&report.summary.histogram).as_bytes())?;
            }
            print_json(&json!({
                "experiment": report.experiment,
                "config": report.config,
                "summary": report.summary,
                "checks": report.checks,
            }));
            Ok(())
        }
        ExperimentCmd::Detect {
            attack,
            format,
            m1_count,
            trials,
            control_trials,
            clean_ratio,
            geometry,
            threshold,
            two_sided,
            seed,
            out,
        } => {
            let setup = SnsSetup {
                m_salted: geometry.m_salted,
                m_unsalted: geometry.m_unsalted,
                threshold: threshold.threshold(Threshold::Fixed(0.23)),
                two_sided,
                ..SnsSetup::default()
            };
            let elements = match &attack {
                Some(path) => read_input(path, format)?,
                None => {
                    let b = precision_for(setup.m_unsalted)?;
                    craft_m1(&setup.public, b, m1_count, sweep_candidates(seed))?
                        .set
                        .into_elements()
                }
            };
            let report = detect(
                &elements,
                &DetectConfig {
                    setup,
                    trials,
                    control_trials,
                    clean_ratio,
                    seed,
                },
            )?;
            if report.summary.below_floor {
                eprintln!(
                    "hllguard: warning: attack set is below the small-cardinality floor; verdicts are indeterminate"
                );
            }
            if let Some(out) = &out {
                let full = serde_json::to_vec_pretty(&report).expect("report serializes");
                write(out, &full)?;
            }
            print_json(&json!({
                "experiment": report.experiment,
                "config": report.config,
                "summary": report.summary,
                "checks": report.checks,
            }));
            Ok(())
        }
        ExperimentCmd::M2(args) => {
            if args.rounds == 0 {
                return Err(usage("--rounds must be at least 1"));
            }
            let (report, set) = m2(&M2Config {
                candidates: args.candidates,
                rounds: args.rounds,
                precision: args.precision,
                public: args.hash.config(),
                seed: args.seed,
            })?;
            if let Some(out) = &args.out {
                set.save(out)?;
            }
            print_json(&report);
            Ok(())
        }
    }
}
