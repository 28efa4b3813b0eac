//! Command-line front end.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigFile, DataConfig};
use crate::data::{gen_two_gaussians, gen_two_moons, load_csv, write_csv};
use crate::nn::{read_checkpoint, write_checkpoint};
use crate::oracle::{certify, InstanceShape};
use crate::trainer::{evaluate, train, write_metrics, TrainData};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "saflex", version, about = "Learned sample weights and soft labels for augmented data")]
pub struct Cli {
    /// Print the default configuration with every key and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a dataset and its schema.
    GenData(GenDataArgs),
    /// Train from a config file.
    Train {
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the validation and test splits of a config.
    Eval {
        config: PathBuf,
        checkpoint: PathBuf,
    },
    /// Compare the closed-form assignment with exhaustive enumeration.
    OracleCheck(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum GenKind {
    TwoGaussians,
    TwoMoons,
    /// Loads a schema CSV and writes it back with continuous columns
    /// z-scored.
    CsvPassthrough,
}

#[derive(Debug, clap::Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: GenKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Class means are `±(mean, mean)`.
    #[arg(long, default_value_t = 1.0)]
    pub mean: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Input table for csv_passthrough.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Input schema for csv_passthrough.
    #[arg(long)]
    pub input_schema: Option<PathBuf>,
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
    /// Defaults to the output path with a `.schema` extension.
    #[arg(long)]
    pub schema_out: Option<PathBuf>,
}

/// Settings of `oracle-check`, also readable from the `[oracle]` table of a
/// TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSettings {
    pub instances: usize,
    pub seed: u64,
    pub max_batch: usize,
    pub max_classes: usize,
    pub max_params: usize,
    pub tau: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        let s = InstanceShape::default();
        Self {
            instances: 1000,
            seed: 0,
            max_batch: s.max_batch,
            max_classes: s.max_classes,
            max_params: s.max_params,
            tau: 0.01,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFile {
    #[serde(default)]
    oracle: OracleSettings,
}

#[derive(Debug, clap::Args)]
pub struct OracleArgs {
    /// TOML file with an `[oracle]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_batch: Option<usize>,
    #[arg(long)]
    pub max_classes: Option<usize>,
}

/// Exit code for an error: 2 for configuration and usage problems, 3 for
/// numerical failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Schema(_)
        | Error::Guard(_)
        | Error::UnknownCategory { .. } => EXIT_CONFIG,
        Error::Divergence(_) | Error::Domain(_) => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if cli.print_config {
        print!("{}", ConfigFile::default().to_toml());
        return Ok(EXIT_OK);
    }
    match cli.command {
        None => Err(Error::Config("no subcommand given; see --help".into())),
        Some(Command::GenData(args)) => cmd_gen_data(&args).map(|_| EXIT_OK),
        Some(Command::Train { config }) => cmd_train(&config).map(|_| EXIT_OK),
        Some(Command::Eval { config, checkpoint }) => cmd_eval(&config, &checkpoint).map(|_| EXIT_OK),
        Some(Command::OracleCheck(args)) => cmd_oracle_check(&args),
    }
}

pub fn cmd_gen_data(args: &GenDataArgs) -> Result<()> {
    let ds = match args.kind {
        GenKind::TwoGaussians => {
            let m = args.mean;
            gen_two_gaussians(args.n, [[-m, -m], [m, m]], args.sigma, args.seed)?
        }
        GenKind::TwoMoons => gen_two_moons(args.n, args.noise, args.seed)?,
        GenKind::CsvPassthrough => {
            let (Some(input), Some(schema)) = (&args.input, &args.input_schema) else {
                return Err(Error::InvalidArgument("csv_passthrough needs --input and --input-schema".into()));
            };
            load_csv(input, schema)?
        }
    };
    let schema_out = args.schema_out.clone().unwrap_or_else(|| args.out.with_extension("schema"));
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_csv(&ds, &args.out, &schema_out)?;
    println!("wrote {} rows to {} (schema {})", ds.len(), args.out.display(), schema_out.display());
    Ok(())
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    let joined = base.join(p);
    joined.canonicalize().unwrap_or(joined)
}

/// Copy of `cfg` with every path made absolute, so the file can be re-run
/// from anywhere.
fn resolve_paths(cfg: &ConfigFile, base: &Path) -> ConfigFile {
    let mut c = cfg.clone();
    match &mut c.data {
        DataConfig::Csv { path, schema } => {
            *path = absolute(base, path);
            *schema = absolute(base, schema);
        }
        DataConfig::Images { path } => *path = absolute(base, path),
        _ => {}
    }
    c.output.dir = absolute(base, &c.output.dir);
    c
}

/// Trains every run of the config. Each output directory receives
/// `config.toml` (fully resolved), `metrics.csv` and `model.ckpt`.
pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = ConfigFile::from_path(config_path)?;
    let base = base_dir(config_path);
    for run_cfg in cfg.expand() {
        fs::create_dir_all(base.join(&run_cfg.output.dir))?;
        let resolved = resolve_paths(&run_cfg, &base);
        let out = &resolved.output.dir;
        fs::write(out.join("config.toml"), resolved.to_toml())?;
        let s = resolved.splits(&base)?;
        let result = train(
            &resolved.run,
            &resolved.augment,
            &resolved.saflex,
            TrainData { train: &s.train, val: &s.val, test: &s.test },
        )?;
        write_metrics(&result.history, BufWriter::new(File::create(out.join("metrics.csv"))?))?;
        write_checkpoint(&result.params, BufWriter::new(File::create(out.join("model.ckpt"))?))?;
        if let Some(last) = result.history.last() {
            println!(
                "{}: {} epochs, val loss {:.4}, test acc {:.4}",
                out.display(),
                result.history.len(),
                last.val_loss,
                last.test_acc
            );
        }
        let r = &result.relabel;
        if r.samples > 0 {
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            println!(
                "  relabelled {} of {} augmented samples ({} corrupted): precision {}, recall {}; dropped {}",
                r.changed,
                r.samples,
                r.corrupted,
                fmt(r.change_precision()),
                fmt(r.change_recall()),
                r.dropped
            );
        }
    }
    Ok(())
}

pub fn cmd_eval(config_path: &Path, checkpoint: &Path) -> Result<()> {
    let cfg = ConfigFile::from_path(config_path)?;
    let s = cfg.splits(&base_dir(config_path))?;
    let params = read_checkpoint(BufReader::new(File::open(checkpoint)?))?;
    if params.arch().input_dim() != s.test.num_features() || params.arch().num_classes() != s.test.num_classes {
        return Err(Error::shape("checkpoint does not match the dataset dimensions"));
    }
    for (name, ds) in [("val", &s.val), ("test", &s.test)] {
        if ds.is_empty() {
            continue;
        }
        let (loss, acc) = evaluate(&params, ds)?;
        println!("{name}: loss {loss:.6} accuracy {acc:.4}");
    }
    Ok(())
}

pub fn cmd_oracle_check(args: &OracleArgs) -> Result<i32> {
    let mut s = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            toml::from_str::<OracleFile>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?.oracle
        }
        None => OracleSettings::default(),
    };
    s.instances = args.instances.unwrap_or(s.instances);
    s.seed = args.seed.unwrap_or(s.seed);
    s.max_batch = args.max_batch.unwrap_or(s.max_batch);
    s.max_classes = args.max_classes.unwrap_or(s.max_classes);
    if s.max_classes < 2 {
        return Err(Error::InvalidArgument(
            "K = 1 is degenerate: every score is zero and the assignment is trivially optimal".into(),
        ));
    }
    if s.instances == 0 {
        return Err(Error::InvalidArgument("need at least one instance".into()));
    }
    let shape = InstanceShape { max_batch: s.max_batch, max_classes: s.max_classes, max_params: s.max_params };
    let report = certify(s.instances, s.seed, shape, s.tau)?;
    for (i, c) in report.checks.iter().enumerate() {
        if c.gap != 0.0 {
            println!("instance {i}: gap {:e}", c.gap);
        }
    }
    println!("instances: {}", report.instances);
    println!("max objective gap: {:e}", report.max_gap());
    println!("value match: {:.4}", report.value_match_rate());
    println!("closed-form assignment match: {:.4}", report.closed_form_match_rate());
    println!("tau = {} decoded assignment match: {:.4}", s.tau, report.decoded_match_rate());
    println!("kept by sum-of-scores rule: {:.4}", report.sum_rule_keep_rate());
    println!("weight-rule disagreement: {:.4}", report.rule_disagreement_rate());
    println!("mean gap to sum-to-one optimum: {:.6e}", report.mean_sum_to_one_gap());
    let ok = report.passed();
    println!("{}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { EXIT_OK } else { EXIT_NUMERICAL })
}
