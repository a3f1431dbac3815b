use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cfmf::dataset::{build_dataset, format_ratings, parse_ratings_file, Dataset, Format};
use cfmf::eval::{evaluate_model, run_experiment, run_sweep, sweep_csv, Algorithm, EvalReport, ExperimentConfig, InitKind, SweepAxis, SweepSpec};
use cfmf::model_io::{read_model, write_model};
use cfmf::synthetic::{generate_synthetic_detailed, Mixture, SyntheticSpec};
use cfmf::SelectBy;

#[derive(Parser)]
#[command(name = "cfmf", version, about = "Rating prediction with neighbourhood CF, ALS and integrated CF+MF models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and save it.
    Train(TrainArgs),
    /// Evaluate a model (trained on the fly or loaded) on the test file.
    Eval(EvalArgs),
    /// Sweep the neighbour count or latent dimension.
    Sweep(SweepArgs),
    /// Generate a synthetic train/test pair.
    Gen(GenArgs),
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value = "movietweetings")]
    format: Format,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let train = parse_ratings_file(&self.train, self.format)?;
        let test = parse_ratings_file(&self.test, self.format)?;
        let data = build_dataset(&train, &test)?;
        eprintln!(
            "train: {} users, {} items, {} ratings; test: {} ratings after pruning",
            data.num_users(),
            data.num_items(),
            data.train.len(),
            data.test.len()
        );
        Ok(data)
    }
}

/// Model parameters. Flags override values from `--config`.
#[derive(Args, Default)]
struct ParamArgs {
    /// TOML file with experiment parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    shrink: Option<f64>,
    /// ALS regularisation.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    lr1: Option<f64>,
    #[arg(long)]
    lr2: Option<f64>,
    #[arg(long)]
    lr3: Option<f64>,
    #[arg(long)]
    lr4: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Factor initialisation: constant (1/K) or uniform(0, 1/K) from --seed.
    #[arg(long)]
    init: Option<String>,
    /// Shuffle SGD training order every epoch (seeded by --seed).
    #[arg(long)]
    shuffle: bool,
    /// Clamp predictions to [0, 10] before scoring.
    #[arg(long)]
    clamp: bool,
    #[arg(long)]
    select_by: Option<SelectBy>,
    #[arg(long)]
    baseline_literal_sum: bool,
    #[arg(long)]
    als_raw_targets: bool,
    #[arg(long)]
    center_a_reg: bool,
}

impl ParamArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field { cfg.$field = v; }
            )*};
        }
        macro_rules! set_opt {
            ($($field:ident),*) => {$(
                if self.$field.is_some() { cfg.$field = self.$field; }
            )*};
        }
        set!(k, top_n, shrink, lambda, epsilon, max_iter, seed, select_by);
        set_opt!(lambda1, lambda2, lambda3, lambda4, lr1, lr2, lr3, lr4);
        if let Some(init) = &self.init {
            cfg.init = match init.as_str() {
                "constant" => InitKind::Constant,
                "uniform" => InitKind::Uniform,
                other => bail!("unknown init `{other}`"),
            };
        }
        cfg.shuffle |= self.shuffle;
        cfg.clamp |= self.clamp;
        cfg.baseline_literal_sum |= self.baseline_literal_sum;
        cfg.als_raw_targets |= self.als_raw_targets;
        cfg.center_a_reg |= self.center_a_reg;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    algo: Algorithm,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Where to write the trained model.
    #[arg(long)]
    model: PathBuf,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Include wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    algo: Algorithm,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Load this model instead of training.
    #[arg(long)]
    model: Option<PathBuf>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// `N` (neighbour count) or `K` (latent dimension).
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated, strictly increasing values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Comma-separated algorithms.
    #[arg(long = "algos", value_delimiter = ',', required = true)]
    algos: Vec<Algorithm>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Sweep cells evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 300)]
    items: usize,
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0.05)]
    density: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// pure-bias, pure-factor, pure-neighbor, per-user or `wb,wf,wn`.
    #[arg(long, default_value = "per-user")]
    mixture: Mixture,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "movietweetings")]
    format: Format,
    /// Output directory for `train.dat` and `test.dat`.
    #[arg(long)]
    out: PathBuf,
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(report: &EvalReport) {
    eprintln!(
        "{}: mae {:.5}, coverage {:.4}, {} test pairs, {:.2}s",
        report.algorithm, report.mae, report.coverage, report.test_pairs, report.wall_time
    );
}

fn train(args: TrainArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.params.resolve()?;
    let (report, model) = run_experiment(&data, args.algo, &cfg)?;
    summarize(&report);
    fs::write(&args.model, write_model(&model)).with_context(|| format!("writing {}", args.model.display()))?;
    if let Some(out) = &args.out {
        write_output(Some(out), &report.to_json(args.timing))?;
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let data = args.data.load()?;
    let cfg = args.params.resolve()?;
    let report = match &args.model {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let model = read_model(&text)?;
            let start = std::time::Instant::now();
            let (mae, coverage) = evaluate_model(&model, &data, cfg.clamp)?;
            EvalReport {
                algorithm: args.algo,
                params: cfg,
                mae,
                coverage,
                test_pairs: data.test.len(),
                wall_time: start.elapsed().as_secs_f64(),
                selected_epoch: None,
                converged: None,
                per_epoch: None,
            }
        }
        None => run_experiment(&data, args.algo, &cfg)?.0,
    };
    summarize(&report);
    write_output(args.out.as_deref(), &report.to_json(args.timing))
}

fn sweep(args: SweepArgs) -> Result<()> {
    let data = args.data.load()?;
    let spec = SweepSpec::new(args.axis, args.values, args.params.resolve()?)?;
    let rows = run_sweep(&data, &spec, &args.algos, args.jobs)?;
    write_output(args.out.as_deref(), &sweep_csv(&rows))
}

fn gen(args: GenArgs) -> Result<()> {
    let spec = SyntheticSpec {
        users: args.users,
        items: args.items,
        k_true: args.rank,
        density: args.density,
        noise_sd: args.noise,
        mixture: args.mixture,
        seed: args.seed,
    };
    let synth = generate_synthetic_detailed(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ext = match args.format {
        Format::MovieTweetings => "dat",
        Format::Csv => "csv",
    };
    for (name, records) in [("train", &synth.train_raw), ("test", &synth.test_raw)] {
        let path = args.out.join(format!("{name}.{ext}"));
        fs::write(&path, format_ratings(records, args.format)).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!(
        "wrote {} train and {} test ratings ({} clamped) to {}",
        synth.train_raw.len(),
        synth.test_raw.len(),
        synth.clamped,
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
