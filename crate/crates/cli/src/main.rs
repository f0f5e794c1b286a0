use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use earth4d::checkpoint;
use earth4d::collisionlab::{self, CollisionReport, Probing, SCENARIOS};
use earth4d::config::{Config, CONFIG_ENV};
use earth4d::dataset::{self, ReadOptions};
use earth4d::regressor::{evaluate, split_dataset, train, History, Model};
use earth4d::{count_parameters, Execution, Metrics, ProbeConfig};

#[derive(Parser)]
#[command(name = "earth4d", version, about = "4D space-time hash-grid encoder, regressor and collision lab")]
struct Cli {
    /// Run single-threaded. Results are identical either way.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a freshly initialized checkpoint.
    Init(InitArgs),
    /// Encode points into embedding rows.
    Encode(EncodeArgs),
    /// Train a regressor on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run hash-collision scenarios.
    Collisions(CollisionArgs),
    /// Print the parameter-count breakdown of a configuration.
    Params(ParamsArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML configuration file (defaults to $EARTH4D_CONFIG, then the profile).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no configuration file is given.
    #[arg(long, default_value = "default")]
    profile: String,
    /// Override log2 of the per-level table size.
    #[arg(long)]
    tmax: Option<u32>,
    /// Override the number of levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Enable learned probing with default settings (if the config has none).
    #[arg(long)]
    enable_probing: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let path = self
            .config
            .clone()
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
        let mut cfg = match path {
            Some(p) => Config::load(&p).with_context(|| format!("loading {}", p.display()))?,
            None => Config::profile(&self.profile)?,
        };
        if let Some(t) = self.tmax {
            cfg.grid.log2_table_size = t;
        }
        if let Some(l) = self.levels {
            cfg.grid.num_levels = l;
        }
        if self.enable_probing && cfg.grid.probing.is_none() {
            cfg.grid.probing = Some(ProbeConfig::default());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated species names.
    #[arg(long, value_delimiter = ',')]
    species: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Expected embedding width; fails if the checkpoint disagrees.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Separate validation set; otherwise a split of --data is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Write the per-epoch history as JSON.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail on species the checkpoint has never seen instead of using the unknown embedding.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    skip_bad: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProbingSource {
    Off,
    Greedy,
    Checkpoint,
}

#[derive(Args)]
struct CollisionArgs {
    /// Scenario name, or `all`.
    #[arg(long, default_value = "all")]
    scenario: String,
    #[arg(long, default_value_t = collisionlab::DEFAULT_POINTS)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source of probe decisions.
    #[arg(long, value_enum, default_value = "off")]
    probing: ProbingSource,
    /// Checkpoint whose encoder config and probe logits are used with `--probing checkpoint`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// JSON report path; a CSV with the same stem is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    json: bool,
}

fn read_opts(skip_bad: bool) -> ReadOptions {
    ReadOptions { skip_bad }
}

fn report_skipped(skipped: &[(usize, String)]) {
    if !skipped.is_empty() {
        eprintln!("skipped {} malformed rows", skipped.len());
        for (line, msg) in skipped.iter().take(5) {
            eprintln!("  line {line}: {msg}");
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    dataset::write_atomic(path, &bytes)?;
    Ok(())
}

fn print_metrics(m: &Metrics) -> Result<()> {
    println!("{}", serde_json::to_string(m)?);
    Ok(())
}

fn cmd_init(args: InitArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let seed = args.seed.unwrap_or(cfg.train.seed);
    let model = Model::<f32>::new(cfg.model_config(), &args.species, seed)?;
    checkpoint::save(&model, &args.out)?;
    eprintln!(
        "wrote {} ({} embedding dims, {} species)",
        args.out.display(),
        model.embedding_dim(),
        model.species.names().len()
    );
    Ok(())
}

fn cmd_encode(args: EncodeArgs, exec: Execution) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let width = model.embedding_dim();
    if let Some(w) = args.width {
        if w != width {
            return Err(earth4d::Error::WidthMismatch { expected: w, found: width }.into());
        }
    }
    let norm = model.config().normalization;
    let loaded = dataset::read_points_file(&args.input, &norm, read_opts(args.skip_bad))?;
    report_skipped(&loaded.skipped);
    let q = loaded
        .rows
        .iter()
        .map(|p| earth4d::geocoords::normalize(p, &norm).map(|n| n.to_array()))
        .collect::<earth4d::Result<Vec<_>>>()?;
    let values = model.encoder.encode_batch(exec, &q, model.encoder.inference_mode());
    let mut buf = Vec::new();
    dataset::write_embeddings(&mut buf, width, &values)?;
    dataset::write_atomic(&args.output, &buf)?;
    eprintln!("encoded {} points into {} columns", q.len(), width);
    Ok(())
}

fn cmd_train(args: TrainArgs, exec: Execution) -> Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.train.steps = s;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    cfg.validate()?;
    let norm = cfg.normalization;
    let data = dataset::read_dataset_file(&args.data, &norm, read_opts(args.skip_bad))?;
    report_skipped(&data.skipped);
    let (train_set, val_set) = match &args.val {
        Some(p) => {
            let v = dataset::read_dataset_file(p, &norm, read_opts(args.skip_bad))?;
            report_skipped(&v.skipped);
            (data.rows, v.rows)
        }
        None => split_dataset(&data.rows, cfg.train.val_fraction, cfg.train.split, cfg.train.seed),
    };
    let (model, history): (Model<f32>, History) =
        train(&cfg.model_config(), &cfg.train, &train_set, &val_set, exec)?;
    checkpoint::save(&model, &args.out)?;
    if let Some(h) = &args.history {
        write_json(h, &history)?;
    }
    let last = history.epochs.last();
    eprintln!(
        "trained {} steps on {} samples ({} held out); final train loss {:.4}",
        model.state.step,
        train_set.len(),
        val_set.len(),
        last.map_or(f64::NAN, |e| e.train_loss)
    );
    if let Some(m) = history.last_val() {
        print_metrics(&m)?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs, exec: Execution) -> Result<()> {
    let model = checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = dataset::read_dataset_file(&args.data, &model.config().normalization, read_opts(args.skip_bad))?;
    report_skipped(&data.skipped);
    let prepared = model.prepare(&data.rows, args.strict)?;
    let metrics = evaluate(&model, &prepared, exec)?;
    print_metrics(&metrics)?;
    if let Some(out) = &args.out {
        write_json(out, &metrics)?;
    }
    Ok(())
}

fn cmd_collisions(args: CollisionArgs, exec: Execution) -> Result<()> {
    let scenarios: Vec<_> = if args.scenario == "all" {
        SCENARIOS.iter().collect()
    } else {
        vec![collisionlab::scenario(&args.scenario)?]
    };
    let trained;
    let (encoder_cfg, norm, probing) = match args.probing {
        ProbingSource::Checkpoint => {
            let Some(path) = &args.checkpoint else {
                bail!("--probing checkpoint requires --checkpoint");
            };
            trained = checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if !trained.encoder.has_probing() {
                bail!("checkpoint {} has no probe tables", path.display());
            }
            // Annealing leaves the encoder at its final temperature, so take its own config.
            let norm = trained.config().normalization;
            (trained.encoder.config().clone(), norm, Probing::Trained(&trained.encoder))
        }
        source => {
            let cfg = args.config.resolve()?;
            let probing = match source {
                ProbingSource::Greedy => Probing::Greedy(cfg.grid.probing.unwrap_or_default()),
                _ => Probing::Off,
            };
            (cfg.encoder_config(), cfg.normalization, probing)
        }
    };
    let mut reports = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        eprintln!("running {} ({} points)", s.name, s.realized_points(args.points));
        reports.push(collisionlab::run_scenario(exec, s, args.seed, args.points, &encoder_cfg, &norm, probing)?);
    }
    let report = CollisionReport::new(&encoder_cfg, reports);
    match &args.out {
        Some(out) => {
            write_json(out, &report)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            let csv_path = out.with_extension("csv");
            dataset::write_atomic(&csv_path, &csv)?;
            eprintln!("wrote {} and {}", out.display(), csv_path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    let count = count_parameters(&cfg.encoder_config());
    if args.json {
        println!("{}", serde_json::to_string_pretty(&count)?);
        return Ok(());
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "{:<5} {:>5} {:>12} {:>7} {:>10} {:>14} {:>12}", "grid", "level", "resolution", "storage", "rows", "features", "probes")?;
    for l in &count.levels {
        writeln!(
            out,
            "{:<5} {:>5} {:>12} {:>7} {:>10} {:>14} {:>12}",
            l.projection.name(),
            l.level.index,
            l.level.resolution,
            format!("{:?}", l.level.storage).to_lowercase(),
            l.level.table_size,
            l.feature_parameters,
            l.probe_parameters
        )?;
    }
    writeln!(out, "grid parameters:  {}", count.grid_parameters)?;
    writeln!(out, "probe parameters: {}", count.probe_parameters)?;
    writeln!(out, "total:            {}", count.total)?;
    writeln!(out, "output width:     {}", cfg.encoder_config().output_dim())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    match cli.command {
        Command::Init(a) => cmd_init(a),
        Command::Encode(a) => cmd_encode(a, exec),
        Command::Train(a) => cmd_train(a, exec),
        Command::Eval(a) => cmd_eval(a, exec),
        Command::Collisions(a) => cmd_collisions(a, exec),
        Command::Params(a) => cmd_params(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
