//! `weaver` command-line driver.

pub mod bench;
pub mod report;
pub mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use weaver_core::data::{
    horizon_label, load_csv, split_and_slice, Metrics, ScalerStats, SynthOptions, TrafficSeries,
};
use weaver_core::model::Checkpoint;
use weaver_core::train::{evaluate, train, PreparedData, TrainOptions};
use weaver_core::{WeaverConfig, WeaverModel};

#[derive(Debug, Parser)]
#[command(
    name = "weaver",
    version,
    about = "Kronecker spatiotemporal attention: checks, benchmarks, training and forecasting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run invariant suites against oracles
    Verify(VerifyArgs),
    /// Time basic vs efficient P²-KMV over a grid
    BenchKmv(BenchArgs),
    /// Train a model and write a checkpoint plus training log
    Train(TrainArgs),
    /// Forecast a split from a checkpoint and score it
    Forecast(ForecastArgs),
    /// Merge CSV tables into one with a source column
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = verify::Suite::All)]
    pub suite: verify::Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// write the CSV summary here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// print CSV instead of the human-readable table
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [8usize, 16, 32, 64, 128])]
    pub nodes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
    pub heads: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16])]
    pub d_head: Vec<usize>,
    #[arg(long, default_value_t = 12)]
    pub history: usize,
    /// batch size folded into the feature mode
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, default_value_t = 2)]
    pub warmup: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2 << 30)]
    pub max_bytes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// values CSV (timestamp column, then one column per node)
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// observation mask CSV of the same layout
    #[arg(long, requires = "data")]
    pub mask: Option<PathBuf>,
    /// generate a synthetic series instead of reading one
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 6)]
    pub nodes: usize,
    #[arg(long, default_value_t = 7)]
    pub days: usize,
    #[arg(long, default_value_t = 5)]
    pub cadence: u32,
    #[arg(long, default_value_t = 0.1)]
    pub missing: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value model config applied over the desk defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub min_delta: f64,
    /// train,val,test proportions
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [70usize, 10, 20])]
    pub ratios: Vec<usize>,
    /// output directory for checkpoint.wvr and train_log.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// data to forecast; defaults to the synthetic series recorded in the checkpoint
    #[command(flatten)]
    pub data: DataArgs,
    /// synthetic data seed; defaults to the one recorded in the checkpoint
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// output directory for predictions.csv and metrics.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs a parsed command. `Ok(false)` means a property or validation
/// failure (exit 1) rather than an error.
pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<bool> {
    match cli.command {
        Command::Verify(a) => cmd_verify(&a, &verify::Kernels::default(), out),
        Command::BenchKmv(a) => cmd_bench(&a, out),
        Command::Train(a) => cmd_train(&a, out).map(|_| true),
        Command::Forecast(a) => cmd_forecast(&a, out).map(|_| true),
        Command::Report(a) => cmd_report(&a, out).map(|_| true),
    }
}

pub fn cmd_verify(
    args: &VerifyArgs,
    kernels: &verify::Kernels,
    out: &mut dyn Write,
) -> anyhow::Result<bool> {
    let mut outcomes = Vec::new();
    for name in verify::property_names(args.suite) {
        let o = verify::run_property(name, kernels, args.seed).expect("registered property");
        if !args.csv {
            writeln!(out, "{}", verify::human_line(&o))?;
        }
        outcomes.push(o);
    }
    if args.csv {
        verify::write_csv(&outcomes, &mut *out)?;
    } else {
        let failed: Vec<&str> = outcomes
            .iter()
            .filter(|o| !o.passed)
            .map(|o| o.name)
            .collect();
        writeln!(
            out,
            "{} of {} properties passed",
            outcomes.len() - failed.len(),
            outcomes.len()
        )?;
        if !failed.is_empty() {
            writeln!(out, "failing: {}", failed.join(", "))?;
        }
    }
    if let Some(path) = &args.out {
        verify::write_csv(&outcomes, create(path)?)?;
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn create(path: &Path) -> anyhow::Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::File::create(path).with_context(|| format!("creating {}", path.display()))
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> anyhow::Result<bool> {
    let opts = bench::BenchOptions {
        nodes: args.nodes.clone(),
        heads: args.heads.clone(),
        d_head: args.d_head.clone(),
        history: args.history,
        batch: args.batch,
        trials: args.trials as usize,
        warmup: args.warmup,
        seed: args.seed,
        max_bytes: args.max_bytes,
    };
    let mut all_equivalent = true;
    let results = bench::run_grid(&opts, |r| {
        match r {
        bench::PointResult::Timed(rec) => eprintln!(
            "N={:<4} H={} d_head={:<3} basic {:>12.0} ns (mean {:.0}) efficient {:>12.0} ns (mean {:.0}) speedup {:.2}x diff {:.1e}",
            rec.n, rec.h, rec.d_head, rec.t_basic_ns, rec.t_basic_mean_ns, rec.t_efficient_ns, rec.t_efficient_mean_ns, rec.speedup, rec.max_abs_diff
        ),
        bench::PointResult::Skipped { n, h, d_head, bytes } => {
            eprintln!("N={n} H={h} d_head={d_head}: skipped, needs {bytes} bytes")
        }
        bench::PointResult::NotEquivalent { n, h, d_head, max_abs_diff } => {
            all_equivalent = false;
            eprintln!("N={n} H={h} d_head={d_head}: NOT EQUIVALENT (max abs diff {max_abs_diff:e}), not timed")
        }
    }
    })?;
    let records: Vec<bench::BenchRecord> = results
        .into_iter()
        .filter_map(|r| match r {
            bench::PointResult::Timed(rec) => Some(rec),
            _ => None,
        })
        .collect();
    match &args.out {
        Some(path) => bench::write_csv(&records, create(path)?)?,
        None => bench::write_csv(&records, &mut *out)?,
    }
    Ok(all_equivalent)
}

/// Where a training series came from, recorded so `forecast` can rebuild it.
fn load_data(
    args: &DataArgs,
    seed: u64,
) -> anyhow::Result<(TrafficSeries, BTreeMap<String, String>)> {
    let mut meta = BTreeMap::new();
    if let Some(path) = &args.data {
        let s = load_csv(path, args.mask.as_deref())?;
        meta.insert("data.kind".into(), "csv".into());
        meta.insert("data.path".into(), path.display().to_string());
        return Ok((s, meta));
    }
    if !args.synthetic {
        bail!("pass --data <csv> or --synthetic");
    }
    let opts = SynthOptions {
        nodes: args.nodes,
        days: args.days,
        cadence_minutes: args.cadence,
        noise_std: args.noise,
        missing_rate: args.missing,
        ..SynthOptions::new(args.nodes, args.days, seed)
    };
    meta.insert("data.kind".into(), "synthetic".into());
    meta.extend(synth_meta(&opts));
    Ok((opts.generate()?, meta))
}

fn synth_meta(o: &SynthOptions) -> BTreeMap<String, String> {
    [
        ("synth.nodes", o.nodes.to_string()),
        ("synth.days", o.days.to_string()),
        ("synth.cadence", o.cadence_minutes.to_string()),
        ("synth.noise", format!("{:?}", o.noise_std)),
        ("synth.missing", format!("{:?}", o.missing_rate)),
        ("synth.weekly", format!("{:?}", o.weekly_amplitude)),
        ("synth.seed", o.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn synth_from_meta(
    meta: &BTreeMap<String, String>,
    seed: Option<u64>,
) -> anyhow::Result<SynthOptions> {
    fn get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, k: &str) -> anyhow::Result<T> {
        meta.get(k)
            .ok_or_else(|| anyhow!("checkpoint has no `{k}`"))?
            .parse()
            .map_err(|_| anyhow!("checkpoint has a malformed `{k}`"))
    }
    Ok(SynthOptions {
        nodes: get(meta, "synth.nodes")?,
        days: get(meta, "synth.days")?,
        cadence_minutes: get(meta, "synth.cadence")?,
        noise_std: get(meta, "synth.noise")?,
        missing_rate: get(meta, "synth.missing")?,
        weekly_amplitude: get(meta, "synth.weekly")?,
        seed: match seed {
            Some(s) => s,
            None => get(meta, "synth.seed")?,
        },
    })
}

fn parse_ratios(v: &[usize]) -> anyhow::Result<[usize; 3]> {
    v.try_into()
        .map_err(|_| anyhow!("expected three split ratios, got {v:?}"))
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub initial_val_mae: f64,
    pub best_val_mae: f64,
    pub epochs_run: usize,
}

pub fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> anyhow::Result<TrainSummary> {
    let (series, mut meta) = load_data(&args.data, args.seed)?;
    let mut base = WeaverConfig::desk();
    base.nodes = series.nodes();
    base.channels = series.channels();
    let cfg = match &args.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            WeaverConfig::from_kv(&text, base)?
        }
        None => base,
    };
    cfg.validate()?;
    let ratios = parse_ratios(&args.ratios)?;
    let data = PreparedData::new(series, cfg.history, cfg.horizon, ratios)?;
    let model = WeaverModel::init(cfg, args.seed)?;
    let opts = TrainOptions {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        lr_decay: args.lr_decay,
        patience: args.patience,
        min_delta: args.min_delta,
        seed: args.seed,
        ratios,
    };
    let outcome = train(model, &data, &opts)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log_path = args.out.join("train_log.csv");
    let mut w = csv::Writer::from_writer(create(&log_path)?);
    w.write_record(["epoch", "lr", "train_loss", "val_mae", "improved"])?;
    for e in &outcome.log {
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", e.lr),
            format!("{:?}", e.train_loss),
            format!("{:?}", e.val_mae),
            e.improved.to_string(),
        ])?;
        writeln!(
            out,
            "epoch {:>3}  lr {:.3e}  train {:.4}  val MAE {:.4}{}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.val_mae,
            if e.improved { "  *" } else { "" }
        )?;
    }
    w.flush()?;

    meta.extend(outcome.scaler.to_meta());
    meta.insert("train.seed".into(), args.seed.to_string());
    meta.insert("train.epochs_run".into(), outcome.log.len().to_string());
    meta.insert(
        "train.initial_val_mae".into(),
        format!("{:?}", outcome.initial_val_mae),
    );
    meta.insert(
        "train.best_val_mae".into(),
        format!("{:?}", outcome.best_val_mae),
    );
    meta.insert(
        "split.ratios".into(),
        ratios.map(|r| r.to_string()).join(","),
    );
    let ckpt_path = args.out.join("checkpoint.wvr");
    Checkpoint {
        config: outcome.model.config.clone(),
        params: outcome.model.params.clone(),
        meta,
    }
    .save(&ckpt_path)?;
    writeln!(
        out,
        "validation MAE {:.4} -> {:.4} (best epoch {}){}",
        outcome.initial_val_mae,
        outcome.best_val_mae,
        outcome
            .best_epoch
            .map_or("none".to_string(), |e| e.to_string()),
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        }
    )?;
    writeln!(
        out,
        "wrote {} and {}",
        ckpt_path.display(),
        log_path.display()
    )?;
    Ok(TrainSummary {
        checkpoint: ckpt_path,
        log: log_path,
        initial_val_mae: outcome.initial_val_mae,
        best_val_mae: outcome.best_val_mae,
        epochs_run: outcome.log.len(),
    })
}

pub struct ForecastSummary {
    pub model: Metrics,
    pub persistence: Metrics,
    pub windows: usize,
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

pub fn cmd_forecast(args: &ForecastArgs, out: &mut dyn Write) -> anyhow::Result<ForecastSummary> {
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let scaler = ScalerStats::from_meta(&ckpt.meta)?;
    let series = if args.data.data.is_some() || args.data.synthetic {
        let seed = match args.seed {
            Some(s) => s,
            None => synth_from_meta(&ckpt.meta, None)
                .map(|o| o.seed)
                .unwrap_or(0),
        };
        load_data(&args.data, seed)?.0
    } else {
        match ckpt.meta.get("data.kind").map(String::as_str) {
            Some("synthetic") => synth_from_meta(&ckpt.meta, args.seed)?.generate()?,
            _ => bail!("checkpoint does not record synthetic data; pass --data <csv>"),
        }
    };
    let ratios = match ckpt.meta.get("split.ratios") {
        Some(r) => {
            let v = r
                .split(',')
                .map(|x| x.parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| anyhow!("checkpoint has malformed split ratios `{r}`"))?;
            parse_ratios(&v)?
        }
        None => TrainOptions::default().ratios,
    };
    let cfg = ckpt.config.clone();
    let cadence = series.cadence_minutes;
    let stamps = series.stamps.clone();
    let (nodes, channels) = (series.node_names.clone(), series.channel_names.clone());
    let sliced = split_and_slice(&series, cfg.history, cfg.horizon, ratios)?;
    let split = match args.split {
        SplitArg::Train => &sliced.train,
        SplitArg::Val => &sliced.val,
        SplitArg::Test => &sliced.test,
    };
    let starts = split.starts.clone();
    if starts.is_empty() {
        bail!("the {:?} split has no complete windows", args.split);
    }
    let data = PreparedData::with_scaler(series, scaler, sliced)?;
    let model = WeaverModel {
        config: cfg.clone(),
        params: ckpt.params,
    };
    let ev = evaluate(&model, &data, &starts)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = csv::Writer::from_writer(create(&args.out.join("predictions.csv"))?);
    w.write_record([
        "window_start",
        "origin",
        "target_time",
        "horizon",
        "node",
        "channel",
        "prediction",
        "target",
        "observed",
        "persistence",
    ])?;
    let (q, n, c) = (cfg.horizon, cfg.nodes, cfg.channels);
    for (wi, &start) in ev.starts.iter().enumerate() {
        let origin = stamps[start + cfg.history - 1];
        for qi in 0..q {
            let target_time = stamps[start + cfg.history + qi];
            for ni in 0..n {
                for ci in 0..c {
                    let at = [wi, qi, ni, ci];
                    w.write_record([
                        start.to_string(),
                        origin.format("%Y-%m-%d %H:%M:%S").to_string(),
                        target_time.format("%Y-%m-%d %H:%M:%S").to_string(),
                        horizon_label(qi + 1, cadence),
                        nodes[ni].clone(),
                        channels[ci].clone(),
                        format!("{:?}", ev.predictions.get(&at)),
                        format!("{:?}", ev.targets.get(&at)),
                        (ev.mask.get(&at) != 0.0).to_string(),
                        format!("{:?}", ev.persistence.get(&at)),
                    ])?;
                }
            }
        }
    }
    w.flush()?;

    let model_report = ev.report()?;
    let naive_report = ev.persistence_report()?;
    let mut w = csv::Writer::from_writer(create(&args.out.join("metrics.csv"))?);
    w.write_record(["model", "horizon", "mae", "rmse", "mape"])?;
    for (name, rep) in [("weaver", &model_report), ("persistence", &naive_report)] {
        let rows = rep
            .per_step
            .iter()
            .enumerate()
            .map(|(i, m)| (horizon_label(i + 1, cadence), m))
            .chain(std::iter::once(("all".to_string(), &rep.all)));
        for (label, m) in rows {
            w.write_record([
                name.to_string(),
                label,
                fmt_metric(m.mae),
                fmt_metric(m.rmse),
                fmt_metric(m.mape),
            ])?;
        }
    }
    w.flush()?;
    for (name, m) in [
        ("weaver", &model_report.all),
        ("persistence", &naive_report.all),
    ] {
        writeln!(
            out,
            "{name:<12} MAE {:.4}  RMSE {:.4}  MAPE {:.2}%",
            m.mae, m.rmse, m.mape
        )?;
    }
    writeln!(
        out,
        "{} windows written to {}",
        ev.starts.len(),
        args.out.display()
    )?;
    Ok(ForecastSummary {
        model: model_report.all,
        persistence: naive_report.all,
        windows: ev.starts.len(),
    })
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let tables = args
        .inputs
        .iter()
        .map(|p| Ok((report::source_label(p), report::Table::read(p)?)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let merged = report::merge(&tables)?;
    match &args.out {
        Some(path) => merged.write(create(path)?)?,
        None => merged.write(&mut *out)?,
    }
    Ok(())
}
