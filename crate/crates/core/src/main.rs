//! Command-line entry point: ingestion, training, sweeps, drift probes, and
//! report tables. Every run directory gets a manifest that repeats the run
//! exactly. Exit codes: 0 success, 1 runtime failure, 2 usage or config.

use std::io::Write as _;
use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

use dyadrank::config::{self, TrainSpec};
use dyadrank::metrics::{format_columns, read_frames, MetricsFrame};
use dyadrank::runner::{self, TrainSummary};
use dyadrank::trainer::{ProbePoint, StaticOutcome, SweepRow};
use dyadrank::types::{DatasetMeta, InteractionEvent};
use dyadrank::{Error, Result};

#[derive(Parser)]
#[command(name = "dyadrank", version, about = "Dyadic-response ranking engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a ratings CSV or a generator config into the canonical log.
    Ingest(IngestArgs),
    /// Train per a run config; write frames, checkpoint, and manifest.
    Train(TrainArgs),
    /// One recurrent run per axis value; tabulate NCE relative to a baseline.
    Sweep(TrainArgs),
    /// Train, then score the frozen model over future time windows.
    Drift(TrainArgs),
    /// Turn frame files into plot-ready column tables.
    Report(ReportArgs),
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true)))]
struct IngestArgs {
    /// Ratings CSV with a userId,movieId,rating,timestamp header.
    #[arg(long, value_name = "CSV", group = "source")]
    movielens: Option<PathBuf>,
    /// Generator config (TOML).
    #[arg(long, value_name = "TOML", group = "source")]
    synthetic: Option<PathBuf>,
    /// Output directory for events.bin, meta.json, and sidecars.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config (TOML).
    #[arg(long, value_name = "TOML")]
    config: PathBuf,
    /// Override output.dir from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override model.rng_seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Frame file (repeat once to compare two runs; the second is the
    /// candidate, deltas are second minus first).
    #[arg(long = "frames", value_name = "JSONL", required = true)]
    frames: Vec<PathBuf>,
    /// Also write the tables under this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Drift(args) => cmd_drift(args),
        Command::Report(args) => cmd_report(args),
    };
    if let Err(e) = result {
        // Dying readers (e.g. a closed pager) are not an error worth noise.
        if matches!(&e, Error::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe) {
            return;
        }
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn print_summary(events: &[InteractionEvent], meta: &DatasetMeta) -> Result<()> {
    let positives = events.iter().filter(|e| e.label == 1).count();
    let mut out = std::io::stdout().lock();
    writeln!(out, "events     {}", events.len())?;
    writeln!(out, "users      {}", meta.user_count)?;
    writeln!(out, "items      {}", meta.item_count)?;
    writeln!(out, "days       {}", meta.num_days())?;
    writeln!(out, "tasks      {}", meta.num_tasks)?;
    writeln!(
        out,
        "positives  {} ({:.1}%)",
        positives,
        100.0 * positives as f64 / events.len().max(1) as f64
    )?;
    Ok(())
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let (events, meta, probe) = match (&args.movielens, &args.synthetic) {
        (Some(csv), None) => {
            let (events, meta) = runner::ingest_movielens(csv, &args.out)?;
            (events, meta, None)
        }
        (None, Some(toml)) => {
            let spec = config::load_synthetic_spec(toml)?;
            let (events, meta, probe) = runner::ingest_synthetic(&spec, &args.out)?;
            (events, meta, probe)
        }
        _ => unreachable!("clap enforces exactly one source"),
    };
    if let Some(n) = probe {
        writeln!(std::io::stdout(), "probe      {n} events")?;
    }
    print_summary(&events, &meta)
}

/// Config file plus command-line overrides, validated before any data loads.
fn load_spec(args: &TrainArgs) -> Result<TrainSpec> {
    let mut spec = config::load_train_spec(&args.config)?;
    if let Some(out) = &args.out {
        spec.output.dir = out.clone();
    }
    if let Some(seed) = args.seed {
        spec.model.rng_seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

fn print_frames(frames: &[MetricsFrame]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    for f in frames {
        let item_ids = f.item_growth.map_or_else(|| "-".into(), |g| g.distinct_raw_ids.to_string());
        let user_ids = f.user_growth.map_or_else(|| "-".into(), |g| g.distinct_raw_ids.to_string());
        writeln!(
            out,
            "day {:>3}  eval {:>6}  nce {:>7}  auc {:>7}  item-ids {:>8}  user-ids {:>8}",
            f.day,
            f.eval_examples,
            fmt_opt(f.mean_nce(), 4),
            fmt_opt(f.mean_auc(), 4),
            item_ids,
            user_ids,
        )?;
    }
    Ok(())
}

fn print_static(outcome: &StaticOutcome) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "train {}  test {}  positive-rate {}",
        outcome.train_examples,
        outcome.test_examples,
        fmt_opt(outcome.positive_rate, 4)
    )?;
    for (task, (nce, auc)) in outcome.nce.iter().zip(&outcome.auc).enumerate() {
        writeln!(out, "task {task}  nce {}  auc {}", fmt_opt(*nce, 4), fmt_opt(*auc, 4))?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let spec = load_spec(args)?;
    match runner::run_train_spec(&spec)? {
        TrainSummary::Recurrent(outcome) => print_frames(&outcome.frames),
        TrainSummary::Static(outcome) => print_static(&outcome),
    }
}

fn sweep_table(rows: &[SweepRow], baseline: usize) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            // The baseline cell is the yardstick, not a movement.
            let rel = if i == baseline && r.relative_pct.is_some() {
                "-".to_string()
            } else {
                r.relative_pct.map_or_else(|| "-".into(), |v| format!("{v:+.2}%"))
            };
            vec![r.label.clone(), fmt_opt(r.mean_nce, 4), rel]
        })
        .collect();
    format_columns(&["cell", "nce", "relative"], &body)
}

fn cmd_sweep(args: &TrainArgs) -> Result<()> {
    let spec = load_spec(args)?;
    let rows = runner::run_sweep_spec(&spec)?;
    let baseline = spec.sweep.as_ref().map_or(0, |s| s.baseline);
    let table = sweep_table(&rows, baseline);
    std::fs::write(spec.output.dir.join("sweep.txt"), &table)?;
    write!(std::io::stdout(), "{table}")?;
    Ok(())
}

fn drift_table(points: &[ProbePoint]) -> String {
    let body: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.window.to_string(),
                p.start.to_string(),
                p.examples.to_string(),
                fmt_opt(p.nce, 4),
            ]
        })
        .collect();
    format_columns(&["window", "start", "examples", "nce"], &body)
}

fn cmd_drift(args: &TrainArgs) -> Result<()> {
    let spec = load_spec(args)?;
    let (_, points) = runner::run_drift_spec(&spec)?;
    let table = drift_table(&points);
    std::fs::write(spec.output.dir.join("drift.txt"), &table)?;
    write!(std::io::stdout(), "{table}")?;
    Ok(())
}

/// Emit a table to stdout and, when a report directory is set, to a file.
fn emit(out: &Option<PathBuf>, name: &str, title: &str, table: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "# {title}")?;
    write!(stdout, "{table}")?;
    writeln!(stdout)?;
    if let Some(dir) = out {
        std::fs::write(dir.join(name), table)?;
    }
    Ok(())
}

fn growth_table(frames: &[MetricsFrame]) -> String {
    let body: Vec<Vec<String>> = frames
        .iter()
        .map(|f| {
            let g = |r: Option<dyadrank::embeddings::GrowthReport>| match r {
                Some(g) => {
                    (g.active_params.to_string(), g.distinct_raw_ids.to_string(),
                     format!("{:.4}", g.collision_rate))
                }
                None => ("-".into(), "-".into(), "-".into()),
            };
            let (ip, ii, ic) = g(f.item_growth);
            let (up, ui, uc) = g(f.user_growth);
            vec![f.day.to_string(), ip, ii, ic, up, ui, uc]
        })
        .collect();
    format_columns(
        &["day", "item_params", "item_ids", "item_coll", "user_params", "user_ids", "user_coll"],
        &body,
    )
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.frames.len() > 2 {
        return Err(Error::config("report compares at most two frame files"));
    }
    let runs: Vec<Vec<MetricsFrame>> = args
        .frames
        .iter()
        .map(|p| read_frames(p))
        .collect::<Result<_>>()?;
    for (run, path) in runs.iter().zip(&args.frames) {
        if run.is_empty() {
            return Err(Error::MetricInput(format!("{}: no frames", path.display())));
        }
    }
    let tasks: Vec<usize> = runs.iter().map(|r| r[0].nce.len()).collect();
    if tasks.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::MetricInput(format!(
            "frame schemas differ: {} vs {} tasks",
            tasks[0], tasks[1]
        )));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    {
        let mut out = std::io::stdout().lock();
        for (i, path) in args.frames.iter().enumerate() {
            writeln!(out, "run {}: {}", (b'a' + i as u8) as char, path.display())?;
        }
        writeln!(out)?;
    }

    // NCE series, normalized by run a's first present value.
    let base = runs[0].iter().find_map(|f| f.mean_nce());
    let ndays = runs.iter().map(|r| r.len()).max().unwrap();
    let mut body = Vec::new();
    for d in 0..ndays {
        let day = runs.iter().find_map(|r| r.get(d)).map_or(d as u32 + 1, |f| f.day);
        let mut row = vec![day.to_string()];
        for run in &runs {
            let v = run.get(d).and_then(|f| f.mean_nce());
            row.push(fmt_opt(v, 4));
            let norm = match (v, base) {
                (Some(v), Some(b)) => Some(v / b),
                _ => None,
            };
            row.push(fmt_opt(norm, 4));
        }
        body.push(row);
    }
    let mut header = vec!["day".to_string()];
    for i in 0..runs.len() {
        let tag = (b'a' + i as u8) as char;
        header.push(format!("nce_{tag}"));
        header.push(format!("norm_{tag}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    emit(&args.out, "report_nce.txt", "nce series", &format_columns(&header_refs, &body))?;

    for (i, run) in runs.iter().enumerate() {
        let tag = (b'a' + i as u8) as char;
        emit(
            &args.out,
            &format!("report_growth_{tag}.txt"),
            &format!("parameter growth ({tag})"),
            &growth_table(run),
        )?;
    }

    if runs.len() == 2 {
        let (a, b) = (&runs[0], &runs[1]);
        let n = a.len().min(b.len());
        let body: Vec<Vec<String>> = (0..n)
            .map(|d| {
                let (x, y) = (a[d].mean_nce(), b[d].mean_nce());
                let delta = match (x, y) {
                    (Some(x), Some(y)) => Some(y - x),
                    _ => None,
                };
                vec![a[d].day.to_string(), fmt_opt(x, 4), fmt_opt(y, 4), fmt_opt(delta, 4)]
            })
            .collect();
        emit(
            &args.out,
            "report_delta.txt",
            "nce delta (negative means b is better)",
            &format_columns(&["day", "nce_a", "nce_b", "delta"], &body),
        )?;

        let last_common = (0..n)
            .rev()
            .find(|&d| a[d].segments.is_some() && b[d].segments.is_some());
        if let Some(d) = last_common {
            let sa = a[d].segments.as_ref().unwrap();
            let sb = b[d].segments.as_ref().unwrap();
            let delta = dyadrank::metrics::segment_delta(sa, sb)?;
            let body: Vec<Vec<String>> = delta
                .buckets
                .iter()
                .enumerate()
                .map(|(i, bkt)| {
                    let label = if i < delta.edges.len() {
                        format!("<={}", delta.edges[i])
                    } else if let Some(last) = delta.edges.last() {
                        format!(">{last}")
                    } else {
                        "all".to_string()
                    };
                    vec![
                        label,
                        bkt.examples.to_string(),
                        fmt_opt(bkt.nce_a, 4),
                        fmt_opt(bkt.nce_b, 4),
                        fmt_opt(bkt.delta, 4),
                    ]
                })
                .collect();
            emit(
                &args.out,
                "report_segments.txt",
                &format!("activeness segments, day {} (negative means b is better)", a[d].day),
                &format_columns(&["bucket", "examples", "nce_a", "nce_b", "delta"], &body),
            )?;
        }
    }
    Ok(())
}
