//! Command line for the collaborative consistency learning toolkit:
//! benchmark generation, training, evaluation, the ablation grid, curve
//! plotting, and batch style translation.
//!
//! Exit codes: 0 success, 1 configuration or I/O error, 2 numerical
//! failure (non-finite loss).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ccl::data::{load_dataset, read_image_png, save_dataset, write_image_png};
use ccl::experiments::{format_table, run_ablation, ExperimentSpec};
use ccl::metrics::EvalRecord;
use ccl::plot::{plot_history, plot_loss_log, LossLogRecord};
use ccl::style::{self, StyleStats};
use ccl::synth::{generate_benchmark, GenerateSpec};
use ccl::trainer::{
    self, build_nets, evaluate, load_checkpoint, save_checkpoint, train, train_from, TrainConfig,
    TrainError, TrainMode, TrainRun,
};

#[derive(Parser)]
#[command(
    name = "ccl",
    version,
    about = "Multi-target domain adaptation for semantic segmentation with collaborative consistency learning, on a synthetic desk-scale benchmark"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-domain benchmark dataset.
    Generate {
        /// Generation spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train in one of the modes {ccl, source_only, data_combination,
    /// individual}; writes loss log, metrics, and a checkpoint.
    Train {
        /// Dataset directory (a generate output).
        #[arg(long)]
        data: PathBuf,
        /// Train config JSON; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the dataset's eval splits.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics report JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the consistency/distillation/weight-reg toggle grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// Experiment spec JSON (train config + grid + seeds).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seed list overriding the spec.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render loss curves and mIoU curves from run logs.
    Plot {
        /// loss_log.jsonl from a train run.
        #[arg(long)]
        log: Option<PathBuf>,
        /// history.json from a train run.
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Restyle every PNG in a directory from one style to another.
    Translate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        source_stats: PathBuf,
        #[arg(long)]
        target_stats: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    Ok(match s {
        "ccl" => TrainMode::Ccl,
        "source_only" => TrainMode::SourceOnly,
        "data_combination" => TrainMode::DataCombination,
        "individual" => TrainMode::Individual,
        other => {
            bail!("unknown mode '{other}'; expected ccl, source_only, data_combination or individual")
        }
    })
}

fn cmd_generate(spec_path: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut spec: GenerateSpec = match &spec_path {
        Some(p) => read_json(p)?,
        None => GenerateSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let styles = spec.resolved_styles();
    let ds = generate_benchmark(&spec.scene, &styles, &spec.sizes, spec.seed)?;
    let manifest = save_dataset(&out, &ds, Some(spec.seed), Some(serde_json::to_value(&spec)?))?;

    // Per-domain LAB statistics, handy as translate inputs.
    let stats = trainer::compute_domain_stats(&ds);
    let stats_dir = out.join("stats");
    fs::create_dir_all(&stats_dir)?;
    for (d, s) in stats.stats.iter().enumerate() {
        write_json(&stats_dir.join(format!("domain_{d}_lab_stats.json")), s)?;
    }

    println!(
        "generated dataset at {}: {} classes, {} targets, seed {}",
        out.display(),
        manifest.num_classes,
        manifest.num_targets,
        spec.seed
    );
    println!(
        "source train {}; per-target train {}, eval {}",
        spec.sizes.source_train, spec.sizes.target_train, spec.sizes.target_eval
    );
    Ok(())
}

fn write_run_outputs(
    out: &Path,
    run: &TrainRun,
    cfg: &TrainConfig,
    num_classes: usize,
) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut log = String::new();
    for r in &run.reports {
        for (term, value) in &r.terms {
            log.push_str(&serde_json::to_string(&LossLogRecord {
                step: r.step,
                term: term.clone(),
                value: *value,
            })?);
            log.push('\n');
        }
    }
    fs::write(out.join("loss_log.jsonl"), log)?;
    write_json(&out.join("history.json"), &run.history)?;
    let final_step = run.state.step;
    let final_records: Vec<&EvalRecord> =
        run.history.iter().filter(|h| h.step == final_step).collect();
    write_json(&out.join("final_metrics.json"), &final_records)?;
    write_json(&out.join("config_echo.json"), cfg)?;
    save_checkpoint(&out.join("checkpoint.bin"), &run.state, cfg, num_classes)?;
    Ok(())
}

fn print_final(run: &TrainRun) {
    let final_step = run.state.step;
    for h in run.history.iter().filter(|h| h.step == final_step) {
        println!("final {} target_{} miou {:.4}", h.role, h.domain_id, h.miou);
    }
}

fn cmd_train(
    data: PathBuf,
    config: Option<PathBuf>,
    mode: Option<String>,
    seed: Option<u64>,
    out: PathBuf,
    resume: Option<PathBuf>,
) -> Result<()> {
    let (ds, _manifest) = load_dataset(&data)?;

    if let Some(ckpt) = resume {
        let (state, cfg, num_classes) = load_checkpoint(&ckpt)?;
        if num_classes != ds.num_classes() {
            bail!(
                "checkpoint was trained with {num_classes} classes, dataset has {}",
                ds.num_classes()
            );
        }
        let nets = build_nets(&cfg, num_classes)?;
        let run = train_from(state, &ds, &cfg, &nets)?;
        write_run_outputs(&out, &run, &cfg, num_classes)?;
        print_final(&run);
        return Ok(());
    }

    let mut cfg: TrainConfig = match &config {
        Some(p) => read_json(p)?,
        None => TrainConfig { targets: ds.num_targets(), ..TrainConfig::default() },
    };
    if let Some(m) = mode {
        cfg.mode = parse_mode(&m)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.targets != ds.num_targets() {
        bail!("config expects {} target domains, dataset has {}", cfg.targets, ds.num_targets());
    }
    let run = train(&ds, &cfg)?;
    write_run_outputs(&out, &run, &cfg, ds.num_classes())?;
    print_final(&run);
    Ok(())
}

fn cmd_eval(data: PathBuf, checkpoint: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let (ds, _) = load_dataset(&data)?;
    let (state, cfg, num_classes) = load_checkpoint(&checkpoint)?;
    if num_classes != ds.num_classes() {
        bail!("checkpoint expects {num_classes} classes, dataset has {}", ds.num_classes());
    }
    let nets = build_nets(&cfg, num_classes)?;
    let records = evaluate(&state, &nets, &ds)?;
    match out {
        Some(p) => write_json(&p, &records)?,
        None => println!("{}", serde_json::to_string_pretty(&records)?),
    }
    for r in &records {
        eprintln!("{} target_{} miou {:.4}", r.role, r.domain_id, r.miou);
    }
    Ok(())
}

fn cmd_ablate(
    data: PathBuf,
    config: Option<PathBuf>,
    seeds: Option<String>,
    out: PathBuf,
) -> Result<()> {
    let (ds, _) = load_dataset(&data)?;
    let mut spec: ExperimentSpec = match &config {
        Some(p) => read_json(p)?,
        None => ExperimentSpec {
            train: TrainConfig { targets: ds.num_targets(), ..TrainConfig::default() },
            ..ExperimentSpec::default()
        },
    };
    if let Some(s) = seeds {
        spec.seeds = s
            .split(',')
            .map(|t| t.trim().parse::<u64>().context("seed list must be integers"))
            .collect::<Result<_>>()?;
    }
    if spec.train.targets != ds.num_targets() {
        bail!(
            "experiment config expects {} targets, dataset has {}",
            spec.train.targets,
            ds.num_targets()
        );
    }
    let result = run_ablation(&ds, &spec, |msg| eprintln!("{msg}"))?;
    fs::create_dir_all(&out)?;
    write_json(&out.join("ablation.json"), &result)?;
    let table = format_table(&result);
    fs::write(out.join("ablation.txt"), &table)?;
    println!("{table}");
    Ok(())
}

fn cmd_plot(log: Option<PathBuf>, history: Option<PathBuf>, out: PathBuf) -> Result<()> {
    if log.is_none() && history.is_none() {
        bail!("plot needs --log and/or --history");
    }
    let mut written = Vec::new();
    if let Some(l) = log {
        written.extend(plot_loss_log(&l, &out)?);
    }
    if let Some(h) = history {
        written.extend(plot_history(&h, &out)?);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_translate(
    input: PathBuf,
    out: PathBuf,
    source_stats: PathBuf,
    target_stats: PathBuf,
) -> Result<()> {
    let src: StyleStats = read_json(&source_stats)?;
    let tgt: StyleStats = read_json(&target_stats)?;
    fs::create_dir_all(&out)?;
    let mut names: Vec<PathBuf> = fs::read_dir(&input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("no .png files in {}", input.display());
    }
    for p in &names {
        let img = read_image_png(p)?;
        let moved = style::translate(&img, &src, &tgt);
        let name = p.file_name().expect("file has a name");
        write_image_png(&out.join(name), &moved)?;
    }
    println!("translated {} images into {}", names.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { spec, seed, out } => cmd_generate(spec, seed, out),
        Cmd::Train { data, config, mode, seed, out, resume } => {
            cmd_train(data, config, mode, seed, out, resume)
        }
        Cmd::Eval { data, checkpoint, out } => cmd_eval(data, checkpoint, out),
        Cmd::Ablate { data, config, seeds, out } => cmd_ablate(data, config, seeds, out),
        Cmd::Plot { log, history, out } => cmd_plot(log, history, out),
        Cmd::Translate { input, out, source_stats, target_stats } => {
            cmd_translate(input, out, source_stats, target_stats)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .downcast_ref::<TrainError>()
                .is_some_and(|t| matches!(t, TrainError::NonFinite { .. }));
            if numerical {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
