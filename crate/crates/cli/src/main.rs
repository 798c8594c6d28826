//! `gvpr`: synthesize, preprocess, train, evaluate, localize and export.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use gvpr_core::config::{config_keys, Profile, RunConfig};
use gvpr_core::eventio::{load_events, load_poses, make_samples, write_events, write_poses, EventFormat, SampleSet};
use gvpr_core::model::GuidedVae;
use gvpr_core::pipeline::{
    excitation_accuracy, latent_means, latent_probe, localize_samples, LatentPart,
};
use gvpr_core::synthgen::synthesize;
use gvpr_core::training::{evaluate, train, write_metrics_csv};

const TRAIN: &str = "train";
const TEST: &str = "test";
const CHECKPOINT: &str = "model.gvae";

#[derive(Parser, Debug)]
#[command(name = "gvpr", version, about = "Guided spiking VAE for event-based visual place recognition")]
struct Cli {
    /// TOML config file merged over the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds recordings, initialization, shuffling and probes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "paper", value_parser = ["paper", "tiny"])]
    profile: String,
    /// Working directory for every produced file.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Config override, e.g. `--set train.epochs=20`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic training and test recordings.
    Synth,
    /// Cut recordings into labelled, binned sample archives.
    Preprocess,
    /// Train on the training archive; writes the checkpoint and metrics.
    Train {
        /// Disable both guidance terms (the unguided VAE).
        #[arg(long)]
        unguided: bool,
    },
    /// Classification accuracy, inhibition probe and size figures as JSON.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sequence retrieval of test samples against training samples.
    Localize {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Reference sample archive (default: the training archive).
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Query sample archive (default: the test archive).
        #[arg(long)]
        queries: Option<PathBuf>,
    },
    /// Per-sample latent means as CSV for offline projection and plots.
    ExportLatents {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Sample archive (default: the test archive).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn key_help() -> String {
    let mut s = String::from("Config keys (settable in --config files or with --set; paper-profile defaults):\n");
    for (k, v) in config_keys() {
        s.push_str(&format!("  {k} = {v}\n"));
    }
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(key_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let profile: Profile = cli.profile.parse()?;
    let cfg = RunConfig::resolve(profile, cli.config.as_deref(), &cli.overrides, cli.seed)
        .context("invalid configuration")?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Synth => cmd_synth(&cfg, out),
        Command::Preprocess => cmd_preprocess(&cfg, out),
        Command::Train { unguided } => cmd_train(&cfg, out, unguided),
        Command::Eval { checkpoint } => cmd_eval(&cfg, out, checkpoint),
        Command::Localize {
            checkpoint,
            refs,
            queries,
        } => cmd_localize(&cfg, out, checkpoint, refs, queries),
        Command::ExportLatents {
            checkpoint,
            samples,
            output,
        } => cmd_export(&cfg, out, checkpoint, samples, output),
    }
}

fn or_default(configured: &str, out: &Path, name: String) -> PathBuf {
    if configured.is_empty() {
        out.join(name)
    } else {
        PathBuf::from(configured)
    }
}

fn recording_paths(cfg: &RunConfig, out: &Path, which: &str) -> (PathBuf, PathBuf) {
    let p = &cfg.paths;
    let (ev, po) = if which == TRAIN {
        (&p.train_events, &p.train_poses)
    } else {
        (&p.test_events, &p.test_poses)
    };
    (
        or_default(ev, out, format!("{which}.evpr")),
        or_default(po, out, format!("{which}_poses.csv")),
    )
}

fn event_format(cfg: &RunConfig) -> EventFormat {
    match cfg.paths.event_format.as_str() {
        "csv" => EventFormat::Csv {
            width: cfg.paths.sensor_width,
            height: cfg.paths.sensor_height,
        },
        _ => EventFormat::Binary,
    }
}

fn samples_path(out: &Path, which: &str) -> PathBuf {
    out.join(format!("{which}.samples"))
}

fn load_model(out: &Path, checkpoint: Option<PathBuf>, cfg: &RunConfig) -> Result<GuidedVae> {
    let path = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT));
    let (model, _) = GuidedVae::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if model.arch().num_classes != cfg.arena.num_cells() {
        bail!(
            "checkpoint predicts {} cells but the arena has {}",
            model.arch().num_classes,
            cfg.arena.num_cells()
        );
    }
    Ok(model)
}

fn load_samples(path: &Path) -> Result<SampleSet> {
    SampleSet::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fmt = event_format(cfg);
    for (which, test) in [(TRAIN, false), (TEST, true)] {
        let (poses, events) = synthesize(&cfg.recording(test), &cfg.arena)?;
        let (ev_path, pose_path) = recording_paths(cfg, out, which);
        write_events(&ev_path, &events, fmt)?;
        write_poses(&pose_path, &poses)?;
        let duration = match (poses.first(), poses.last()) {
            (Some(a), Some(b)) => (b.t_us - a.t_us) as f64 * 1e-6,
            _ => 0.0,
        };
        println!("{which}: {} events over {duration:.2} s -> {}", events.len(), ev_path.display());
    }
    Ok(())
}

fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fmt = event_format(cfg);
    for which in [TRAIN, TEST] {
        let (ev_path, pose_path) = recording_paths(cfg, out, which);
        let stream = load_events(&ev_path, fmt).with_context(|| format!("loading {}", ev_path.display()))?;
        let poses = load_poses(&pose_path).with_context(|| format!("loading {}", pose_path.display()))?;
        if stream.is_empty() {
            eprintln!("warning: {} holds no events; writing an empty archive", ev_path.display());
        }
        let set = SampleSet {
            arena: cfg.arena,
            binning: cfg.sampling.binning,
            samples: make_samples(&stream, &poses, &cfg.arena, &cfg.sampling)?,
        };
        let path = samples_path(out, which);
        set.save(&path)?;
        println!("{which}: {} samples, per cell {:?} -> {}", set.len(), set.per_cell_counts(), path.display());
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, unguided: bool) -> Result<()> {
    let set = load_samples(&samples_path(out, TRAIN))?;
    let tcfg = if unguided { cfg.train.unguided() } else { cfg.train.clone() };
    let model = GuidedVae::new(cfg.arch.clone(), cfg.lif, tcfg.seed)?;
    let start = Instant::now();
    let outcome = train(&set, model, &tcfg, |m| {
        eprintln!(
            "epoch {:>3}  recon {:.2}  kl {:.3}  exc {:.3} ({:.1}%)  inh-cls {:.1}%",
            m.epoch,
            m.recon,
            m.kl,
            m.exc_loss,
            100.0 * m.exc_acc,
            100.0 * m.inh_cls_acc
        );
    })?;
    let meta = serde_json::json!({
        "selected_epoch": outcome.selected_epoch,
        "unguided": unguided,
        "train": tcfg,
    });
    outcome.model.save(&out.join(CHECKPOINT), meta)?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.metrics)?;
    std::fs::write(out.join("run_config.toml"), cfg.to_toml()?)?;
    println!(
        "trained {} epochs in {:.1} s; kept epoch {}",
        outcome.metrics.len(),
        start.elapsed().as_secs_f64(),
        outcome.selected_epoch
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    exc_acc: f64,
    inh_probe_acc: f64,
    recon_bce: f64,
    kl: f64,
    param_count: usize,
    neuron_count: usize,
    test_samples: usize,
}

fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<PathBuf>) -> Result<()> {
    let model = load_model(out, checkpoint, cfg)?;
    let train_set = load_samples(&samples_path(out, TRAIN))?;
    let test_set = load_samples(&samples_path(out, TEST))?;
    let refs: Vec<_> = test_set.samples.iter().collect();
    let e = evaluate(&model, &refs, cfg.sampling.binning.clip_cap)?;
    let probe = latent_probe(&model, &train_set.samples, &test_set.samples, LatentPart::Inhibition, &cfg.probe)?;
    let report = EvalReport {
        exc_acc: excitation_accuracy(&model, &test_set.samples)?,
        inh_probe_acc: probe.test_acc,
        recon_bce: e.recon,
        kl: e.kl,
        param_count: model.arch().param_count(),
        neuron_count: model.arch().neuron_count(),
        test_samples: test_set.len(),
    };
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(out.join("eval.json"), &text)?;
    println!("{text}");
    eprintln!(
        "exc acc {:.1}%, inhibition probe {:.1}%, recon BCE {:.2}, {} params, {} neurons",
        100.0 * report.exc_acc,
        100.0 * report.inh_probe_acc,
        report.recon_bce,
        report.param_count,
        report.neuron_count
    );
    Ok(())
}

fn cmd_localize(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<PathBuf>,
    refs: Option<PathBuf>,
    queries: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(out, checkpoint, cfg)?;
    let refs = load_samples(&refs.unwrap_or_else(|| samples_path(out, TRAIN)))?;
    let queries = load_samples(&queries.unwrap_or_else(|| samples_path(out, TEST)))?;
    let report = localize_samples(&model, &refs.samples, &queries.samples, cfg.localization.sequence_len)?;
    report.write_csvs(&out.join("localization_fractions.csv"), &out.join("localization_histogram.csv"))?;
    let summary: Vec<String> = report
        .frac_below
        .iter()
        .map(|(t, f)| format!("<{t} m: {:.1}%", 100.0 * f))
        .collect();
    println!("{} queries; {}", report.errors.len(), summary.join(", "));
    Ok(())
}

fn cmd_export(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<PathBuf>,
    samples: Option<PathBuf>,
    output: Option<PathBuf>,
) -> Result<()> {
    let model = load_model(out, checkpoint, cfg)?;
    let set = load_samples(&samples.unwrap_or_else(|| samples_path(out, TEST)))?;
    let path = output.unwrap_or_else(|| out.join("latents.csv"));
    let mu = latent_means(&model, &set.samples)?;
    let d = model.arch().latent_dim;
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = ["sample_idx", "cell", "x_m", "y_m"].map(String::from).to_vec();
    header.extend((0..d).map(|i| format!("mu_{i}")));
    w.write_record(&header)?;
    for (i, s) in set.samples.iter().enumerate() {
        let mut row = vec![i.to_string(), s.cell.to_string(), s.pose.x.to_string(), s.pose.y.to_string()];
        row.extend(mu.row(i).iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("{} rows x {} latents -> {}", set.len(), d, path.display());
    Ok(())
}
