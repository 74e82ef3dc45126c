mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use scam_core::data::{load_frames, synth_dataset, DatasetManifest, FeatureStore};
use scam_core::dsp::{log_mel, read_wav};
use scam_core::emotion_space::BasicEmotion;
use scam_core::model::{Model, SegmentFeatures};
use scam_core::trainkit::{self, disagreement_matrix, matrix_csv, EvalReport, TrainConfig};

use config::{RunConfig, SEED_VAR};

const MANIFEST: &str = "manifest.json";
const FEATURES: &str = "features.tensors";

#[derive(Parser)]
#[command(name = "scam", version, about = "Context-aware emotion recognition over segment compositions")]
struct Cli {
    /// TOML config with [synth], [model], [train] and [spectrogram] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config field, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest.json and features.tensors.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute log-mel spectrograms (and load visual frames) for a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a data directory; writes history, anchors and checkpoints.
    Train {
        /// Directory holding manifest.json and features.tensors.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-segment baseline: k = 1, no propagation, no context loss, R = 1.
        #[arg(long)]
        seg: bool,
    },
    /// Evaluate a checkpoint on the split recorded in it.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Confusion CSVs for one or two evaluations, a disagreement CSV for
    /// two, and a plotting script.
    Report {
        #[arg(long)]
        eval_a: PathBuf,
        #[arg(long)]
        eval_b: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let env_seed = std::env::var(SEED_VAR).ok();
    let run_config = || RunConfig::load(cli.config.as_deref(), &cli.overrides, env_seed.as_deref());
    match &cli.command {
        Command::Synth { out } => synth(&run_config()?, out),
        Command::Preprocess { manifest, out } => preprocess(&run_config()?, manifest, out),
        Command::Train { data, out, seg } => train(run_config()?, data, out, *seg),
        Command::Eval {
            checkpoint,
            data,
            out,
            split,
        } => eval(checkpoint, data, out, *split),
        Command::Report { eval_a, eval_b, out } => report(eval_a, eval_b.as_deref(), out),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = synth_dataset(&cfg.synth)?;
    create_dir(out)?;
    ds.manifest.save(&out.join(MANIFEST))?;
    ds.features.save(&out.join(FEATURES))?;
    let counts = ds.manifest.class_counts();
    println!(
        "{} segments in {} sessions",
        ds.manifest.entries.len(),
        ds.manifest.sessions().len()
    );
    for (e, n) in BasicEmotion::ALL.iter().zip(counts) {
        println!("  {:<8} {n}", e.name());
    }
    Ok(())
}

fn preprocess(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    if manifest.entries.iter().all(|e| e.audio_path.is_none() && e.frame_paths.is_none()) {
        log::warn!("{}: no audio or frame paths; nothing to preprocess", manifest_path.display());
        return Ok(());
    }
    let spec = &cfg.spectrogram;
    let mut store = FeatureStore::new();
    let (mut files, mut failures) = (0, 0);
    for e in &manifest.entries {
        let audio = e.audio_path.as_ref().map(|p| {
            files += 1;
            let path = base.join(p);
            let (signal, rate) = read_wav(&path)?;
            if rate != spec.sample_rate {
                bail!("{}: sample rate {rate} Hz, expected {} Hz", path.display(), spec.sample_rate);
            }
            Ok(log_mel(&signal, spec).with_context(|| path.display().to_string())?.values)
        });
        let visual = e.frame_paths.as_ref().map(|ps| {
            files += 3;
            Ok(load_frames(&ps.clone().map(|p| base.join(p)), cfg.model.visual_size)?)
        });
        let audio = audio.transpose();
        let visual: Result<_> = visual.transpose();
        match (audio, visual) {
            (Ok(audio), Ok(visual)) => store.insert(e.segment_id.clone(), SegmentFeatures { audio, visual }),
            (a, v) => {
                for err in [a.err(), v.err()].into_iter().flatten() {
                    log::error!("segment {}: {err:#}", e.segment_id);
                    failures += 1;
                }
            }
        }
    }
    if failures > 0 {
        bail!("{failures} of {} segment inputs failed to preprocess ({files} files referenced)", manifest.entries.len());
    }
    create_dir(out)?;
    write(&out.join(MANIFEST), manifest.to_json())?;
    store.save(&out.join(FEATURES))?;
    println!("{} segments preprocessed", store.len());
    Ok(())
}

/// Manifest and features of a data directory. Media paths are not needed
/// once features exist, so they are not checked here.
fn load_data(dir: &Path) -> Result<(DatasetManifest, FeatureStore)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let manifest = DatasetManifest::from_json(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    manifest.validate()?;
    let store = FeatureStore::load(&dir.join(FEATURES))?;
    Ok((manifest, store))
}

fn train(mut cfg: RunConfig, data_dir: &Path, out: &Path, seg: bool) -> Result<()> {
    if seg {
        cfg.model.composition_size = 1;
        cfg.train = cfg.train.seg();
    }
    let (manifest, store) = load_data(data_dir)?;
    let prepared = trainkit::prepare(&manifest, cfg.model.composition_size, &cfg.train)?;
    let mut model = Model::new(cfg.model.clone())?;
    create_dir(out)?;
    write(&out.join("config.toml"), cfg.to_toml())?;
    let outcome = trainkit::train(&mut model, &prepared, &store, &cfg.train, Some(out))?;
    println!(
        "{} train / {} test compositions; final UA {:.2}, best UA {:.2} at epoch {}, lowest test loss at epoch {}",
        prepared.train.len(),
        prepared.test.len(),
        outcome.final_report.ua,
        outcome.best_report.ua,
        outcome.best_epoch,
        outcome.lowest_loss_epoch()
    );
    Ok(())
}

fn eval(checkpoint: &Path, data_dir: &Path, out: &Path, split: Split) -> Result<()> {
    let (model, extra) = Model::load(checkpoint)?;
    let train_cfg: TrainConfig = serde_json::from_value(extra.get("train").cloned().unwrap_or_default())
        .map_err(|e| anyhow!("{}: checkpoint has no usable training config: {e}", checkpoint.display()))?;
    let (manifest, store) = load_data(data_dir)?;
    let prepared = trainkit::prepare(&manifest, model.config.composition_size, &train_cfg)?;
    let items = match split {
        Split::Train => &prepared.train,
        Split::Test => &prepared.test,
    };
    trainkit::check_features(&model, items, &store).with_context(|| format!("checkpoint {} does not fit data {}", checkpoint.display(), data_dir.display()))?;
    let report = trainkit::evaluate(&model, items, &store, &train_cfg)?;
    create_dir(out)?;
    write(&out.join("eval.json"), report.to_json())?;
    write(&out.join("confusion.csv"), matrix_csv(&report.confusion))?;
    println!(
        "{} compositions: UA {:.2}, WA {:.2}, valence acc {:.2}, arousal acc {:.2}",
        report.records.len(),
        report.ua,
        report.wa,
        report.valence_acc,
        report.arousal_acc
    );
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    EvalReport::from_json(&text).with_context(|| path.display().to_string())
}

fn report(a_path: &Path, b_path: Option<&Path>, out: &Path) -> Result<()> {
    let a = read_report(a_path)?;
    let b = b_path.map(read_report).transpose()?;
    let disagreement = match &b {
        Some(b) => Some((disagreement_matrix(&a, b)?, disagreement_matrix(b, &a)?)),
        None => None,
    };
    create_dir(out)?;
    write(&out.join("confusion_a.csv"), matrix_csv(&a.confusion))?;
    println!("a: UA {:.2} over {} compositions", a.ua, a.records.len());
    if let (Some(b), Some((ab, ba))) = (&b, &disagreement) {
        write(&out.join("confusion_b.csv"), matrix_csv(&b.confusion))?;
        write(&out.join("disagreement_a_vs_b.csv"), matrix_csv(ab))?;
        write(&out.join("disagreement_b_vs_a.csv"), matrix_csv(ba))?;
        println!("b: UA {:.2} over {} compositions", b.ua, b.records.len());
    }
    write(&out.join("plot.py"), PLOT_SCRIPT)?;
    Ok(())
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Render every matrix CSV in this directory as a heatmap PNG."""
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = pathlib.Path(__file__).resolve().parent
for path in sorted(here.glob("*.csv")):
    with path.open() as f:
        rows = list(csv.reader(f))
    cols = rows[0][1:]
    names = [r[0] for r in rows[1:]]
    values = [[int(v) for v in r[1:]] for r in rows[1:]]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.imshow(values, cmap="Blues")
    ax.set_xticks(range(len(cols)), cols)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i, row in enumerate(values):
        for j, v in enumerate(row):
            ax.text(j, i, str(v), ha="center", va="center")
    ax.set_title(path.stem)
    fig.tight_layout()
    fig.savefig(path.with_suffix(".png"), dpi=120)
    plt.close(fig)
"#;
