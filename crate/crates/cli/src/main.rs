use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use lidarup::config::RunConfig;
use lidarup::denoiser::Denoiser;
use lidarup::diffusion::sample;
use lidarup::geometry::{read_cloud, write_ply, write_xyz, PointCloud};
use lidarup::metrics::evaluate;
use lidarup::scenegen::{read_dataset, synthesize, write_dataset};
use lidarup::training::{history_csv, load_checkpoint, train, HistoryRow, TrainState, HISTORY_HEADER};

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const HISTORY_FILE: &str = "loss.csv";
const MANIFEST_FILE: &str = "run.json";

#[derive(Parser, Debug)]
#[command(name = "lidarup", version, about = "Diffusion-based LiDAR scene upsampling")]
struct Cli {
    /// Key-value config file; unset keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Ply,
    Xyz,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate procedural scenes and write (condition, input) pairs.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoiser on a synthesized dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Upsample a sparse cloud with a trained checkpoint.
    Upsample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rate: usize,
        #[arg(long)]
        guidance: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, value_enum, default_value = "ply")]
        format: Format,
    },
    /// Compare a predicted cloud against a reference.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// F-score distance threshold in meters.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Dump the noise schedule as CSV.
    InspectSchedule {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default().with_derived_seeds(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: serde_json::Value) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config": cfg.to_text(),
        "details": extra,
    });
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let pairs = synthesize(&cfg.scene, cfg.data.scenes, cfg.data.n_cond, cfg.train.rate, cfg.scene.seed)?;
    let manifest = write_dataset(out, &cfg.scene, &pairs, cfg.scene.seed)?;
    write_manifest(out, "synth", cfg, json!({ "pairs": manifest.pairs.len() }))?;
    eprintln!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

fn train_cmd(cfg: &RunConfig, dataset: &Path, out: &Path, resume: bool) -> Result<()> {
    let (_, pairs) = read_dataset(dataset)?;
    let sched = cfg.schedule()?;
    create_dir(out)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let history_path = out.join(HISTORY_FILE);
    let mut state = if resume {
        load_checkpoint(&ckpt, Some(&cfg.denoiser))?.into()
    } else {
        TrainState::new(Denoiser::new(cfg.denoiser.clone(), cfg.model_seed())?)
    };
    let mut csv = if resume && history_path.exists() {
        fs::read_to_string(&history_path)?
    } else {
        format!("{HISTORY_HEADER}\n")
    };
    let total = cfg.train.epochs * cfg.train.steps_per_epoch(pairs.len());
    let report = |r: &HistoryRow| {
        if (r.step + 1) % 10 == 0 || r.step + 1 == total as u64 {
            eprintln!("step {}/{total} epoch {} mse {:.4} std {:.3}", r.step + 1, r.epoch, r.loss.mse, r.loss.observed_std);
        }
    };
    let rows = train(&mut state, &pairs, &sched, &cfg.train, Some(&ckpt), report)?;
    csv.push_str(history_csv(&rows).trim_start_matches(HISTORY_HEADER).trim_start_matches('\n'));
    fs::write(&history_path, csv).with_context(|| format!("writing {}", history_path.display()))?;
    write_manifest(
        out,
        "train",
        cfg,
        json!({ "dataset": dataset, "resumed": resume, "steps": state.step, "epochs": state.epoch }),
    )?;
    Ok(())
}

fn upsample(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out: &Path,
    rate: usize,
    format: Format,
) -> Result<()> {
    if rate == 0 {
        bail!("--rate must be at least 1");
    }
    let sched = cfg.schedule()?;
    let sampler = cfg.sampler()?;
    sampler.validate(&sched)?;
    let model = load_checkpoint(checkpoint, Some(&cfg.denoiser))?.model;
    let condition = PointCloud::new(read_cloud(input)?.into_points())?;
    let result = sample(&model, &condition, rate, &sampler, &sched)?;
    create_dir(out)?;
    let file = match format {
        Format::Ply => {
            let f = out.join("upsampled.ply");
            write_ply(&result, &f)?;
            f
        }
        Format::Xyz => {
            let f = out.join("upsampled.xyz");
            write_xyz(&result, &f)?;
            f
        }
    };
    write_manifest(
        out,
        "upsample",
        cfg,
        json!({
            "checkpoint": checkpoint,
            "input": input,
            "output": file,
            "rate": rate,
            "guidance_scale": sampler.guidance_scale,
            "steps": sampler.steps,
            "variant": sampler.variant.to_string(),
            "sampler_seed": sampler.seed,
            "points": result.len(),
        }),
    )?;
    eprintln!("wrote {} points to {}", result.len(), file.display());
    Ok(())
}

fn eval(cfg: &RunConfig, pred: &Path, reference: &Path, out: Option<&Path>) -> Result<()> {
    let p = read_cloud(pred)?;
    let q = read_cloud(reference)?;
    let report = evaluate(&p, &q, &cfg.rcd, cfg.metrics.fscore_threshold)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        fs::write(dir.join("report.json"), &text)?;
        write_manifest(dir, "eval", cfg, json!({ "pred": pred, "reference": reference }))?;
    }
    println!("{text}");
    Ok(())
}

fn inspect_schedule(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let csv = cfg.schedule()?.to_csv();
    match out {
        Some(dir) => {
            create_dir(dir)?;
            fs::write(dir.join("schedule.csv"), &csv)?;
            write_manifest(dir, "inspect-schedule", cfg, json!({}))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Some(Command::Upsample { guidance, steps, .. }) = &cli.command {
        if guidance.is_some() {
            cfg.sampler.guidance_scale = *guidance;
        }
        if let Some(s) = steps {
            cfg.sampler.steps = *s;
        }
    }
    if let Some(Command::Eval { threshold: Some(t), .. }) = &cli.command {
        cfg.metrics.fscore_threshold = *t;
    }
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    if cli.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    match cli.command {
        None => bail!("no command given; see --help"),
        Some(Command::Synth { out }) => synth(&cfg, &out),
        Some(Command::Train { dataset, out, resume }) => train_cmd(&cfg, &dataset, &out, resume),
        Some(Command::Upsample { checkpoint, input, out, rate, format, .. }) => {
            upsample(&cfg, &checkpoint, &input, &out, rate, format)
        }
        Some(Command::Eval { pred, reference, out, .. }) => eval(&cfg, &pred, &reference, out.as_deref()),
        Some(Command::InspectSchedule { out }) => inspect_schedule(&cfg, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
