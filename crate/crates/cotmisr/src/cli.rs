//! Command-line surface. `run` does the work so tests can drive it without
//! spawning a process.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use cotmisr_core::model::{Architecture, CotConfig, CotMisr, Group};
use cotmisr_core::scene::{BandSelection, SplitManifest};
use cotmisr_core::train::predict;

use crate::checkpoint;
use crate::dataset;
use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::fit::{self, prepare_scene, select, FitSummary};
use crate::png;
use crate::report::{self, band_means};
use crate::synth::{self, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "cotmisr", version, about = "Multi-image super-resolution with convolution + transformer blocks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// 8c4t, 4c4t4c and (2c1t)x4.
    Arch,
    /// LRCA with both attention parts, channel only, spatial only.
    Attention,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, history and validation report.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `[train] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the state left in the output directory.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Score a checkpoint and the bicubic baseline on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// NIR, RED or ALL.
        #[arg(long, default_value = "ALL")]
        band: String,
        /// Restrict to the validation scenes of a split manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Experiment file supplying clearance threshold and metric settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one scene directory into a 16-bit PNG.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scene_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.85)]
        min_clearance: f64,
    },
    /// Print parameter counts per group.
    Params {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every variant of an ablation grid and tabulate the results.
    Ablate {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset to use; a synthetic one is generated under `<out>/data` otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic dataset in the on-disk layout.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Experiment file whose `[synth]` section provides the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        hr_size: Option<usize>,
        #[arg(long)]
        upscale: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        shift: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        clouds: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

fn log_epoch(quiet: bool) -> impl FnMut(&fit::EpochRecord) {
    move |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  loss {:.6}  val cPSNR {:.4}  cSSIM {:.5}",
                r.epoch, r.train_loss, r.val_cpsnr, r.val_cssim
            );
        }
    }
}

pub fn cmd_train(config: &Path, seed: Option<u64>, out: Option<&Path>, resume: bool, quiet: bool) -> Result<FitSummary> {
    let mut exp = load_config(config)?;
    if let Some(s) = seed {
        exp.train.seed = s;
    }
    if let Some(o) = out {
        exp.out = Some(o.to_path_buf());
    }
    let out = exp.out.clone().ok_or_else(|| Error::Config("no output directory: pass --out or set [output] dir".into()))?;
    fit::fit(&exp, &out, resume, &mut log_epoch(quiet))
}

pub fn cmd_eval(
    checkpoint_path: &Path,
    data: &Path,
    band: &str,
    manifest: Option<&Path>,
    config: Option<&Path>,
    out: &mut dyn Write,
    out_path: Option<&Path>,
) -> Result<()> {
    let band: BandSelection = band.parse().map_err(|e: cotmisr_core::Error| Error::Config(e.to_string()))?;
    let exp = match config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let (model, params) = checkpoint::load_checkpoint(checkpoint_path)?;
    let cfg = model.config();
    let mut scenes = dataset::load_dataset(data, band)?
        .iter()
        .map(|s| prepare_scene(s, cfg.k, cfg.upscale, exp.data.min_clearance, true))
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = manifest {
        let text = std::fs::read_to_string(m).map_err(|e| Error::data(m, e.to_string()))?;
        let manifest = SplitManifest::parse(&text).map_err(|e| Error::data(m, e.to_string()))?;
        let wanted: Vec<String> = manifest.val.into_iter().filter(|id| scenes.iter().any(|s| s.scene_id() == id)).collect();
        scenes = select(&scenes, &wanted)?;
        if scenes.is_empty() {
            return Err(Error::data(m, format!("no validation scenes in band selection {band}")));
        }
    }
    let cot = report::score_model(&model, &params, &scenes, &exp.metrics)?;
    let bicubic = report::score_bicubic(&scenes, cfg.upscale, &exp.metrics)?;
    let sections = [(report::METHOD_COT, cot.as_slice()), (report::METHOD_BICUBIC, bicubic.as_slice())];
    match out_path {
        Some(p) => report::write_report(p, &sections),
        None => report::write_report_to(out, &sections),
    }
}

pub fn cmd_infer(checkpoint_path: &Path, scene_dir: &Path, out: &Path, min_clearance: f64) -> Result<()> {
    let (model, params) = checkpoint::load_checkpoint(checkpoint_path)?;
    let cfg = model.config();
    let scene = prepare_scene(&dataset::load_scene(scene_dir)?, cfg.k, cfg.upscale, min_clearance, false)?;
    let sr = predict(&model, &params, &scene)?;
    png::write_image(out, &sr)
}

pub fn cmd_params(config: &Path, out: &mut dyn Write) -> Result<()> {
    let exp = load_config(config)?;
    let model = CotMisr::new(exp.model.clone())?;
    let mut lines = vec![
        "scope,params".to_string(),
        format!("encoder,{}", model.count_params(Some(Group::Encoder))),
        format!("cot,{}", model.count_params(Some(Group::Cot))),
        format!("total,{}", model.count_params(None)),
    ];
    for (name, cfg) in attention_variants(&exp.model) {
        lines.push(format!("lrca:{name},{}", CotMisr::new(cfg)?.count_params(None)));
    }
    writeln!(out, "{}", lines.join("\n")).map_err(|e| Error::io("<stdout>", e))
}

/// `(name, config)` per ablation variant, derived from `base`.
pub fn arch_variants(base: &CotConfig) -> Vec<(String, CotConfig)> {
    ["8c4t", "4c4t4c", "(2c1t)x4"]
        .into_iter()
        .map(|a| {
            let arch = Architecture::parse(a).expect("built-in architecture");
            (a.to_string(), CotConfig { arch, ..base.clone() })
        })
        .collect()
}

pub fn attention_variants(base: &CotConfig) -> Vec<(String, CotConfig)> {
    [("ca+sa", true, true), ("ca", true, false), ("sa", false, true)]
        .into_iter()
        .map(|(name, ca, sa)| {
            let mut cfg = base.clone();
            cfg.lrca.use_ca = ca;
            cfg.lrca.use_sa = sa;
            (name.to_string(), cfg)
        })
        .collect()
}

fn dir_name(variant: &str) -> String {
    variant.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_HEADER: [&str; 9] =
    ["suite", "variant", "arch", "channel_attention", "spatial_attention", "params", "val_cpsnr", "val_cssim", "bicubic_cpsnr"];

pub fn cmd_ablate(suite: Suite, config: &Path, out: &Path, data: Option<&Path>, seed: Option<u64>, quiet: bool) -> Result<PathBuf> {
    let mut exp = load_config(config)?;
    if let Some(s) = seed {
        exp.train.seed = s;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let root = match data.map(Path::to_path_buf).or_else(|| exp.data_root().ok()) {
        Some(r) => r,
        None => {
            if exp.synth.upscale != exp.model.upscale {
                return Err(Error::Config(format!(
                    "[synth] upscale {} differs from [model] upscale {}",
                    exp.synth.upscale, exp.model.upscale
                )));
            }
            let root = out.join("data");
            if !root.exists() {
                synth::synthesize_dataset(&root, &exp.synth)?;
            }
            root
        }
    };
    exp.data.root = Some(root);
    let (suite_name, variants) = match suite {
        Suite::Arch => ("arch", arch_variants(&exp.model)),
        Suite::Attention => ("attention", attention_variants(&exp.model)),
    };
    let path = out.join(ABLATION_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Other(format!("{}: {e}", path.display())))?;
    w.write_record(ABLATION_HEADER)?;
    for (name, model_cfg) in variants {
        if !quiet {
            eprintln!("== {suite_name} variant {name}");
        }
        let params = CotMisr::new(model_cfg.clone())?.count_params(None);
        let variant_exp = ExperimentConfig { model: model_cfg.clone(), ..exp.clone() };
        let summary = fit::fit(&variant_exp, &out.join(dir_name(&name)), false, &mut log_epoch(quiet))?;
        let (val_cpsnr, val_cssim) = band_means(&summary.report_cot).last().map(|m| (m.1, m.2)).unwrap_or((f64::NAN, f64::NAN));
        let bicubic = band_means(&summary.report_bicubic).last().map(|m| m.1).unwrap_or(f64::NAN);
        w.write_record([
            suite_name.to_string(),
            name,
            model_cfg.arch.to_string(),
            model_cfg.lrca.use_ca.to_string(),
            model_cfg.lrca.use_sa.to_string(),
            params.to_string(),
            val_cpsnr.to_string(),
            val_cssim.to_string(),
            bicubic.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    out: &Path,
    config: Option<&Path>,
    scenes: Option<usize>,
    hr_size: Option<usize>,
    upscale: Option<usize>,
    frames: Option<usize>,
    shift: Option<usize>,
    noise: Option<f64>,
    clouds: Option<f64>,
    seed: Option<u64>,
) -> Result<usize> {
    let base = match config {
        Some(p) => load_config(p)?.synth,
        None => SynthConfig::default(),
    };
    let cfg = SynthConfig {
        n_scenes: scenes.unwrap_or(base.n_scenes),
        hr_size: hr_size.unwrap_or(base.hr_size),
        upscale: upscale.unwrap_or(base.upscale),
        frames: frames.unwrap_or(base.frames),
        shift_px: shift.unwrap_or(base.shift_px),
        noise_sigma: noise.unwrap_or(base.noise_sigma),
        cloud_prob: clouds.unwrap_or(base.cloud_prob),
        seed: seed.unwrap_or(base.seed),
    };
    Ok(synth::synthesize_dataset(out, &cfg)?.len())
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, resume, quiet } => {
            let s = cmd_train(&config, seed, out.as_deref(), resume, quiet)?;
            let last = s.history.last();
            writeln!(
                stdout,
                "trained {} epochs into {}; final val cPSNR {}",
                s.history.len(),
                s.out.display(),
                last.map_or(f64::NAN, |r| r.val_cpsnr)
            )
            .map_err(|e| Error::io("<stdout>", e))
        }
        Command::Eval { checkpoint, data, band, manifest, config, out } => {
            cmd_eval(&checkpoint, &data, &band, manifest.as_deref(), config.as_deref(), stdout, out.as_deref())
        }
        Command::Infer { checkpoint, scene_dir, out, min_clearance } => cmd_infer(&checkpoint, &scene_dir, &out, min_clearance),
        Command::Params { config } => cmd_params(&config, stdout),
        Command::Ablate { suite, config, out, data, seed } => {
            let p = cmd_ablate(suite, &config, &out, data.as_deref(), seed, false)?;
            writeln!(stdout, "{}", p.display()).map_err(|e| Error::io("<stdout>", e))
        }
        Command::Synth { out, config, scenes, hr_size, upscale, frames, shift, noise, clouds, seed } => {
            let n = cmd_synth(&out, config.as_deref(), scenes, hr_size, upscale, frames, shift, noise, clouds, seed)?;
            writeln!(stdout, "wrote {n} scenes to {}", out.display()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}
