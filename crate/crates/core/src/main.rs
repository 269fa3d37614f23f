use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use evlight::checks::{grad_suite, voxel_suite, CheckOutcome};
use evlight::eventsim::{generate_events, interpolate_frames, voxelize, DEFAULT_INTERP_FACTOR};
use evlight::io;
use evlight::metrics::MetricReport;
use evlight::netcore::Model;
use evlight::numgrid::ParamTree;
use evlight::scenegen::{synth_pair, DarkeningMode};
use evlight::training::{
    loss_history_csv, stage1_samples, stage2_sample, stage2_samples, train_stage1_with, train_stage2_with, LossRecord,
    RandomConvFeatures, TrainConfig,
};
use evlight::{Error, Result};

#[derive(Parser)]
#[command(name = "evlight", version, about = "Event-guided low-light video enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render paired normal/low-light clips as PPM frames.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        clips: usize,
        #[arg(long, default_value_t = 5)]
        frames: usize,
        /// Frame size as HxW.
        #[arg(long, default_value = "64x64", value_parser = parse_res)]
        res: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Darken with the fixed evaluation preset instead of sampled parameters.
        #[arg(long)]
        test_preset: bool,
    },
    /// Difference a clip into an event stream, optionally also voxelized.
    SynthEvents {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        threshold: f64,
        #[arg(long, default_value_t = DEFAULT_INTERP_FACTOR)]
        interp_factor: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the voxel grid (f64 tensor) here.
        #[arg(long)]
        voxels: Option<PathBuf>,
        /// Temporal bins of the voxel grid; defaults to the clip length.
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Train the event restoration network.
    TrainStage1 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the enhancement network with the restoration network frozen.
    TrainStage2 {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        stage1: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance every frame of a low-light clip.
    Enhance {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Model config; defaults to the checkpoint's `.config` sidecar.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// PSNR/SSIM of predicted frames against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and voxelization self-checks.
    Check {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Grad,
    Voxel,
    All,
}

fn parse_res(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((h, w))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn load_config(path: Option<&Path>, stage: u8, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::parse(&io::read_text(p)?)?,
        None => TrainConfig::default(),
    };
    cfg.stage = stage;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn progress(total: usize) -> impl FnMut(&LossRecord) {
    let every = (total / 20).max(1);
    move |r: &LossRecord| {
        if r.iteration.is_multiple_of(every) || r.iteration + 1 == total {
            eprintln!(
                "iter {:>6}/{total}  loss {:.6}  ({:.6}, {:.6})",
                r.iteration + 1,
                r.terms.total,
                r.terms.first,
                r.terms.second
            );
        }
    }
}

fn save_training(out: &Path, params: &ParamTree<f32>, cfg: &TrainConfig, history: &[LossRecord]) -> Result<()> {
    io::write_checkpoint(out, params)?;
    io::write_text(with_suffix(out, ".config"), &cfg.to_text())?;
    io::write_text(with_suffix(out, ".loss.csv"), &loss_history_csv(cfg.stage, history))
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::GenData {
            out,
            clips,
            frames,
            res: (h, w),
            seed,
            test_preset,
        } => {
            let mode = if test_preset {
                DarkeningMode::TestPreset
            } else {
                DarkeningMode::Sampled
            };
            for i in 0..clips {
                let clip_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                let (spec, params, pair) = synth_pair(h, w, frames, clip_seed, mode)?;
                let meta = io::format_kv([
                    ("H", h.to_string()),
                    ("W", w.to_string()),
                    ("N", frames.to_string()),
                    ("seed", clip_seed.to_string()),
                    ("brightness", spec.brightness.to_string()),
                    ("mean_brightness", pair.gt.mean_brightness().to_string()),
                    ("gamma", params.gamma.to_string()),
                    ("alpha", params.alpha.to_string()),
                    ("beta", params.beta.to_string()),
                    ("sigma", params.sigma.to_string()),
                ]);
                io::write_pair(out.join(format!("clip_{i:03}")), &pair, &meta)?;
            }
            eprintln!("wrote {clips} clip pairs to {}", out.display());
            Ok(true)
        }
        Command::SynthEvents {
            clip,
            threshold,
            interp_factor,
            out,
            voxels,
            bins,
        } => {
            let clip = io::read_clip(&clip)?;
            let events = generate_events(&interpolate_frames(&clip, interp_factor)?, threshold)?;
            io::write_events(&out, &events)?;
            if let Some(vpath) = voxels {
                let ts = clip.timestamps();
                let grid = voxelize(
                    &events,
                    bins.unwrap_or(clip.len()),
                    clip.height(),
                    clip.width(),
                    ts[0],
                    ts[ts.len() - 1],
                )?;
                io::write_tensor(&vpath, &grid.values)?;
            }
            eprintln!("{} events", events.len());
            Ok(true)
        }
        Command::TrainStage1 {
            data,
            config,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), 1, seed)?;
            let samples = stage1_samples::<f32>(&io::read_dataset(&data)?, &cfg)?;
            let result = train_stage1_with(&samples, &cfg, &mut progress(cfg.iterations))?;
            save_training(&out, &result.params, &cfg, &result.history)?;
            Ok(true)
        }
        Command::TrainStage2 {
            data,
            stage1,
            config,
            out,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), 2, seed)?;
            let restoration: ParamTree<f32> = io::read_checkpoint(&stage1)?;
            let samples = stage2_samples::<f32>(&io::read_dataset(&data)?, &cfg)?;
            let result = train_stage2_with(
                &samples,
                Some(&restoration),
                &cfg,
                &RandomConvFeatures::default(),
                &mut progress(cfg.iterations),
            )?;
            save_training(&out, &result.params, &cfg, &result.history)?;
            Ok(true)
        }
        Command::Enhance {
            ckpt,
            clip,
            out,
            config,
        } => {
            let cfg_path = config.unwrap_or_else(|| with_suffix(&ckpt, ".config"));
            let cfg = TrainConfig::parse(&io::read_text(&cfg_path)?)?;
            let model = Model::new(&cfg.model)?;
            let params: ParamTree<f32> = io::read_checkpoint(&ckpt)?;
            model.check_restoration(&params.subtree("restore."))?;
            model.check_enhancement(&params.subtree("enhance."))?;
            let clip = io::read_clip(&clip)?;
            create_dir(&out)?;
            for t in 0..clip.len() {
                let sample = stage2_sample::<f32>(&clip, None, t, &cfg)?;
                let restored = model.restoration.restore(&params, &sample.events)?.restored;
                let frame = model.enhance(&params, &clip.frames()[t], &restored)?;
                io::write_ppm(out.join(io::frame_name(t)), &frame)?;
                let (h, w) = (frame.height(), frame.width());
                let mask = model.guidance_masks(&restored.reshape(&[1, cfg.model.voxel_channels(), h, w])?)?;
                let plane: Vec<f64> = mask.data().iter().map(|&v| v as f64).collect();
                io::write_pgm(out.join(format!("mask_{t:03}.pgm")), &plane, h, w)?;
            }
            eprintln!("enhanced {} frames into {}", clip.len(), out.display());
            Ok(true)
        }
        Command::Eval { pred, gt, out } => {
            let (p, g) = (io::read_clip(&pred)?, io::read_clip(&gt)?);
            if p.len() != g.len() {
                return Err(Error::Precondition(format!(
                    "{} predicted frames vs {} ground-truth frames",
                    p.len(),
                    g.len()
                )));
            }
            let mut report = MetricReport::default();
            for (i, (a, b)) in p.frames().iter().zip(g.frames()).enumerate() {
                report.push(io::frame_name(i), a, b)?;
            }
            io::write_text(&out, &report.to_csv())?;
            println!("PSNR {:.3} dB  SSIM {:.4}", report.mean_psnr(), report.mean_ssim());
            Ok(true)
        }
        Command::Check { suite, seed } => {
            let mut results: Vec<CheckOutcome> = Vec::new();
            if matches!(suite, Suite::Grad | Suite::All) {
                results.extend(grad_suite()?);
            }
            if matches!(suite, Suite::Voxel | Suite::All) {
                results.extend(voxel_suite(1000, seed)?);
            }
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} checks, {failed} failed", results.len());
            Ok(failed == 0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::Format(f) => f.code(),
                Error::Io { .. } => 3,
                _ => 1,
            };
            ExitCode::from(code as u8)
        }
    }
}
