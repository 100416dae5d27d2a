//! `train`, `infer` and `eval`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use echosr::data::{bicubic_resize, list_pngs, load_png, resize_image, save_png, Dataset, ImageBuffer};
use echosr::metrics::{psnr_y, ssim_y};
use echosr::nn::{count_params, infer as super_resolve, ModelParams};
use echosr::train::{load_checkpoint, RunConfig, Trainer};
use echosr::ModelConfig;
use serde::{Serialize, Serializer};

use crate::config::CliConfig;
use crate::{print_json, EvalArgs, InferArgs, TrainArgs};

#[derive(Serialize)]
struct Plan<'a> {
    model: &'a ModelConfig,
    params: usize,
    data_dir: Option<&'a Path>,
    out_dir: &'a Path,
    resume: Option<&'a Path>,
    run: &'a RunConfig,
}

pub fn train(args: TrainArgs, json: bool) -> Result<()> {
    let mut cfg = CliConfig::load(&args.config)?;
    if let Some(f) = args.iter_scale {
        cfg.train.iter_scale = f;
    }
    if let Some(n) = args.iters {
        cfg.train.iters = n;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(d) = args.data_dir {
        cfg.train.data_dir = Some(d);
    }
    if let Some(d) = args.out_dir {
        cfg.train.out_dir = d;
    }
    let run = cfg.run_config()?;
    let ckpt = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let model = match &ckpt {
        Some(c) => c.params.config.clone(),
        None => cfg.model_config(args.preset.as_deref(), args.scale.map(|s| s as usize))?,
    };

    let plan = Plan {
        model: &model,
        params: count_params(&model),
        data_dir: cfg.train.data_dir.as_deref(),
        out_dir: &cfg.train.out_dir,
        resume: args.resume.as_deref(),
        run: &run,
    };
    if args.dry_run {
        return if json {
            print_json(&plan)
        } else {
            println!("model: {} params at x{}", plan.params, model.scale);
            println!("iterations: {}", run.iterations);
            println!("milestones: {:?}", run.schedule.milestones);
            println!("batch: {} x {}px", run.batch.batch_size, run.batch.patch);
            Ok(())
        };
    }

    let data_dir = cfg
        .train
        .data_dir
        .as_deref()
        .context("no training data: set train.data_dir or pass --data-dir")?;
    let dataset = Dataset::from_dir(data_dir, model.scale, run.batch.patch)?;
    log::info!(
        "{} training images, {} params, {} iterations",
        dataset.len(),
        plan.params,
        run.iterations
    );
    let mut trainer = match ckpt {
        Some(c) => {
            log::info!("resuming at step {}", c.step);
            Trainer::from_checkpoint(c, run)?
        }
        None => Trainer::new(ModelParams::init(&model, run.init_seed)?, run)?,
    };
    let summary = trainer.run(Arc::new(dataset), &cfg.train.out_dir)?;
    let report = serde_json::json!({
        "steps": summary.steps,
        "last_loss": summary.last.map(|l| l.total),
        "checkpoint": summary.checkpoint,
        "log": summary.log,
    });
    if json {
        print_json(&report)
    } else {
        println!("trained to step {}", summary.steps);
        println!("checkpoint: {}", summary.checkpoint.display());
        println!("log: {}", summary.log.display());
        Ok(())
    }
}

pub fn infer(args: InferArgs, json: bool) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?.params;
    let lr = load_png(&args.input)?;
    let sr = ImageBuffer::from_tensor(&super_resolve(&params, &lr.to_tensor())?, 0)?;
    save_png(&sr, &args.output)?;
    let report = serde_json::json!({
        "input": args.input,
        "output": args.output,
        "scale": params.config.scale,
        "width": sr.width(),
        "height": sr.height(),
    });
    if json {
        print_json(&report)
    } else {
        println!("{} ({}x{}) -> {} ({}x{})", args.input.display(), lr.width(), lr.height(), args.output.display(), sr.width(), sr.height());
        Ok(())
    }
}

/// PSNR with infinity written as the string `"inf"`, which JSON numbers cannot hold.
fn db<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Scores {
    #[serde(serialize_with = "db")]
    pub psnr: f64,
    pub ssim: f64,
    #[serde(serialize_with = "db")]
    pub bicubic_psnr: f64,
    pub bicubic_ssim: f64,
}

#[derive(Debug, Serialize)]
struct ImageScores {
    name: String,
    #[serde(flatten)]
    scores: Scores,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    scale: usize,
    crop_border: usize,
    images: Vec<ImageScores>,
    mean: Scores,
}

/// Cuts the right and bottom edges down to a multiple of `r`.
fn mod_crop(img: &ImageBuffer, r: usize) -> Result<ImageBuffer> {
    let (w, h) = (img.width() / r * r, img.height() / r * r);
    if w == 0 || h == 0 {
        bail!("{}x{} image is smaller than the scale {r}", img.width(), img.height());
    }
    let mut out = ImageBuffer::filled(w, h, [0; 3])?;
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, img.get(x, y));
        }
    }
    Ok(out)
}

fn quantize(t: &echosr::Tensor4<f32>) -> Result<echosr::Tensor4<f32>> {
    Ok(ImageBuffer::from_tensor(t, 0)?.to_tensor())
}

pub fn eval(args: EvalArgs, json: bool) -> Result<()> {
    let cfg = CliConfig::load_or_default(args.config.as_deref())?;
    let params = args.checkpoint.as_deref().map(load_checkpoint).transpose()?.map(|c| c.params);
    let scale = match &params {
        Some(p) => {
            if let Some(r) = cfg.eval.scale.filter(|&r| r != p.config.scale) {
                bail!("config asks for x{r} but the checkpoint is x{}", p.config.scale);
            }
            p.config.scale
        }
        None => args.scale.map(|s| s as usize).or(cfg.eval.scale).unwrap_or(2),
    };
    let crop = args.crop_border.or(cfg.eval.crop_border).unwrap_or(scale);
    let hr_dir: PathBuf = args
        .hr_dir
        .or(cfg.eval.hr_dir)
        .context("no HR directory: pass --hr-dir or set eval.hr_dir")?;
    let lr_dir = args.lr_dir.or(cfg.eval.lr_dir);

    let files = list_pngs(&hr_dir)?;
    if files.is_empty() {
        bail!("no PNG images in {}", hr_dir.display());
    }
    let mut images = Vec::with_capacity(files.len());
    for path in &files {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let hr_img = mod_crop(&load_png(path)?, scale)?;
        let (w, h) = (hr_img.width(), hr_img.height());
        let lr_img = match &lr_dir {
            Some(dir) => {
                let lr = load_png(dir.join(&name))?;
                if (lr.width() * scale, lr.height() * scale) != (w, h) {
                    bail!("{name}: LR {}x{} does not match HR {w}x{h} at x{scale}", lr.width(), lr.height());
                }
                lr
            }
            None => resize_image(&hr_img, w / scale, h / scale)?,
        };
        let hr = hr_img.to_tensor::<f32>();
        let lr = lr_img.to_tensor::<f32>();
        let bicubic = quantize(&bicubic_resize(&lr, h, w)?)?;
        let sr = match &params {
            Some(p) => quantize(&super_resolve(p, &lr)?)?,
            None => hr.clone(),
        };
        let scores = Scores {
            psnr: psnr_y(&sr, &hr, crop)?,
            ssim: ssim_y(&sr, &hr, crop)?,
            bicubic_psnr: psnr_y(&bicubic, &hr, crop)?,
            bicubic_ssim: ssim_y(&bicubic, &hr, crop)?,
        };
        log::debug!("{name}: {:.3} dB", scores.psnr);
        images.push(ImageScores { name, scores });
    }
    let n = images.len() as f64;
    let mean = |f: fn(&Scores) -> f64| images.iter().map(|i| f(&i.scores)).sum::<f64>() / n;
    let report = EvalReport {
        scale,
        crop_border: crop,
        mean: Scores {
            psnr: mean(|s| s.psnr),
            ssim: mean(|s| s.ssim),
            bicubic_psnr: mean(|s| s.bicubic_psnr),
            bicubic_ssim: mean(|s| s.bicubic_ssim),
        },
        images,
    };
    if json {
        return print_json(&report);
    }
    println!("{:<24} {:>9} {:>7} {:>12} {:>12}", "image", "PSNR", "SSIM", "bicubic PSNR", "bicubic SSIM");
    let row = |name: &str, s: &Scores| {
        println!(
            "{:<24} {:>9.3} {:>7.4} {:>12.3} {:>12.4}",
            name, s.psnr, s.ssim, s.bicubic_psnr, s.bicubic_ssim
        )
    };
    for i in &report.images {
        row(&i.name, &i.scores);
    }
    row("mean", &report.mean);
    Ok(())
}
