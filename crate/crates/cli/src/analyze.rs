//! `erf`, `bench` and `params`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echosr::analysis::{
    bench as time_forward, cofb_erf, compare_erf, model_erf, mrfe_branch_erfs, param_report, save_heatmap,
    AreaRatioTable, ErfMap, ErfOptions, THRESHOLDS,
};
use echosr::nn::{count_params, ModelParams};
use echosr::train::load_checkpoint;
use serde::Serialize;

use crate::config::CliConfig;
use crate::{print_json, usage_error, BenchArgs, Block, ErfArgs, ModelSource, ParamsArgs};

fn load_model(src: &ModelSource) -> Result<ModelParams> {
    if let Some(path) = &src.checkpoint {
        return Ok(load_checkpoint(path)?.params);
    }
    let cfg = CliConfig::load_or_default(src.config.as_deref())?
        .model_config(src.preset.as_deref(), src.scale.map(|s| s as usize))?;
    Ok(ModelParams::init(&cfg, src.init_seed)?)
}

/// `prefix` with `suffix` appended to its file name.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    prefix.with_file_name(name)
}

#[derive(Serialize)]
struct MapFile {
    label: String,
    png: PathBuf,
    json: PathBuf,
    area_ratio: AreaRatioTable,
}

fn write_map(prefix: &Path, label: &str, map: &ErfMap) -> Result<MapFile> {
    let stem = if label.is_empty() { String::new() } else { format!("_{label}") };
    let png = with_suffix(prefix, &format!("{stem}.png"));
    let json = with_suffix(prefix, &format!("{stem}.json"));
    let area_ratio = save_heatmap(map, &png, &json)?;
    Ok(MapFile {
        label: if label.is_empty() { "full".into() } else { label.into() },
        png,
        json,
        area_ratio,
    })
}

pub fn erf(args: ErfArgs, json: bool) -> Result<()> {
    if args.compare && args.block != Block::Cofb {
        usage_error("--compare needs --block cofb");
    }
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let params = load_model(&args.source)?;
    let opts = ErfOptions {
        samples: args.samples as usize,
        seed: args.erf_seed,
        channel: None,
    };
    let size = args.size as usize;
    let mut files = Vec::new();
    let mut comparison = None;
    match args.block {
        Block::Full => files.push(write_map(&args.out, "", &model_erf(&params, size, size, &opts)?)?),
        Block::Mrfe => {
            let maps = mrfe_branch_erfs(&params, args.group, size, size, &opts)?;
            for (i, map) in maps.iter().enumerate() {
                files.push(write_map(&args.out, &format!("branch{i}"), map)?);
            }
        }
        Block::Cofb => {
            let (before, after) = cofb_erf(&params, args.group, size, size, &opts)?;
            files.push(write_map(&args.out, "before", &before)?);
            files.push(write_map(&args.out, "after", &after)?);
            if args.compare {
                let table = compare_erf(&before, &after, &THRESHOLDS)?;
                let path = with_suffix(&args.out, "_compare.json");
                std::fs::write(&path, serde_json::to_string_pretty(&table)?)
                    .with_context(|| format!("writing {}", path.display()))?;
                comparison = Some(table);
            }
        }
    }

    if json {
        return print_json(&serde_json::json!({ "maps": files, "compare": comparison }));
    }
    for f in &files {
        println!("{}: {}", f.label, f.png.display());
    }
    if let Some(t) = comparison {
        println!("{:>9} {:>8} {:>8} {:>9}", "threshold", "before", "after", "change");
        for (i, th) in t.before.thresholds.iter().enumerate() {
            println!(
                "{:>9.2} {:>8.4} {:>8.4} {:>+8.1}%",
                th,
                t.before.ratios[i],
                t.after.ratios[i],
                100.0 * t.change[i]
            );
        }
    }
    Ok(())
}

pub fn bench(args: BenchArgs, json: bool) -> Result<()> {
    let params = load_model(&args.source)?;
    let n = args.size as usize;
    let report = time_forward(&params, n, n, args.repeats as usize)?;
    if json {
        return print_json(&report);
    }
    println!("input {n}x{n} at x{}, {} runs", params.config.scale, report.repeats);
    println!("mean {:.2} ms, p95 {:.2} ms", report.mean_ms, report.p95_ms);
    println!("retained activations {:.1} MiB", report.peak_bytes as f64 / (1 << 20) as f64);
    Ok(())
}

pub fn params(args: ParamsArgs, json: bool) -> Result<()> {
    let cfg = CliConfig::load_or_default(args.config.as_deref())?
        .model_config(args.preset.as_deref(), args.scale.map(|s| s as usize))?;
    let rows = param_report(&cfg)?;
    let total = count_params(&cfg);
    if json {
        return print_json(&serde_json::json!({
            "scale": cfg.scale,
            "channels": cfg.channels,
            "blocks": cfg.total_chbs(),
            "total": total,
            "modules": rows,
        }));
    }
    for r in &rows {
        println!("{:<8} {:>9} {:>6.1}%", r.module, r.params, 100.0 * r.share);
    }
    println!("{:<8} {:>9}", "total", total);
    Ok(())
}
