use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use bbs_core::eval::{evaluate_pairs, load_annotations, load_any, mode_config, EvalConfig, Method};
use bbs_core::experiments::{self, Experiment, RunParams};
use bbs_core::features::{save_feature_grid, write_atomic};
use bbs_core::matcher::{default_nms_radius, match_template};
use bbs_core::synth::clutter;
use bbs_core::{match_cached, match_naive, top_modes, Algorithm, MatcherConfig};
use clap::{Args, ValueEnum};
use serde_json::json;

use crate::error::{CliError, CliResult};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    ColorHsv,
    ColorRgb,
    FeatureGrid,
}

impl MeasureArg {
    fn mode(self) -> &'static str {
        match self {
            MeasureArg::ColorHsv => "color-hsv",
            MeasureArg::ColorRgb => "color-rgb",
            MeasureArg::FeatureGrid => "feature-grid",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Naive,
    Cached,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Template image (PPM) or feature grid (BFM).
    #[arg(long)]
    pub template: PathBuf,
    /// Image to search (PPM or BFM).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum, default_value = "color-hsv")]
    pub measure: MeasureArg,
    /// Patch side in pixels.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Pixel step between windows; defaults to the patch side.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Defaults to cached, or naive when windows are normalized.
    #[arg(long, value_enum)]
    pub algorithm: Option<AlgorithmArg>,
    /// Number of modes to report.
    #[arg(long, default_value_t = 3)]
    pub kmodes: usize,
    /// Suppression radius in pixels; defaults to half the template width.
    #[arg(long)]
    pub nms_rx: Option<usize>,
    /// Suppression radius in pixels; defaults to half the template height.
    #[arg(long)]
    pub nms_ry: Option<usize>,
    /// Output directory for likelihood.bfm, likelihood.pgm and matches.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub experiment: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trials, or Monte-Carlo samples for fig4 and ssd_sad.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Points per set.
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory; the table is written to `<experiment>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON Lines annotation file.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Comma-separated methods.
    #[arg(long, default_value = "bbs,ssd,sad,ncc,hm,bds")]
    pub methods: String,
    #[arg(long, default_value_t = 3)]
    pub kmodes: usize,
    #[arg(long, value_enum, default_value = "color-hsv")]
    pub measure: MeasureArg,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory for report.csv and summary.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated `IMAGExIMAGE/TEMPLATExTEMPLATE` sizes, width first.
    #[arg(long, default_value = "64x64/16x16,128x128/24x24")]
    pub sizes: String,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for bench.csv.
    #[arg(long)]
    pub out: PathBuf,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn to_json(value: &serde_json::Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    text.into_bytes()
}

pub fn cmd_match(args: &MatchArgs, threads: usize) -> CliResult<()> {
    let (mut cfg, space) = mode_config(args.measure.mode(), args.k, args.lambda)?;
    if let Some(s) = args.stride {
        cfg.stride = s;
    }
    cfg.algorithm = match args.algorithm {
        Some(AlgorithmArg::Naive) => Algorithm::Naive,
        Some(AlgorithmArg::Cached) => Algorithm::Cached,
        None if cfg.normalize_windows => Algorithm::Naive,
        None => Algorithm::Cached,
    };
    cfg.threads = threads;
    cfg.validate()?;
    if args.kmodes == 0 {
        return Err(CliError::Usage("--kmodes must be at least 1".into()));
    }
    let template = load_any(&args.template, space)?;
    let image = load_any(&args.image, space)?;
    let map = match_template(&template, &image, &cfg)?;
    let (drx, dry) = default_nms_radius(&map);
    let radius = (args.nms_rx.unwrap_or(drx), args.nms_ry.unwrap_or(dry));
    let modes = top_modes(&map, args.kmodes, radius);

    // everything is computed before the first file is written
    let report = json!({
        "template": args.template,
        "image": args.image,
        "measure": args.measure.mode(),
        "k": cfg.patch_size,
        "lambda": cfg.measure.lambda,
        "stride": cfg.stride,
        "kmodes": args.kmodes,
        "nms_radius": [radius.0, radius.1],
        "map": { "rows": map.rows, "cols": map.cols },
        "matches": modes,
    });
    let pgm = map.to_pgm()?;
    let grid = map.to_feature_grid()?;
    create_dir(&args.out)?;
    save_feature_grid(&grid, args.out.join("likelihood.bfm"))?;
    write_atomic(&args.out.join("likelihood.pgm"), &pgm)?;
    write_atomic(&args.out.join("matches.json"), &to_json(&report))?;
    if let Some(best) = modes.first() {
        let b = best.bbox;
        println!("best match: x={} y={} w={} h={} score={:.6}", b.x, b.y, b.w, b.h, best.score);
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, threads: usize) -> CliResult<()> {
    let exp = Experiment::from_str(&args.experiment)?;
    let mut params = RunParams::defaults(exp, args.seed);
    if let Some(t) = args.trials {
        params.trials = t;
    }
    if let Some(n) = args.n {
        params.n = n;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    let table = pool.install(|| experiments::run(exp, params))?;
    let csv = table.to_csv()?;
    create_dir(&args.out)?;
    let path = args.out.join(format!("{}.csv", exp.name()));
    write_atomic(&path, &csv)?;
    println!("wrote {} rows to {}", table.rows.len(), path.display());
    Ok(())
}

pub fn parse_methods(list: &str) -> CliResult<Vec<Method>> {
    let methods = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(Method::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() {
        return Err(CliError::Usage(format!(
            "--methods is empty; valid methods: {}",
            Method::NAMES.join(", ")
        )));
    }
    Ok(methods)
}

pub fn cmd_eval(args: &EvalArgs, threads: usize) -> CliResult<()> {
    let methods = parse_methods(&args.methods)?;
    let (mut matcher, color_space) = mode_config(args.measure.mode(), args.k, args.lambda)?;
    matcher.threads = threads;
    if args.kmodes == 0 {
        return Err(CliError::Usage("--kmodes must be at least 1".into()));
    }
    let cfg = EvalConfig {
        matcher,
        color_space,
        kmodes: args.kmodes,
        nms_radius: None,
    };
    let annotations = load_annotations(&args.annotations)?;
    let report = evaluate_pairs(&annotations, &methods, &cfg)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    let summary = to_json(&report.summary_json());
    create_dir(&args.out)?;
    write_atomic(&args.out.join("report.csv"), &csv)?;
    write_atomic(&args.out.join("summary.json"), &summary)?;
    println!("{:<6} {:>9} {:>12} {:>9}", "method", "mAP top1", "mAP best-of-k", "failures");
    for s in &report.summaries {
        println!("{:<6} {:>9.4} {:>12.4} {:>9}", s.method, s.map_top1, s.map_best_of_k, s.failures);
    }
    Ok(())
}

/// Image and template sizes of one benchmark row, `(width, height)` each.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct BenchSize {
    pub image: (usize, usize),
    pub template: (usize, usize),
}

fn parse_dims(s: &str) -> Option<(usize, usize)> {
    let (w, h) = s.split_once('x')?;
    Some((w.trim().parse().ok()?, h.trim().parse().ok()?))
}

pub fn parse_sizes(list: &str) -> CliResult<Vec<BenchSize>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let parsed = item.split_once('/').and_then(|(i, t)| Some((parse_dims(i)?, parse_dims(t)?)));
            match parsed {
                Some((image, template)) if image.0 >= template.0 && image.1 >= template.1 && template.0 > 0 && template.1 > 0 => {
                    Ok(BenchSize { image, template })
                }
                _ => Err(CliError::Usage(format!(
                    "bad size {item:?}; expected IMAGExIMAGE/TEMPLATExTEMPLATE with the template no larger than the image"
                ))),
            }
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn cmd_bench(args: &BenchArgs, threads: usize) -> CliResult<()> {
    let sizes = parse_sizes(&args.sizes)?;
    if sizes.is_empty() || args.repeats == 0 {
        return Err(CliError::Usage("--sizes and --repeats must be non-empty".into()));
    }
    let cfg = MatcherConfig::color(args.k).with_threads(threads);
    cfg.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(["image", "template", "k", "threads", "repeats", "naive_s", "cached_s", "speedup", "identical"])
        .map_err(csv_err)?;
    println!(
        "{:>9} {:>9} {:>3} {:>9} {:>9} {:>8} {:>9}",
        "image", "template", "k", "naive_s", "cached_s", "speedup", "identical"
    );
    for (i, size) in sizes.iter().enumerate() {
        let seed = args.seed.wrapping_add(2 * i as u64);
        let image = clutter(size.image.0, size.image.1, 4, 8, seed)?;
        let template = clutter(size.template.0, size.template.1, 4, 8, seed + 1)?;
        let (mut naive, mut cached) = (Vec::new(), Vec::new());
        let mut identical = true;
        // interleaved so both matchers see the same background load
        for _ in 0..args.repeats {
            let t = Instant::now();
            let a = match_naive(&template, &image, &cfg)?;
            naive.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let b = match_cached(&template, &image, &cfg)?;
            cached.push(t.elapsed().as_secs_f64());
            identical &= a.scores == b.scores;
        }
        let (n, c) = (median(naive), median(cached));
        let image_s = format!("{}x{}", size.image.0, size.image.1);
        let template_s = format!("{}x{}", size.template.0, size.template.1);
        let speedup = n / c;
        println!(
            "{image_s:>9} {template_s:>9} {:>3} {n:>9.4} {c:>9.4} {speedup:>7.2}x {identical:>9}",
            args.k
        );
        w.write_record([
            image_s,
            template_s,
            args.k.to_string(),
            threads.to_string(),
            args.repeats.to_string(),
            format!("{n:.6}"),
            format!("{c:.6}"),
            format!("{speedup:.3}"),
            identical.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    create_dir(&args.out)?;
    write_atomic(&args.out.join("bench.csv"), &bytes)?;
    Ok(())
}
