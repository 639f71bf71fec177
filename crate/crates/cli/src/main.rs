//! `pph`: command-line workflows over the planar-hull pseudo-labeling
//! engine. Every command is deterministic given its flags and seeds; batch
//! work parallelizes with `--jobs` without changing any output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Deserialize;

use pph_core::geometry::KeypointFile;
use pph_core::hull::{validate_hull, Registry};
use pph_core::metrics::{mean_l2_2d, mpjpe, stress};
use pph_core::pseudo2d::{generate_pseudo_targets, PseudoTargetConfig, DEFAULT_NOISE_STD};
use pph_core::raster::{build_planar_map, rasterize, Frame, MaskGrid};
use pph_core::simkit::{
    generate_dataset, run_recursion, synthetic_basis, OracleNoise, RecursionConfig,
};
use pph_core::uncertainty::{
    defaults, generate_semantic_pseudo_label, LogitsStack, SemanticLabelConfig,
};
use pph_core::visibility::with_estimated_visibility;
use pph_core::KeypointSet2D;

/// Exit code for CLI usage errors (unknown subcommand, EX_USAGE).
const EXIT_USAGE: i32 = 64;
/// Exit code for a hull that fails validation.
const EXIT_INVALID_HULL: i32 = 2;

#[derive(Parser)]
#[command(name = "pph", version, about = "Piecewise planar hull pseudo-labeling workflows")]
struct Cli {
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a category hull against a 3D template for interpenetrating
    /// planes (exit 0 when valid, 2 when not).
    ValidateHull {
        #[arg(long)]
        hull: PathBuf,
        /// 3D keypoint file with the category's canonical shape.
        #[arg(long)]
        template: PathBuf,
    },
    /// Render keypoints plus per-keypoint depths into a class-id mask.
    Rasterize {
        #[arg(long)]
        hull: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// JSON {"category", "depths", optional "visibility" per plane};
        /// without visibility flags occlusion is estimated.
        #[arg(long)]
        depths: PathBuf,
        /// Grid size as WxH, e.g. 64x64.
        #[arg(long)]
        size: String,
        /// Output mask (binary PGM, 255 = uncertain).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse a Monte-Carlo logits stack with keypoint estimates into a
    /// segmentation pseudo-label with an uncertain class.
    GenPseudoLabels {
        #[arg(long)]
        hull: PathBuf,
        /// Logits stack (.pphl).
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        /// 3D keypoint estimates (depth source).
        #[arg(long)]
        kp3d: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Welch-test significance threshold.
        #[arg(long, default_value_t = defaults::P_THRESHOLD)]
        p_threshold: f64,
    },
    /// Generate 2D keypoint pseudo-targets from a segmentation pseudo-label.
    GenPseudoTargets {
        #[arg(long)]
        hull: PathBuf,
        /// Pseudo-label mask (PGM).
        #[arg(long)]
        pseudo_label: PathBuf,
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        kp3d: PathBuf,
        /// Number of jittered candidate maps.
        #[arg(long, default_value_t = 8)]
        nq: usize,
        /// Candidate jitter std, in the keypoint file's units.
        #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
        sigma: f64,
        /// RNG seed (PPH_SEED overrides the default when unset).
        #[arg(long)]
        seed: Option<u64>,
        /// Output keypoint JSON; provenance lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the synthetic-oracle recursion loop and write a quality report.
    SimulateRecursion {
        #[arg(long)]
        config: PathBuf,
        /// Report path (CSV; a JSON twin is written alongside).
        #[arg(long)]
        out: PathBuf,
        /// Override the configured sample count.
        #[arg(long)]
        samples: Option<usize>,
        /// Override the configured recursion count.
        #[arg(long)]
        recursions: Option<usize>,
        /// Override the configured seed (PPH_SEED also applies when unset).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// MPJPE / Stress / 2D-L2 between two 3D keypoint files.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            if matches!(err.kind(), ErrorKind::InvalidSubcommand) {
                eprintln!("error: {err}");
                std::process::exit(EXIT_USAGE);
            }
            err.exit();
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(err) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: thread pool: {err}");
            std::process::exit(1);
        }
    }
    match run(cli.command) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::ValidateHull { hull, template } => cmd_validate_hull(&hull, &template),
        Command::Rasterize {
            hull,
            keypoints,
            depths,
            size,
            out,
        } => cmd_rasterize(&hull, &keypoints, &depths, &size, &out),
        Command::GenPseudoLabels {
            hull,
            logits,
            keypoints,
            kp3d,
            out,
            p_threshold,
        } => cmd_gen_pseudo_labels(&hull, &logits, &keypoints, &kp3d, &out, p_threshold),
        Command::GenPseudoTargets {
            hull,
            pseudo_label,
            keypoints,
            kp3d,
            nq,
            sigma,
            seed,
            out,
        } => cmd_gen_pseudo_targets(&hull, &pseudo_label, &keypoints, &kp3d, nq, sigma, seed, &out),
        Command::SimulateRecursion {
            config,
            out,
            samples,
            recursions,
            seed,
        } => cmd_simulate_recursion(&config, &out, samples, recursions, seed),
        Command::Metrics { pred, gt } => cmd_metrics(&pred, &gt),
    }
}

/// Flag beats PPH_SEED beats the built-in default.
fn resolve_seed(flag: Option<u64>, default: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PPH_SEED") {
        Ok(text) => text
            .trim()
            .parse()
            .with_context(|| format!("PPH_SEED is not a u64: `{text}`")),
        Err(_) => Ok(default),
    }
}

fn parse_size(size: &str) -> Result<(usize, usize)> {
    let (w, h) = size
        .split_once(['x', 'X'])
        .with_context(|| format!("size must be WxH, got `{size}`"))?;
    Ok((
        w.parse().with_context(|| format!("bad width `{w}`"))?,
        h.parse().with_context(|| format!("bad height `{h}`"))?,
    ))
}

/// Pixel-flagged files map 1:1 onto the grid; normalized files get the
/// default framing.
fn frame_for(file: &KeypointFile, width: usize, height: usize) -> Frame {
    if file.is_pixels() {
        Frame::pixels(width, height)
    } else {
        Frame::fit(width, height)
    }
}

fn cmd_validate_hull(hull: &Path, template: &Path) -> Result<i32> {
    let registry = Registry::load(hull).with_context(|| format!("loading {}", hull.display()))?;
    let tf =
        KeypointFile::load(template).with_context(|| format!("loading {}", template.display()))?;
    let category = registry.category(&tf.category)?;
    let report = validate_hull(category, &tf.to_3d()?)?;
    for idx in &report.degenerate_planes {
        println!(
            "warning: plane `{}` is degenerate (collinear vertices)",
            category.planes[*idx].name
        );
    }
    if report.is_valid() {
        println!(
            "hull `{}`: valid ({} planes)",
            tf.category,
            category.plane_count()
        );
        Ok(0)
    } else {
        for v in &report.violations {
            println!(
                "violation: planes `{}` and `{}` intersect beyond shared edges",
                v.name_a, v.name_b
            );
        }
        Ok(EXIT_INVALID_HULL)
    }
}

#[derive(Debug, Deserialize)]
struct DepthsFile {
    category: String,
    depths: Vec<f64>,
    #[serde(default)]
    visibility: Option<Vec<bool>>,
}

fn cmd_rasterize(
    hull: &Path,
    keypoints: &Path,
    depths: &Path,
    size: &str,
    out: &Path,
) -> Result<i32> {
    let registry = Registry::load(hull)?;
    let kf = KeypointFile::load(keypoints)?;
    let df: DepthsFile = serde_json::from_str(&std::fs::read_to_string(depths)?)
        .with_context(|| format!("parsing {}", depths.display()))?;
    if kf.category != df.category {
        bail!(
            "keypoints are for `{}` but depths for `{}`",
            kf.category,
            df.category
        );
    }
    let (width, height) = parse_size(size)?;
    let frame = frame_for(&kf, width, height);
    let y = kf.to_2d()?;
    let pixels = KeypointSet2D {
        coords: frame.viewport.map_all(&y.coords),
        visibility: y.visibility,
    };
    let category = registry.category(&kf.category)?;
    let map = match &df.visibility {
        Some(flags) => build_planar_map(&registry, &kf.category, &pixels, &df.depths, flags)?,
        None => {
            let all = vec![true; category.plane_count()];
            let map = build_planar_map(&registry, &kf.category, &pixels, &df.depths, &all)?;
            with_estimated_visibility(&map, width, height)
        }
    };
    let grid = rasterize(&map, width, height);
    grid.save_pgm(out)?;
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_gen_pseudo_labels(
    hull: &Path,
    logits: &Path,
    keypoints: &Path,
    kp3d: &Path,
    out: &Path,
    p_threshold: f64,
) -> Result<i32> {
    let registry = Registry::load(hull)?;
    let stack = LogitsStack::load(logits)?;
    let kf = KeypointFile::load(keypoints)?;
    let xf = KeypointFile::load(kp3d)?;
    if kf.category != xf.category {
        bail!("keypoint files disagree on category");
    }
    let frame = frame_for(&kf, stack.width(), stack.height());
    let cfg = SemanticLabelConfig {
        p_threshold,
        exempt_background: true,
        viewport: frame.viewport,
    };
    let (label, sign) = generate_semantic_pseudo_label(
        &stack,
        &xf.to_3d()?,
        &kf.to_2d()?,
        &registry,
        &kf.category,
        &cfg,
    )?;
    label.save_pgm(out)?;
    println!(
        "wrote {} (depth sign {:+}, uncertain {:.2}%)",
        out.display(),
        sign,
        100.0 * label.uncertain_fraction()
    );
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gen_pseudo_targets(
    hull: &Path,
    pseudo_label: &Path,
    keypoints: &Path,
    kp3d: &Path,
    nq: usize,
    sigma: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<i32> {
    let registry = Registry::load(hull)?;
    let label = MaskGrid::load_pgm(pseudo_label)?;
    let kf = KeypointFile::load(keypoints)?;
    let xf = KeypointFile::load(kp3d)?;
    if kf.category != xf.category {
        bail!("keypoint files disagree on category");
    }
    let frame = frame_for(&kf, label.width(), label.height());
    let cfg = PseudoTargetConfig {
        n_candidates: nq,
        noise_std: sigma,
        rng_seed: resolve_seed(seed, 0)?,
        isolate_planes: true,
    };
    let y = kf.to_2d()?;
    let result = generate_pseudo_targets(
        &y,
        &xf.to_3d()?,
        &label,
        &registry,
        &kf.category,
        &cfg,
        &frame,
        None,
    )?;
    let mut out_file = KeypointFile::from_2d(&kf.category, &result.targets);
    out_file.pixels = kf.pixels;
    out_file.image_size = kf.image_size;
    out_file.save(out)?;

    let sidecar = out.with_extension("provenance.json");
    let provenance = serde_json::json!({
        "sign": result.sign,
        "selections": result.selections,
    });
    std::fs::write(&sidecar, format!("{provenance:#}\n"))?;
    println!(
        "wrote {} and {} (depth sign {:+})",
        out.display(),
        sidecar.display(),
        result.sign
    );
    Ok(0)
}

/// On-disk simulation config; paths resolve relative to the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFileConfig {
    hull: PathBuf,
    templates: BTreeMap<String, PathBuf>,
    grid: GridSize,
    samples: usize,
    label_fraction: f64,
    recursions: usize,
    #[serde(default)]
    basis: BasisConfig,
    #[serde(default)]
    noise: OracleNoise,
    #[serde(default = "default_p_threshold")]
    p_threshold: f64,
    #[serde(default = "default_true")]
    exempt_background: bool,
    #[serde(default)]
    targets: TargetsConfig,
    #[serde(default = "default_seed")]
    seed: u64,
}

#[derive(Debug, Deserialize)]
struct GridSize {
    width: usize,
    height: usize,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct BasisConfig {
    deform_rows: usize,
    deform_scale: f64,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self {
            deform_rows: 3,
            deform_scale: 0.12,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct TargetsConfig {
    n_candidates: usize,
    noise_std: f64,
}

impl Default for TargetsConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8,
            noise_std: DEFAULT_NOISE_STD,
        }
    }
}

fn default_p_threshold() -> f64 {
    defaults::P_THRESHOLD
}

fn default_true() -> bool {
    true
}

fn default_seed() -> u64 {
    7
}

fn cmd_simulate_recursion(
    config: &Path,
    out: &Path,
    samples: Option<usize>,
    recursions: Option<usize>,
    seed: Option<u64>,
) -> Result<i32> {
    let text =
        std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let file: SimFileConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
    let base = config.parent().unwrap_or_else(|| Path::new("."));
    let registry = Registry::load(base.join(&file.hull))?;
    let mut templates = BTreeMap::new();
    for (category, path) in &file.templates {
        let tf = KeypointFile::load(base.join(path))?;
        if &tf.category != category {
            bail!(
                "template {} declares category `{}`, config says `{}`",
                path.display(),
                tf.category,
                category
            );
        }
        templates.insert(category.clone(), tf.to_3d()?);
    }
    let seed = resolve_seed(seed, file.seed)?;
    let frame = Frame::fit(file.grid.width, file.grid.height);
    let basis = synthetic_basis(
        &registry,
        &templates,
        file.basis.deform_rows,
        file.basis.deform_scale,
        seed ^ 0x5eed_ba5e,
    )?;
    let dataset = generate_dataset(
        &registry,
        samples.unwrap_or(file.samples),
        file.label_fraction,
        &basis,
        &frame,
        seed,
    )?;
    let cfg = RecursionConfig {
        n_recursions: recursions.unwrap_or(file.recursions),
        noise: file.noise,
        p_threshold: file.p_threshold,
        exempt_background: file.exempt_background,
        targets: PseudoTargetConfig {
            n_candidates: file.targets.n_candidates,
            noise_std: file.targets.noise_std,
            rng_seed: 0, // derived per sample inside the loop
            isolate_planes: true,
        },
        seed,
    };
    let report = run_recursion(&dataset, &registry, &frame, &cfg)?;

    let (csv_path, json_path) = if out.extension().is_some_and(|e| e == "json") {
        (out.with_extension("csv"), out.to_path_buf())
    } else {
        (out.to_path_buf(), out.with_extension("json"))
    };
    std::fs::write(&csv_path, report.to_csv())?;
    std::fs::write(&json_path, report.to_json())?;
    for row in &report.rows {
        println!(
            "recursion {}: 2d_err {:.6} mpjpe {:.6} miou {:.4} uncertain {:.4}",
            row.recursion, row.mean_2d_err, row.mpjpe, row.miou, row.uncertain_frac
        );
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(0)
}

fn cmd_metrics(pred: &Path, gt: &Path) -> Result<i32> {
    let pf = KeypointFile::load(pred)?;
    let gf = KeypointFile::load(gt)?;
    if pf.category != gf.category {
        bail!("pred is `{}` but gt is `{}`", pf.category, gf.category);
    }
    let p3 = pf.to_3d()?;
    let g3 = gf.to_3d()?;
    let p2 = KeypointSet2D::all_visible(p3.coords.iter().map(|p| [p[0], p[1]]).collect())?;
    let g2 = KeypointSet2D::all_visible(g3.coords.iter().map(|p| [p[0], p[1]]).collect())?;
    println!("metric   value");
    println!("mpjpe    {:.9}", mpjpe(&p3, &g3)?);
    println!("stress   {:.9}", stress(&p3, &g3)?);
    println!("l2_2d    {:.9}", mean_l2_2d(&p2, &g2)?);
    Ok(0)
}
