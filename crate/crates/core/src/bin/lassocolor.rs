use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lassocolor::checkpoint;
use lassocolor::colorspace::{lab_to_rgb, rgb_to_lab, split_gray, LabImage};
use lassocolor::datasets::{default_palette, make_color_collapse_grid, sample_point_pairs, toy_image, ImageFolder};
use lassocolor::gradcheck::{gradient_check, toy_case, GradCheckOptions, GradReport, ModelObjective};
use lassocolor::imageio::{read_image, write_png};
use lassocolor::interaction::{HintSet, HintSetJson};
use lassocolor::metrics::{sweep_predefined_lasso, EvalDataset, SweepOptions, DEFAULT_HPR_TAU};
use lassocolor::model::{Model, ModelConfig};
use lassocolor::pipeline::{colorize, DEFAULT_R};
use lassocolor::service::{self, DEFAULT_ADDR};
use lassocolor::training::{TrainConfig, Trainer};
use lassocolor::{Error, Result};

/// Interactive colorization with lasso-localized hints.
///
/// Exit codes: 0 success, 2 bad configuration or input, 3 i/o or unreadable
/// checkpoint, 4 numeric failure (including a failed gradient check).
#[derive(Parser)]
#[command(name = "lassocolor", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// PSNR@K, leakage and HPR sweep over a folder of images.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        hints: Vec<usize>,
        /// Build collapse grids and sample point pairs instead of uniform points.
        #[arg(long)]
        grid: bool,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        r: Vec<f32>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_HPR_TAU)]
        tau: f32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize one 2x2 color-collapse grid from a source image.
    MakeGrid {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        pairs: usize,
    },
    /// Colorize one image.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// HintSet JSON file; no hints when omitted.
        #[arg(long)]
        hints: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_R)]
        r: f32,
        /// Directory for one PGM token mask per hint.
        #[arg(long)]
        mask_debug: Option<PathBuf>,
    },
    /// Finite-difference check of the toy model's gradients.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 3)]
        hints: usize,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "LASSO_ADDR", default_value = DEFAULT_ADDR)]
        addr: SocketAddr,
        #[arg(long, env = "LASSO_CKPT", value_delimiter = ',')]
        ckpt: Vec<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DataConfig {
    Toy {
        #[serde(default = "default_shapes")]
        shapes: usize,
    },
    Folder {
        path: PathBuf,
    },
}

fn default_shapes() -> usize {
    4
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Toy { shapes: default_shapes() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
    data: DataConfig,
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    command: &'a str,
    config: &'a C,
    seed: u64,
    git_describe: String,
    outputs: Vec<PathBuf>,
    wall_time_s: f64,
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_manifest<C: Serialize>(dir: &Path, command: &str, config: &C, seed: u64, outputs: Vec<PathBuf>, start: Instant) -> Result<()> {
    let m = RunManifest {
        command,
        config,
        seed,
        git_describe: git_describe(),
        outputs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&m)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_lab_folder(dir: &Path, w: usize, h: usize) -> Result<Vec<LabImage>> {
    let mut folder = ImageFolder::open(dir, w, h)?;
    let images: Vec<LabImage> = folder.by_ref().map(|img| rgb_to_lab(&img)).collect();
    if images.is_empty() {
        return Err(Error::input("data", format!("no decodable images in {}", dir.display())));
    }
    Ok(images)
}

fn train(config: Option<PathBuf>, out: PathBuf, overrides: (Option<usize>, Option<u64>, Option<f32>, Option<usize>)) -> Result<()> {
    let start = Instant::now();
    let mut cfg: RunConfig = match &config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    let (steps, seed, lr, batch) = overrides;
    if let Some(v) = steps {
        cfg.train.steps = v;
    }
    if let Some(v) = seed {
        cfg.train.seed = v;
    }
    if let Some(v) = lr {
        cfg.train.lr = v;
    }
    if let Some(v) = batch {
        cfg.train.batch = v;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    create_dir(&out)?;

    let (w, h) = (cfg.model.width, cfg.model.height);
    let folder = match &cfg.data {
        DataConfig::Folder { path } => Some(load_lab_folder(path, w, h)?),
        DataConfig::Toy { .. } => None,
    };
    let shapes = match cfg.data {
        DataConfig::Toy { shapes } => shapes,
        DataConfig::Folder { .. } => 0,
    };
    let palette = default_palette();

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x1A17);
    let model = Model::init(cfg.model.clone(), &mut init_rng)?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let mut log_rows = String::from("step,loss\n");
    let total = cfg.train.steps;
    trainer.run(
        |rng| match &folder {
            Some(images) => images[rng.random_range(0..images.len())].clone(),
            None => toy_image(rng, w, h, shapes, &palette),
        },
        |step, loss| {
            log_rows.push_str(&format!("{step},{loss}\n"));
            if step % 100 == 0 || step + 1 == total {
                log::info!("step {step}/{total} loss {loss:.6}");
            }
        },
    )?;

    let ckpt = out.join("model.lcc");
    checkpoint::save(&trainer.model, &ckpt)?;
    let loss_csv = out.join("loss.csv");
    write_atomic(&loss_csv, log_rows.as_bytes())?;
    println!("checkpoint {} sha256 {}", ckpt.display(), checkpoint::file_digest(&ckpt)?);
    write_manifest(&out, "train", &cfg, cfg.train.seed, vec![ckpt, loss_csv], start)
}

#[derive(Serialize)]
struct EvalArgs<'a> {
    ckpt: &'a Path,
    data: &'a Path,
    hints: &'a [usize],
    grid: bool,
    r: &'a [f32],
    tau: f32,
}

#[allow(clippy::too_many_arguments)]
fn eval(ckpt: PathBuf, data: PathBuf, hints: Vec<usize>, grid: bool, r: Vec<f32>, seed: u64, tau: f32, out: Option<PathBuf>) -> Result<()> {
    let start = Instant::now();
    let model = checkpoint::load(&ckpt)?;
    let hash = checkpoint::file_digest(&ckpt)?;
    let cfg = model.config.clone();
    if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::config("--r values must be positive"));
    }
    let dataset = if grid {
        if cfg.width % 2 != 0 || cfg.height % 2 != 0 {
            return Err(Error::config("grid evaluation needs an even model size"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut folder = ImageFolder::open(&data, cfg.width / 2, cfg.height / 2)?;
        let grids: Vec<_> = folder.by_ref().map(|img| make_color_collapse_grid(&img, &mut rng)).collect();
        if grids.is_empty() {
            return Err(Error::input("data", format!("no decodable images in {}", data.display())));
        }
        EvalDataset::Grids(grids)
    } else {
        EvalDataset::Images(load_lab_folder(&data, cfg.width, cfg.height)?)
    };
    let opts = SweepOptions {
        r_values: r.clone(),
        hint_counts: hints.clone(),
        seed,
        tau,
        checkpoint_hash: Some(hash),
    };
    let report = sweep_predefined_lasso(&model, &dataset, &opts)?;
    for row in &report.rows {
        println!(
            "r={:<5} K={:<4} PSNR {:7.3} dB  leak in {:6.3} out {:6.3}  ({} images)",
            row.r, row.hints, row.psnr_db, row.leakage_inside, row.leakage_outside, row.images
        );
    }
    for row in &report.hpr {
        println!("r={:<5} HPR {:.4}", row.r, row.hpr);
    }
    match out {
        Some(dir) => {
            create_dir(&dir)?;
            let json = dir.join("report.json");
            let csv = dir.join("report.csv");
            write_atomic(&json, &serde_json::to_vec_pretty(&report)?)?;
            write_atomic(&csv, report.to_csv().as_bytes())?;
            let args = EvalArgs {
                ckpt: &ckpt,
                data: &data,
                hints: &hints,
                grid,
                r: &r,
                tau,
            };
            write_manifest(&dir, "eval", &args, seed, vec![json, csv], start)
        }
        None => {
            println!("{}", serde_json::to_string(&report)?);
            Ok(())
        }
    }
}

fn make_grid(src: PathBuf, out: PathBuf, seed: u64, pairs: usize) -> Result<()> {
    let img = read_image(&src)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = make_color_collapse_grid(&img, &mut rng);
    let points = sample_point_pairs(&grid, pairs, &mut rng);
    let mut hints = HintSet::new();
    for h in &points.hints {
        hints.push(*h, Some(grid.quadrant_lasso(grid.quadrant_of(h.y, h.x))));
    }
    create_dir(&out)?;
    write_png(out.join("grid.png"), &lab_to_rgb(&grid.image))?;
    write_png(out.join("gray.png"), &lab_to_rgb(&split_gray(&grid.image)))?;
    write_atomic(&out.join("shifts.json"), grid.shifts_json().as_bytes())?;
    write_atomic(&out.join("hints.json"), &serde_json::to_vec_pretty(&HintSetJson::from(&hints))?)?;
    println!("grid {}x{} written to {}", grid.image.width, grid.image.height, out.display());
    Ok(())
}

fn infer(ckpt: PathBuf, image: PathBuf, hints: Option<PathBuf>, out: PathBuf, r: f32, mask_debug: Option<PathBuf>) -> Result<()> {
    let model = checkpoint::load(&ckpt)?;
    let img = read_image(&image)?;
    let set = match hints {
        Some(path) => {
            let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let json: HintSetJson = serde_json::from_slice(&text).map_err(|e| Error::input("hints", e.to_string()))?;
            json.into_hint_set(img.width, img.height)?
        }
        None => HintSet::new(),
    };
    let result = colorize(&model, &img, &set, r)?;
    write_png(&out, &result.image)?;
    if let Some(dir) = mask_debug {
        create_dir(&dir)?;
        let (_, gw) = model.config.grid();
        for i in 0..=set.len() {
            let path = dir.join(format!("mask_{i:03}.pgm"));
            let mut f = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            result.mask.write_row_pgm(i, gw, &mut f).map_err(|e| Error::io(&path, e))?;
            f.flush().map_err(|e| Error::io(&path, e))?;
        }
    }
    println!("{} hints, wrote {}", set.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct GradcheckSummary {
    tol: f64,
    passed: bool,
    max_rel_err: f64,
    seeds: Vec<(u64, GradReport)>,
}

fn gradcheck(seeds: Vec<u64>, hints: usize, tol: f64, out: Option<PathBuf>) -> Result<()> {
    let mut reports = Vec::new();
    for seed in seeds {
        let (model, item) = toy_case(seed, hints)?;
        let obj = ModelObjective::new(&model, &item, TrainConfig::default().ab_scale)?;
        let report = gradient_check(&obj, model.params.tensors(), GradCheckOptions::default())?;
        println!(
            "seed {seed}: loss {:.6} max rel err {:.3e} over {} parameters",
            report.loss,
            report.max_rel_err,
            model.params.numel()
        );
        reports.push((seed, report));
    }
    let max = reports.iter().map(|r| r.1.max_rel_err).fold(0.0, f64::max);
    let summary = GradcheckSummary {
        tol,
        passed: max < tol,
        max_rel_err: max,
        seeds: reports,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    match out {
        Some(path) => write_atomic(&path, json.as_bytes())?,
        None => println!("{json}"),
    }
    if summary.passed {
        Ok(())
    } else {
        Err(Error::Numeric(format!("max relative error {max:.3e} >= {tol:e}")))
    }
}

fn serve(addr: SocketAddr, ckpt: Vec<PathBuf>) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(service::serve(addr, ckpt))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            steps,
            seed,
            lr,
            batch,
        } => train(config, out, (steps, seed, lr, batch)),
        Command::Eval {
            ckpt,
            data,
            hints,
            grid,
            r,
            seed,
            tau,
            out,
        } => eval(ckpt, data, hints, grid, r, seed, tau, out),
        Command::MakeGrid { src, out, seed, pairs } => make_grid(src, out, seed, pairs),
        Command::Infer {
            ckpt,
            image,
            hints,
            out,
            r,
            mask_debug,
        } => infer(ckpt, image, hints, out, r, mask_debug),
        Command::Gradcheck { seeds, hints, tol, out } => gradcheck(seeds, hints, tol, out),
        Command::Serve { addr, ckpt } => serve(addr, ckpt),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
