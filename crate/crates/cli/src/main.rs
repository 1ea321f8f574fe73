//! `srlab`: dataset synthesis, noise estimation, training, upscaling and evaluation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use srlab_core::data::{
    estimate_noise, list_pngs, make_lr, DataError, DegradationSpec, ImagePair, PairDataset,
};
use srlab_core::imaging::{load_image, save_image, ImageError, MetricOptions};
use srlab_core::models::{build_dnisr, build_dnsr, load_checkpoint, Model, ModelError, ModelKind, ModelSpec};
use srlab_core::train::{
    evaluate_dirs, read_val_list, train, train_adrsr, AdrsrSchedule, Ensemble, MetricsLog, MetricsRow, StageKind,
    TrainError, TrainOptions, TrainState, Upscaler,
};
use srlab_core::Tensor;

use config::RunConfig;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Config(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Spec(_) | ModelError::Donor(_) | ModelError::Level { .. } => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Schedule(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Image(i) => i.into(),
            TrainError::Tensor(_) => CliError::Data(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "srlab", version, about = "Desk-scale super-resolution experiments")]
struct Cli {
    /// Worker threads for all internal parallelism; 1 guarantees determinism.
    #[arg(long, global = true, env = "SRLAB_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade HR images into an `HR/` + `LRx{s}/` dataset.
    MakeDataset(MakeDatasetArgs),
    /// Estimate LR noise statistics over flat regions.
    EstimateNoise(EstimateNoiseArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Upscale one PNG.
    Upscale(UpscaleArgs),
    /// Score a model on aligned HR/LR directories.
    Eval(EvalArgs),
}

#[derive(Args)]
struct MakeDatasetArgs {
    #[arg(long)]
    hr: PathBuf,
    #[arg(long)]
    scale: usize,
    #[arg(long, default_value_t = 0.0)]
    blur_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateNoiseArgs {
    #[arg(long)]
    hr: PathBuf,
    #[arg(long)]
    lr: PathBuf,
    #[arg(long)]
    scale: usize,
    /// Per-channel variance below which an 8x8 window counts as flat.
    #[arg(long, default_value_t = 1.0)]
    flat_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    adrsr_schedule: Option<PathBuf>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct UpscaleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    self_ensemble: bool,
    /// Also average over channel permutations; implies --self-ensemble.
    #[arg(long)]
    rgb_shuffle: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Second model for a paired, sorted-delta report.
    #[arg(long)]
    model_b: Option<PathBuf>,
    #[arg(long)]
    hr: PathBuf,
    #[arg(long)]
    lr: PathBuf,
    #[arg(long)]
    val_list: Option<PathBuf>,
    /// Applies to --model only.
    #[arg(long)]
    self_ensemble: bool,
    /// Applies to --model only; implies --self-ensemble.
    #[arg(long)]
    rgb_shuffle: bool,
    /// Trim this many pixels from each side before scoring.
    #[arg(long, default_value_t = 0)]
    crop_border: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map(usize::from).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))?;
    match cli.command {
        Command::MakeDataset(a) => make_dataset(a),
        Command::EstimateNoise(a) => estimate(a),
        Command::Train(a) => train_cmd(a, threads),
        Command::Upscale(a) => upscale(a),
        Command::Eval(a) => eval(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn make_dataset(a: MakeDatasetArgs) -> Result<(), CliError> {
    let spec = DegradationSpec {
        scale: a.scale,
        blur_sigma: a.blur_sigma,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let files = list_pngs(&a.hr)?;
    if files.is_empty() {
        return Err(DataError::Empty(a.hr.clone()).into());
    }
    let mut images = Vec::with_capacity(files.len());
    for (stem, path) in files {
        images.push((stem, load_image(&path)?));
    }
    let data = PairDataset::synthesize(images, &spec)?;
    data.write(&a.out)?;
    write_file(
        &a.out.join("dataset.cfg"),
        format!(
            "[data]\nscale = {}\nblur_sigma = {}\nnoise_sigma = {}\nseed = {}\n",
            spec.scale, spec.blur_sigma, spec.noise_sigma, spec.seed
        ),
    )?;
    println!("wrote {} pairs to {}", data.len(), a.out.display());
    Ok(())
}

fn estimate(a: EstimateNoiseArgs) -> Result<(), CliError> {
    let data = PairDataset::load_dirs(&a.hr, &a.lr, a.scale)?;
    let report = estimate_noise(&data.pairs, a.scale, a.flat_threshold)?;
    write_file(&a.out, report.to_csv())?;
    println!(
        "pooled_std={} mean={} samples={} regions={}",
        report.pooled_std,
        report.mean,
        report.samples,
        report.region_stds.len()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model<f32>, CliError> {
    Ok(load_checkpoint::<f32>(path)?.model)
}

fn upscale(a: UpscaleArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let image = load_image(&a.input)?;
    let out = if a.self_ensemble || a.rgb_shuffle {
        Ensemble {
            inner: &model,
            rgb_shuffle: a.rgb_shuffle,
        }
        .upscale(&image)?
    } else {
        model.upscale(&image)?
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    save_image(&out, &a.out)?;
    println!(
        "{}x{} -> {}x{} written to {}",
        image.width(),
        image.height(),
        out.width(),
        out.height(),
        a.out.display()
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.model)?;
    let other = a.model_b.as_deref().map(load_model).transpose()?;
    let ensemble = Ensemble {
        inner: &model,
        rgb_shuffle: a.rgb_shuffle,
    };
    let primary: &dyn Upscaler = if a.self_ensemble || a.rgb_shuffle { &ensemble } else { &model };
    let names = a.val_list.as_deref().map(read_val_list).transpose()?;
    let report = evaluate_dirs(
        primary,
        other.as_ref().map(|m| m as &dyn Upscaler),
        &a.hr,
        &a.lr,
        names.as_deref(),
        MetricOptions {
            crop_border: a.crop_border,
        },
    )?;
    let csv = report.sorted_delta_csv().unwrap_or_else(|| report.to_csv());
    write_file(&a.out, csv)?;
    println!(
        "images={} psnr mean={:.4} std={:.4} min={:.4} max={:.4} ssim mean={:.4}",
        report.rows.len(),
        report.psnr.mean,
        report.psnr.std,
        report.psnr.min,
        report.psnr.max,
        report.ssim.mean
    );
    if let Some(d) = report.delta {
        let better = report.rows.iter().filter(|r| r.delta().is_some_and(|v| v > 0.0)).count();
        println!(
            "delta mean={:.4} min={:.4} max={:.4}; model better on {better}/{} images",
            d.mean,
            d.min,
            d.max,
            report.rows.len()
        );
    }
    Ok(())
}

// ---- train ----

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// LR-side pairs for denoiser training: the noisy LR against the noise-free
/// degradation of the same HR image.
fn denoiser_pairs(data: &PairDataset, blur_sigma: f64) -> Result<Vec<ImagePair>, CliError> {
    let spec = DegradationSpec {
        scale: data.scale,
        blur_sigma,
        noise_sigma: 0.0,
        seed: 0,
    };
    data.pairs
        .iter()
        .map(|p| {
            Ok(ImagePair {
                name: p.name.clone(),
                hr: make_lr(&p.hr, &spec)?,
                lr: p.lr.clone(),
            })
        })
        .collect()
}

/// Largest per-pixel gap between the composite and the donors run in
/// sequence, over the whole frame and beyond `margin` pixels of the border.
fn composition_gap(composite: &Model<f32>, den: &Model<f32>, sr: &Model<f32>) -> Result<(f64, f64, usize), CliError> {
    let spec = &sr.spec.sr;
    let k = spec.kernel / 2;
    let margin_lr = k * (2 * spec.n_blocks + 3) + composite.spec.bridge_kernel / 2 + 2;
    let side = 2 * margin_lr + 16;
    let margin = margin_lr * spec.scale;
    let (mut full, mut interior) = (0.0f64, 0.0f64);
    for seed in 0..4 {
        let x = srlab_core::data::synthetic_image(9000 + seed, side, side).to_tensor();
        let a = composite.predict(&x)?;
        let b = sr.predict(&den.predict(&x)?)?;
        let [_, _, h, w] = a.dims4().map_err(|e| CliError::Data(e.to_string()))?;
        let diff: Tensor<f32> = a.zip_map(&b, |p, q| (p - q).abs()).map_err(|e| CliError::Data(e.to_string()))?;
        for (i, &d) in diff.data().iter().enumerate() {
            let (y, x) = ((i / w) % h, i % w);
            let d = f64::from(d);
            full = full.max(d);
            if y >= margin && y < h - margin && x >= margin && x < w - margin {
                interior = interior.max(d);
            }
        }
    }
    Ok((full, interior, margin))
}

fn build_model(cfg: &mut RunConfig) -> Result<Model<f32>, CliError> {
    let seed = cfg.train.seed;
    match cfg.model.kind {
        ModelKind::Dnisr | ModelKind::Dnsr => match (&cfg.denoiser_ckpt, &cfg.sr_ckpt) {
            (Some(dp), Some(sp)) => {
                let den = load_model(dp)?;
                let sr = load_model(sp)?;
                if den.spec.mean_shift != cfg.model.mean_shift || sr.spec.mean_shift != cfg.model.mean_shift {
                    return Err(CliError::Config(
                        "donor checkpoints disagree with data.per_image_mean_shift".into(),
                    ));
                }
                let model = if cfg.model.kind == ModelKind::Dnisr {
                    build_dnisr(&den, &sr)?
                } else {
                    build_dnsr(&den, &sr, cfg.model.bridge_kernel)?
                };
                let (full, interior, margin) = composition_gap(&model, &den, &sr)?;
                let tol = 1e-4 * 255.0;
                println!(
                    "init-equivalence check ({}): max |composite - two-stage| = {full:.3e} over the full frame, {interior:.3e} beyond {margin}px of the border (tolerance {tol:.3e})",
                    cfg.model.kind
                );
                if interior > tol {
                    return Err(CliError::Numerical(format!(
                        "init-equivalence check failed: interior gap {interior:.3e} exceeds {tol:.3e}"
                    )));
                }
                println!("init-equivalence check passed");
                cfg.model = ModelSpec {
                    kind: cfg.model.kind,
                    bridge_kernel: cfg.model.bridge_kernel,
                    ..model.spec
                };
                Ok(model)
            }
            (None, None) => Ok(Model::new(cfg.model, seed)?),
            _ => Err(CliError::Config(
                "composite models need both model.denoiser_ckpt and model.sr_ckpt, or neither".into(),
            )),
        },
        ModelKind::Adrsr => {
            let mut model = Model::new(cfg.model, seed)?;
            if let Some(sp) = &cfg.sr_ckpt {
                let sr = load_model(sp)?;
                let n = model.copy_from(&sr, "", "level0.")?;
                println!("initialized level0 from {} ({n} tensors)", sp.display());
            }
            Ok(model)
        }
        _ => {
            if cfg.denoiser_ckpt.is_some() || cfg.sr_ckpt.is_some() {
                return Err(CliError::Config(format!(
                    "donor checkpoints apply to dnisr, dnsr and adrsr, not {}",
                    cfg.model.kind
                )));
            }
            Ok(Model::new(cfg.model, seed)?)
        }
    }
}

fn train_cmd(a: TrainArgs, threads: usize) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| CliError::Config(format!("{}: {e}", a.config.display())))?;
    let mut cfg = RunConfig::parse_text(&text)?;
    for o in &a.overrides {
        cfg.set_override(o)?;
    }
    cfg.finish()?;
    let schedule = match (&a.adrsr_schedule, cfg.model.kind) {
        (Some(p), ModelKind::Adrsr) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Some(AdrsrSchedule::parse(&text, cfg.model.levels)?)
        }
        (Some(_), kind) => return Err(CliError::Config(format!("--adrsr-schedule does not apply to {kind}"))),
        (None, ModelKind::Adrsr) => Some(AdrsrSchedule::standard(cfg.model.levels, cfg.train.steps, cfg.train.steps)),
        (None, _) => None,
    };

    let data_scale = cfg.model.sr.scale;
    let data = PairDataset::load(&a.data, data_scale)?;
    let mut pairs = if cfg.model.kind == ModelKind::Denoiser {
        denoiser_pairs(&data, cfg.blur_sigma)?
    } else {
        data.pairs
    };
    if cfg.val_count >= pairs.len() {
        return Err(CliError::Config(format!(
            "data.val_count {} leaves no training pairs out of {}",
            cfg.val_count,
            pairs.len()
        )));
    }
    let val = pairs.split_off(pairs.len() - cfg.val_count);

    let mut state = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint::<f32>(path)?;
            if ckpt.model.spec.kind != cfg.model.kind || ckpt.model.spec.scale() != cfg.model.scale() {
                return Err(CliError::Config(format!(
                    "checkpoint {} holds a x{} {} model, config asks for x{} {}",
                    path.display(),
                    ckpt.model.spec.scale(),
                    ckpt.model.spec.kind,
                    cfg.model.scale(),
                    cfg.model.kind
                )));
            }
            cfg.model = ckpt.model.spec;
            println!("resuming from {} at step {}", path.display(), ckpt.step);
            TrainState::from_checkpoint(ckpt, &cfg.train)
        }
        None => TrainState::new(build_model(&mut cfg)?, &cfg.train),
    };
    write_file(&with_suffix(&a.out, ".config"), cfg.to_text())?;
    if let Some(s) = &schedule {
        write_file(&with_suffix(&a.out, ".schedule"), s.to_text())?;
    }
    println!(
        "training {} (x{}, {} parameters) on {} pairs, {} held out",
        cfg.model.kind,
        cfg.model.scale(),
        state.model.param_count(),
        pairs.len(),
        val.len()
    );

    let out = a.out.clone();
    let mut save_hook = |s: &TrainState| s.save(&out).map_err(TrainError::from);
    let mut print_row = |r: &MetricsRow| {
        if let (Some(p), Some(s)) = (r.val_psnr, r.val_ssim) {
            println!("step {} loss {:.4} val_psnr {:.4} val_ssim {:.4} lr {}", r.step, r.loss, p, s, r.lr);
        }
    };
    let mut opts = TrainOptions {
        level: 0,
        workers: usize::from(threads > 1),
        on_checkpoint: Some(&mut save_hook),
        on_row: Some(&mut print_row),
    };
    let start_step = state.step;
    let log = match &schedule {
        Some(s) => {
            // skip whatever a resumed run already covered
            let mut remaining = Vec::new();
            let mut begin = 0;
            for stage in &s.stages {
                let end = begin + stage.steps;
                if state.step < end {
                    let mut st = stage.clone();
                    st.steps = end - state.step.max(begin);
                    if state.step > begin {
                        println!("resuming {} stage with {} steps left", stage.kind, st.steps);
                    }
                    remaining.push(st);
                }
                begin = end;
            }
            if remaining.last().map(|s| s.kind) != Some(StageKind::Joint) {
                remaining.push(srlab_core::train::Stage {
                    kind: StageKind::Joint,
                    steps: 0,
                    prefixes: Vec::new(),
                });
            }
            let rest = AdrsrSchedule { stages: remaining };
            let reports = train_adrsr(&mut state, &pairs, &val, &rest, &cfg.train, &cfg.patch, &mut opts)?;
            let mut log = MetricsLog::default();
            for r in reports {
                println!("finished {} stage ({} steps)", r.kind, r.log.rows.len());
                log.extend(r.log);
            }
            log
        }
        None => {
            let steps = cfg.train.steps.saturating_sub(state.step);
            train(&mut state, &pairs, &val, &cfg.train, &cfg.patch, steps, &mut opts)?
        }
    };
    drop(opts);
    state.save(&a.out)?;

    let metrics = with_suffix(&a.out, ".metrics.csv");
    if a.resume.is_some() && metrics.exists() {
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&metrics)
            .map_err(|e| io_err(&metrics, e))?;
        f.write_all(log.rows_csv().as_bytes()).map_err(|e| io_err(&metrics, e))?;
    } else {
        write_file(&metrics, log.to_csv())?;
    }
    println!(
        "trained steps {}..{}; checkpoint {}, metrics {}",
        start_step,
        state.step,
        a.out.display(),
        metrics.display()
    );
    if let Some((p, s)) = log.last_validation() {
        println!("final val_psnr {p:.4} val_ssim {s:.4}");
    }
    Ok(())
}
