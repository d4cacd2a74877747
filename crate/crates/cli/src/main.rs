//! `dlgsa`: train, evaluate, and inspect dynamic local / global
//! self-attention super-resolution networks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numeric failure,
//! 3 I/O or malformed input file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlgsa::analysis::{count_macs_ceil, sensitivity_text};
use dlgsa::check::{run_gradcheck, MODULES};
use dlgsa::image::{read_ppm, write_ppm, ImageRGB8};
use dlgsa::train::{
    checkpoint_config, evaluate, frozen_benchmark, load_images, run_suite, Checkpoint, Dataset, Precision, Suite,
    TrainConfig, Trainer,
};
use dlgsa::{DlgsaNet, Error, ModelConfig, Scalar};

/// Gradient checks fail above this relative error.
const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "dlgsa", version, about = "Super-resolution with dynamic local and sparse global attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset (Y-channel PSNR / SSIM).
    Eval(EvalArgs),
    /// Super-resolve one PPM image.
    Sr(SrArgs),
    /// Parameter and MAC counts for a preset or config file.
    Count(CountArgs),
    /// Finite-difference gradient checks in 64-bit precision.
    Gradcheck(GradcheckArgs),
    /// Train the variants of an ablation suite on the frozen benchmark.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint written at the end (and at every --save-every).
    #[arg(long, default_value = "dlgsa.ckpt")]
    out: PathBuf,
    /// Continue from this checkpoint instead of starting fresh; --config is
    /// then only used to check that the two agree.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    save_every: usize,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A directory of PPM images (or `<dir>/HR`), or `synthetic(seed,count,size[,family])`.
    #[arg(long)]
    data: String,
    /// Evaluate global attention on tiles.
    #[arg(long)]
    tlc: bool,
    /// Tile side in LR pixels; defaults to the checkpoint's `tlc_window`.
    #[arg(long)]
    tlc_window: Option<usize>,
}

#[derive(Args)]
struct SrArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tlc: bool,
    #[arg(long)]
    tlc_window: Option<usize>,
}

#[derive(Args)]
struct CountArgs {
    /// `full`, `light`, `tiny`, or a config file.
    #[arg(long)]
    config: String,
    /// Overrides the scale of the preset or file (presets default to 4).
    #[arg(long)]
    scale: Option<usize>,
    /// Output resolution for MACs, `WxH`.
    #[arg(long, default_value = "1280x720")]
    res: String,
    #[arg(long)]
    csv: bool,
    /// Append totals over a grid of kernel size, gamma, and FFN ratio.
    #[arg(long)]
    sensitivity: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or one of mhdlsa, sparsegsa, hdtb, rhdtg, network.
    #[arg(long, default_value = "all")]
    module: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random parameter coordinates per block.
    #[arg(long, default_value_t = 12)]
    params: usize,
}

#[derive(Args)]
struct AblateArgs {
    /// hdtb, attention, or local.
    #[arg(long)]
    suite: Suite,
    /// Base configuration; the frozen benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the iteration budget.
    #[arg(long)]
    iters: Option<usize>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 1,
        Error::Numeric(_) | Error::Internal(_) => 2,
        Error::Io(_) | Error::Parse { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sr(a) => sr(a),
        Command::Count(a) => count(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dlgsa: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn read_config(path: &Path) -> dlgsa::Result<TrainConfig> {
    TrainConfig::parse(&std::fs::read_to_string(path)?)
}

fn train(a: TrainArgs) -> dlgsa::Result<()> {
    let cfg = read_config(&a.config)?;
    match cfg.precision {
        Precision::F32 => train_with::<f32>(cfg, &a),
        Precision::F64 => train_with::<f64>(cfg, &a),
    }
}

fn train_with<T: Scalar>(cfg: TrainConfig, a: &TrainArgs) -> dlgsa::Result<()> {
    let mut trainer = match &a.resume {
        Some(path) => {
            let t = Trainer::<T>::from_checkpoint(Checkpoint::load(path)?)?;
            if t.config != cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration than {}",
                    path.display(),
                    a.config.display()
                )));
            }
            t
        }
        None => Trainer::<T>::new(cfg)?,
    };
    println!(
        "training {} params on {} images for {} iterations (from {})",
        trainer.model.num_params(),
        trainer.images().len(),
        trainer.config.total_iters,
        trainer.iteration
    );
    while trainer.iteration < trainer.config.total_iters {
        let lr = trainer.learning_rate();
        let loss = trainer.step()?;
        let it = trainer.iteration;
        let done = it == trainer.config.total_iters;
        if a.log_every > 0 && (it % a.log_every == 0 || done) {
            println!("iter {it:>7}  loss {loss:.6}  lr {lr:.3e}");
        }
        let every = trainer.config.eval_interval;
        if every > 0 && (it % every == 0 || done) {
            let r = trainer.evaluate();
            println!("iter {it:>7}  train psnr {:.3} dB  ssim {:.4}", r.mean_psnr(), r.mean_ssim());
        }
        if a.save_every > 0 && it % a.save_every == 0 && !done {
            trainer.checkpoint().save(&a.out)?;
        }
    }
    trainer.checkpoint().save(&a.out)?;
    println!("saved {}", a.out.display());
    Ok(())
}

fn load_model<T: Scalar>(path: &Path) -> dlgsa::Result<(DlgsaNet<T>, TrainConfig)> {
    let ck = Checkpoint::<T>::load(path)?;
    let model = DlgsaNet::with_params(ck.config.model.clone(), ck.params)?;
    Ok((model, ck.config))
}

fn tlc_window(tlc: bool, window: Option<usize>, cfg: &TrainConfig) -> Option<usize> {
    tlc.then(|| window.unwrap_or(cfg.tlc_window))
}

fn eval(a: EvalArgs) -> dlgsa::Result<()> {
    let ds = if a.data.starts_with("synthetic(") || a.data.starts_with("directory(") {
        Dataset::parse(&a.data)?
    } else {
        Dataset::Directory(PathBuf::from(&a.data))
    };
    let images = load_images(&ds)?;
    let report = match checkpoint_config(&a.ckpt)?.precision {
        Precision::F32 => {
            let (m, cfg) = load_model::<f32>(&a.ckpt)?;
            evaluate(&m, &images, tlc_window(a.tlc, a.tlc_window, &cfg))
        }
        Precision::F64 => {
            let (m, cfg) = load_model::<f64>(&a.ckpt)?;
            evaluate(&m, &images, tlc_window(a.tlc, a.tlc_window, &cfg))
        }
    };
    print!("{}", report.to_text());
    if report.scores.is_empty() {
        return Err(Error::Usage("no image could be evaluated".into()));
    }
    Ok(())
}

fn sr(a: SrArgs) -> dlgsa::Result<()> {
    let img = read_ppm(&std::fs::read(&a.input)?)?;
    let out = match checkpoint_config(&a.ckpt)?.precision {
        Precision::F32 => upscale::<f32>(&a, &img)?,
        Precision::F64 => upscale::<f64>(&a, &img)?,
    };
    std::fs::write(&a.out, write_ppm(&out))?;
    println!("{}x{} -> {}x{}  {}", img.width(), img.height(), out.width(), out.height(), a.out.display());
    Ok(())
}

fn upscale<T: Scalar>(a: &SrArgs, img: &ImageRGB8) -> dlgsa::Result<ImageRGB8> {
    let (m, cfg) = load_model::<T>(&a.ckpt)?;
    let y = m.infer(&img.to_tensor::<T>(), tlc_window(a.tlc, a.tlc_window, &cfg))?;
    ImageRGB8::from_tensor(&y, 0)
}

fn parse_res(s: &str) -> dlgsa::Result<(usize, usize)> {
    let bad = || Error::Usage(format!("--res: expected WxH, got {s:?}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?))
}

fn count(a: CountArgs) -> dlgsa::Result<()> {
    let mut model = match a.config.as_str() {
        "full" | "light" | "tiny" => ModelConfig::by_name(&a.config, a.scale.unwrap_or(4))?,
        path => read_config(Path::new(path))?.model,
    };
    if let Some(s) = a.scale {
        model.scale = s;
    }
    model.validate()?;
    let (w, h) = parse_res(&a.res)?;
    let report = count_macs_ceil(&model, w, h)?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
    if a.sensitivity {
        print!("{}", sensitivity_text(&model, w, h)?);
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> dlgsa::Result<()> {
    if a.module != "all" && !MODULES.contains(&a.module.as_str()) {
        return Err(Error::Usage(format!(
            "unknown module {:?} (all, {})",
            a.module,
            MODULES.join(", ")
        )));
    }
    let reports = run_gradcheck(&a.module, a.seed, a.params)?;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.max_rel_error() < GRADCHECK_TOL;
        println!("{} {r}", if ok { "ok  " } else { "FAIL" });
        if !ok {
            failed.push(r.label.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check above {GRADCHECK_TOL:e} for {}",
            failed.join(", ")
        )))
    }
}

fn ablate(a: AblateArgs) -> dlgsa::Result<()> {
    let mut base = match &a.config {
        Some(p) => read_config(p)?,
        None => frozen_benchmark(),
    };
    if let Some(n) = a.iters {
        base.total_iters = n;
        base.validate()?;
    }
    let progress = |label: &str, it: usize, loss: f64, _: Option<f64>| {
        if it % 250 == 0 {
            println!("  {label:<16} iter {it:>6}  loss {loss:.5}");
        }
    };
    let results = match base.precision {
        Precision::F32 => run_suite::<f32>(a.suite, &base, progress)?,
        Precision::F64 => run_suite::<f64>(a.suite, &base, progress)?,
    };
    println!("suite {} ({} iterations)", a.suite, base.total_iters);
    for r in &results {
        println!("{r}");
    }
    if a.suite == Suite::Hdtb {
        let hybrid = results[0].train_psnr;
        let floor = results[1..].iter().map(|r| r.train_psnr).fold(f64::INFINITY, f64::min) - 0.5;
        let verdict = if hybrid >= floor { "holds" } else { "does not hold" };
        println!("hybrid {hybrid:.3} dB vs min(single) - 0.5 = {floor:.3} dB: ordering {verdict}");
    }
    Ok(())
}
