mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use warpseg_core::pnm::RgbImage;
use warpseg_dgw::overlay::{draw_control_points, warp_image};
use warpseg_dgw::{SamplingMode, WarpParams, WarpSpec};
use warpseg_train::data::{image_to_rgb, read_dataset, write_dataset};
use warpseg_train::run::{run, RunOptions, CHECKPOINT_DIR};
use warpseg_train::trainer::evaluate_models;
use warpseg_train::{checkpoint, generate_shapes, TrainError, Trainer};
use warpseg_verify::gradients::Target;

use crate::config::RunConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_NAN: u8 = 3;

/// Marks errors caused by the invocation rather than the run.
#[derive(Debug)]
struct UsageError;

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("usage")
    }
}

impl std::error::Error for UsageError {}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.overrides).map_err(|e| e.context(UsageError))
}

#[derive(Parser)]
#[command(
    name = "warpseg",
    version,
    about = "Warp-consistent dual-student segmentation on synthetic shapes"
)]
struct Cli {
    /// Worker threads; 1 gives bit-exact runs, 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.mode=ads`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset into `data_dir`.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace a non-empty data directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the configured mode, writing metrics and checkpoints to `out_dir`.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from `checkpoint` (or `out_dir/checkpoint`).
        #[arg(long)]
        resume: bool,
        /// Replace a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Score every model of a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Eval)]
        split: Split,
    },
    /// Warp an image and draw its control points.
    WarpDemo {
        /// Binary PPM input; a synthetic sample when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma_s: f64,
        #[arg(long, default_value_t = 0.2)]
        sigma_d: f64,
        #[arg(long, default_value = "grid-rs-rd")]
        sampling: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the gradient, warp, loss and metric oracles.
    Verify {
        /// Random configurations per gradient target.
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Corrupt this target's backward pass (negative control).
        #[arg(long)]
        fault: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Eval,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let nan = e
                .chain()
                .any(|c| c.downcast_ref::<TrainError>().is_some_and(TrainError::is_non_finite));
            let code = if nan {
                EXIT_NAN
            } else if e.is::<UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            };
            ExitCode::from(code)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { cfg, force } => gen_data(load_config(&cfg)?, force),
        Command::Train { cfg, resume, force } => train(load_config(&cfg)?, resume, force),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => eval(&checkpoint, &data, split),
        Command::WarpDemo {
            input,
            out,
            n,
            sigma_s,
            sigma_d,
            sampling,
            seed,
        } => {
            let mode: SamplingMode = sampling
                .parse()
                .map_err(|e| anyhow::Error::new(e).context(UsageError))?;
            let params = WarpParams {
                n,
                sigma_s,
                sigma_d,
                mode,
            };
            warp_demo(input.as_deref(), &out, params, seed)
        }
        Command::Verify { configs, seed, fault } => verify(configs, seed, fault.as_deref()),
    }
}

fn is_non_empty(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false)
}

fn prepare_dir(dir: &Path, force: bool, what: &str) -> Result<()> {
    if is_non_empty(dir) {
        if !force {
            bail!("{what} {} is not empty (use --force to replace it)", dir.display());
        }
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn gen_data(cfg: RunConfig, force: bool) -> Result<()> {
    print!("{}", cfg.to_toml());
    let spec = cfg.data.spec();
    prepare_dir(&cfg.data_dir, force, "data directory")?;
    let (train, eval) = spec.generate()?;
    write_dataset(&cfg.data_dir, &spec, &train, &eval)?;
    cfg.write_resolved(&cfg.data_dir)?;
    println!(
        "wrote {} train and {} eval samples to {}",
        train.samples.len(),
        eval.samples.len(),
        cfg.data_dir.display()
    );
    Ok(())
}

fn train(cfg: RunConfig, resume: bool, force: bool) -> Result<()> {
    let (_, train, eval) = read_dataset(&cfg.data_dir)
        .with_context(|| format!("loading dataset from {} (run gen-data first)", cfg.data_dir.display()))?;
    if !resume {
        prepare_dir(&cfg.out_dir, force, "output directory")?;
    }
    cfg.write_resolved(&cfg.out_dir)?;
    log::info!(
        "resolved configuration written to {}",
        cfg.out_dir.join(config::RESOLVED_CONFIG).display()
    );

    let mut trainer = Trainer::new(cfg.train.clone(), &train)?;
    if resume {
        let dir = cfg
            .checkpoint
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_DIR));
        checkpoint::load(&mut trainer, &dir).with_context(|| format!("resuming from {}", dir.display()))?;
        log::info!("resumed at iteration {}", trainer.iteration());
    }
    let opts = RunOptions {
        out_dir: cfg.out_dir.clone(),
        checkpoint_every: cfg.checkpoint_every,
        dump_images: cfg.dump_images,
    };
    let t0 = Instant::now();
    let summary = run(&mut trainer, &train, &eval, &opts)?;
    if let Some(report) = summary.final_eval() {
        print!("{}", report.render());
    }
    println!(
        "{} iterations of {} in {:.1}s, outputs in {}",
        trainer.iteration(),
        cfg.train.mode.name(),
        t0.elapsed().as_secs_f64(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn eval(checkpoint_dir: &Path, data: &Path, split: Split) -> Result<()> {
    let mut models = checkpoint::load_models(checkpoint_dir)
        .with_context(|| format!("loading checkpoint {}", checkpoint_dir.display()))?;
    let (_, train, eval) = read_dataset(data).with_context(|| format!("loading dataset {}", data.display()))?;
    let set = match split {
        Split::Train => &train,
        Split::Eval => &eval,
    };
    println!("checkpoint = {:?}\ndata = {:?}", checkpoint_dir, data);
    let mut refs: Vec<(String, &mut _)> = models.iter_mut().map(|(n, m)| (n.clone(), m)).collect();
    let report = evaluate_models(&mut refs, set, 0)?;
    print!("{}", report.render());
    Ok(())
}

fn warp_demo(input: Option<&Path>, out: &Path, params: WarpParams, seed: u64) -> Result<()> {
    let img = match input {
        Some(p) => RgbImage::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => image_to_rgb(&generate_shapes(seed, 1, 128, 128, 4)?.samples[0].image),
    };
    println!(
        "n = {}\nsigma_s = {}\nsigma_d = {}\nsampling = {:?}\nseed = {seed}",
        params.n,
        params.sigma_s,
        params.sigma_d,
        params.mode.name()
    );
    let spec = WarpSpec::sample(params, seed)?;
    std::fs::create_dir_all(out)?;
    let warped = warp_image(&img, &spec)?;
    img.save(&out.join("input.ppm"))?;
    warped.save(&out.join("warped.ppm"))?;
    draw_control_points(&img, &spec).save(&out.join("overlay.ppm"))?;
    println!(
        "{} control pairs, max displacement {:.2} px, written to {}",
        spec.points.len(),
        spec.grid(img.height, img.width).max_displacement(),
        out.display()
    );
    Ok(())
}

fn verify(configs: usize, seed: u64, fault: Option<&str>) -> Result<()> {
    let fault = match fault {
        Some(name) => match Target::from_name(name) {
            Some(t) => Some(t),
            None => {
                let names: Vec<&str> = Target::ALL.iter().map(|t| t.name()).collect();
                let e = anyhow::anyhow!("unknown target {name:?}; expected one of {}", names.join(", "));
                return Err(e.context(UsageError));
            }
        },
        None => None,
    };
    println!("configs = {configs}\nseed = {seed}");
    let t0 = Instant::now();
    let checks = warpseg_verify::run_oracles(configs, seed, fault);
    for c in &checks {
        println!("{c}");
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    println!(
        "{} checks, {} failed, {:.1}s",
        checks.len(),
        failed.len(),
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        bail!("failed: {}", failed.join(", "));
    }
    Ok(())
}
