use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use litho_cli::{
    bench_csv, cmd_ablate, cmd_bench, cmd_eval, cmd_gen_dataset, cmd_predict, cmd_simulate, cmd_train, exit_code,
    Engine, PeKind, RunConfig, EXIT_CONFIG,
};
use litho_core::datagen::MaskStyle;
use litho_core::{LithoError, Result};

#[derive(Parser)]
#[command(name = "litho", version, about = "Neural-field lithography kernels")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seeds training, initialization and mask generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    engine: Option<Engine>,
    /// Positional encoding of the network input.
    #[arg(long, global = true, value_enum)]
    pe: Option<PeKind>,
    /// Kernel order.
    #[arg(long, global = true)]
    r: Option<usize>,
    /// Square kernel side.
    #[arg(long = "kernel-dim", global = true)]
    kernel_dim: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate masks and oracle aerial/resist images.
    GenDataset {
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, value_enum)]
        style: Option<Style>,
        #[arg(long)]
        density: Option<f64>,
    },
    /// Image one mask with the oracle.
    Simulate {
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Fit kernels to a dataset.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Image one mask with saved kernels.
    Predict {
        #[arg(long)]
        kernels: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Score saved kernels on a dataset's test split.
    Eval {
        #[arg(long)]
        kernels: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Throughput of saved kernels against the near-full-rank oracle.
    Bench {
        #[arg(long)]
        kernels: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        max_threads: Option<usize>,
    },
    /// Kernel-size and encoding sweeps.
    Ablate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Style {
    Via,
    Metal,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.threads, c.threads);
    if let Some(s) = c.seed {
        cfg.train.seed = s;
        cfg.network.init_seed = s;
        cfg.dataset.mask.seed = s;
    }
    set(&mut cfg.engine, c.engine);
    if let Some(pe) = c.pe {
        cfg.network.encoder = pe.spec(&cfg.network.encoder);
    }
    if let Some(r) = c.r {
        cfg.train.r = r;
        cfg.r = Some(r);
    }
    if let Some(d) = c.kernel_dim {
        cfg.train.kernel_dims = Some((d, d));
    }
    if c.out.is_some() {
        cfg.paths.out = c.out.clone();
    }
    let p = &mut cfg.paths;
    match &cli.command {
        Command::GenDataset { n_train, n_test, style, density } => {
            set(&mut cfg.dataset.n_train, *n_train);
            set(&mut cfg.dataset.n_test, *n_test);
            if let Some(s) = style {
                let style = match s {
                    Style::Via => MaskStyle::Via,
                    Style::Metal => MaskStyle::Metal,
                };
                let seed = cfg.dataset.mask.seed;
                cfg.dataset.mask = litho_core::datagen::MaskSpec::desk(style, seed);
            }
            set(&mut cfg.dataset.mask.density, *density);
        }
        Command::Simulate { mask } => set(&mut p.mask, mask.clone().map(Some)),
        Command::Train { manifest, epochs } | Command::Ablate { manifest, epochs } => {
            set(&mut p.manifest, manifest.clone().map(Some));
            set(&mut cfg.train.epochs, *epochs);
        }
        Command::Predict { kernels, mask } => {
            set(&mut p.kernels, kernels.clone().map(Some));
            set(&mut p.mask, mask.clone().map(Some));
        }
        Command::Eval { kernels, manifest } => {
            set(&mut p.kernels, kernels.clone().map(Some));
            set(&mut p.manifest, manifest.clone().map(Some));
        }
        Command::Bench { kernels, manifest, max_threads } => {
            set(&mut p.kernels, kernels.clone().map(Some));
            set(&mut p.manifest, manifest.clone().map(Some));
            set(&mut cfg.bench.max_threads, *max_threads);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match cli.command {
        Command::GenDataset { .. } => {
            let m = cmd_gen_dataset(cfg)?;
            println!("wrote {} records (oracle order {})", m.records.len(), m.kernel_order);
        }
        Command::Simulate { .. } => {
            let s = cmd_simulate(cfg)?;
            match s.kernel_order {
                Some(r) => println!("socs r={r}, peak {:.6}", s.aerial.max()),
                None => println!("abbe, peak {:.6}", s.aerial.max()),
            }
        }
        Command::Train { .. } => {
            let o = cmd_train(cfg)?;
            if let Some(last) = o.log.last() {
                println!(
                    "epoch {}: loss {:.3e}, val psnr {:.2} dB, {:.1} s",
                    last.epoch, last.mean_loss, last.val_psnr_db, last.wall_seconds
                );
            }
        }
        Command::Predict { .. } => {
            let p = cmd_predict(cfg)?;
            println!("{:.3} um^2/s", p.um2_per_second);
        }
        Command::Eval { .. } => {
            let r = cmd_eval(cfg)?;
            println!(
                "{} samples: psnr {:.2} dB, mse {:.3e}, me {:.3e}, miou {:.4}, mpa {:.4}",
                r.count, r.mean.psnr_db, r.mean.mse, r.mean.max_error, r.mean.miou, r.mean.mpa
            );
        }
        Command::Bench { .. } => print!("{}", bench_csv(&cmd_bench(cfg)?)?),
        Command::Ablate { .. } => {
            for r in cmd_ablate(cfg)? {
                println!("{} {}: {:.2} dB", r.sweep, r.setting, r.val_psnr_db);
            }
        }
    }
    Ok(())
}

fn fail(err: &LithoError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(err) as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let pool = match cfg.thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    match pool.install(|| run(&cli, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
