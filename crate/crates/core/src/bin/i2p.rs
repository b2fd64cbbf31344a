use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use i2p::corpus::Split;
use i2p::harness::{self, Mode, RunConfig, SweepParam};
use i2p::par::{init_threads, Exec};
use i2p::I2pError;

#[derive(Parser)]
#[command(name = "i2p", version, about = "Layer selection and masked fine-tuning for synthetic image detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (JSON); missing fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// i2p, cli-only, cki-only, frozen-last or full-ft.
    #[arg(long)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the corpus and its manifest.
    GenCorpus(Common),
    /// Pretrain the backbone encoder.
    Pretrain(Common),
    /// Select the critical layer.
    Identify(Common),
    /// Compute weight importance and the update mask.
    Importance(Common),
    /// Fine-tune a detector.
    Finetune(Common),
    /// Evaluate the fine-tuned detector on both test splits.
    Eval(Common),
    /// Sweep the update rate or the number of aggregated layers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// eta or k.
        #[arg(long, default_value = "eta")]
        param: SweepParam,
    },
    /// Per-layer spectra, probes and attention.
    Diagnose(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenCorpus(c)
            | Command::Pretrain(c)
            | Command::Identify(c)
            | Command::Importance(c)
            | Command::Finetune(c)
            | Command::Eval(c)
            | Command::Diagnose(c) => c,
            Command::Sweep { common, .. } => common,
        }
    }
}

/// Failure with its exit code: 2 for usage and environment problems, 1 for
/// everything else.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 2, error }
}

fn domain(error: I2pError) -> Failure {
    let code = if error.is_usage() { 2 } else { 1 };
    Failure {
        code,
        error: error.into(),
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&c.config)
        .with_context(|| format!("cannot load config {}", c.config.display()))
        .map_err(usage)?;
    if let Some(seed) = c.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.paths.out = out.clone();
    }
    if let Some(mode) = c.mode {
        cfg.mode = mode;
    }
    cfg.validate().context("invalid configuration").map_err(usage)?;
    cfg.echo().map_err(domain)?;
    Ok(cfg)
}

fn threads_from_env() -> anyhow::Result<Option<usize>> {
    match std::env::var("I2P_THREADS") {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("I2P_THREADS={v} is not a count"))?;
            anyhow::ensure!(n > 0, "I2P_THREADS must be at least 1");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads(threads_from_env().map_err(usage)?);
    let exec = Exec::default();
    let cfg = load_config(cli.command.common())?;
    let show = |name: &str| -> Result<(), Failure> {
        let path = cfg.artifact(name);
        println!("wrote {} sha256={}", path.display(), harness::sha256_file(&path).map_err(domain)?);
        Ok(())
    };
    match &cli.command {
        Command::GenCorpus(_) => {
            let s = harness::gen_corpus(&cfg, exec).map_err(domain)?;
            for split in Split::ALL {
                let [real, fake] = s.counts[split.name()];
                println!("{:<10} real={real} fake={fake}", split.name());
            }
            println!(
                "wrote {} sha256={}",
                cfg.corpus_dir().join("manifest.json").display(),
                s.manifest_sha256
            );
        }
        Command::Pretrain(_) => {
            let every = (cfg.pretrain.steps / 20).max(1);
            harness::pretrain_backbone(&cfg, |s| {
                if s.step % every == 0 {
                    eprintln!(
                        "step {:>5} lr {:.2e} stats {:.4} layout {:.4} invariance {:.4}",
                        s.step, s.lr, s.stats_loss, s.layout_loss, s.invariance_loss
                    );
                }
            })
            .map_err(domain)?;
            let path = cfg.backbone_path();
            println!("wrote {} sha256={}", path.display(), harness::sha256_file(&path).map_err(domain)?);
        }
        Command::Identify(_) => {
            let r = harness::identify(&cfg, exec).map_err(domain)?;
            let pi: Vec<String> = r.pi.iter().map(|p| format!("{p:.4}")).collect();
            println!("pi = [{}]", pi.join(", "));
            println!("critical layer = {}", r.critical_index);
            show(harness::REPORT_FILE)?;
        }
        Command::Importance(_) => {
            let o = harness::importance(&cfg, exec).map_err(domain)?;
            println!(
                "mask: {} of {} weights trainable (eta = {})",
                o.mask.ones(),
                o.mask.total(),
                cfg.eta
            );
            for (id, d) in o.damping.iter().filter(|(_, d)| **d != cfg.damping) {
                println!("  {id}: damping raised to {d:e}");
            }
            show(harness::MASK_FILE)?;
            show(harness::IMPORTANCE_FILE)?;
        }
        Command::Finetune(_) => {
            let (_, log) = harness::finetune_stage(&cfg, exec).map_err(domain)?;
            for e in &log.epochs {
                println!("epoch {:>2} lr {:.3e} loss {:.5}", e.epoch, e.lr, e.loss);
            }
            show(harness::DETECTOR_FILE)?;
        }
        Command::Eval(_) => {
            let r = harness::eval_stage(&cfg, exec).map_err(domain)?;
            println!("test_in    acc {:.4} ap {:.4}", r.test_in.acc, r.test_in.ap);
            println!("test_shift acc {:.4} ap {:.4}", r.test_shift.acc, r.test_shift.ap);
            show(harness::METRICS_FILE)?;
        }
        Command::Sweep { param, .. } => {
            let rows = harness::sweep(&cfg, *param, exec).map_err(domain)?;
            for r in &rows {
                println!(
                    "{:<8} acc_in {:.4} ap_in {:.4} acc_shift {:.4} ap_shift {:.4}",
                    r.value, r.acc_in, r.ap_in, r.acc_shift, r.ap_shift
                );
            }
            show(param.file_name())?;
        }
        Command::Diagnose(_) => {
            let rep = harness::diagnose(&cfg, exec).map_err(domain)?;
            for r in &rep.rows {
                println!(
                    "layer {:>2} entropy {:.4} erank {:.3} probe {:.4} pi {:.4}",
                    r.layer, r.gram_entropy, r.effective_rank, r.probe_acc, r.mean_pi
                );
            }
            show(harness::LAYER_REPORT_FILE)?;
            show(harness::ATTENTION_FILE)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
