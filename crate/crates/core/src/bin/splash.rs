use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splash::pipeline::{Pipeline, PipelineConfig};
use splash::reward::{Ablations, Mode};
use splash::service::{serve, ServeConfig};

#[derive(Parser)]
#[command(name = "splash", version, about = "Preference-based reward learning pipeline for capture-the-flag")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact root (takes precedence over SPLASH_DATA_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accept inputs produced under a different configuration.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Clone)]
struct Variant {
    #[arg(long, value_enum, default_value_t = ModeArg::Splash)]
    mode: ModeArg,
    /// Ablation: no_prune, no_if or no_dr (splash mode only).
    #[arg(long)]
    ablate: Option<String>,
}

#[derive(Args, Clone)]
struct StageArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    variant: Variant,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Splash,
    Drex,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect scripted options-level demonstrations.
    Demos(Common),
    /// Clone options-level and low-level policies from the demonstrations.
    BcTrain(Common),
    /// Noise-injected, extrapolation and held-out rollouts of the cloned policy.
    Rollout(Common),
    /// Build the preference pair dataset.
    Pairs(StageArgs),
    /// Train a reward model on a pair dataset.
    RewardTrain(StageArgs),
    /// Extrapolation report and reward traces for a trained reward model.
    Eval(StageArgs),
    /// Cloned policies against the heuristic opponent.
    Tournament(Common),
    /// Train and evaluate the full model and each ablation.
    Ablation(Common),
    /// Print the default configuration.
    Config,
    /// Serve live demonstration sessions over WebSocket.
    DemoServe {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        /// Stop after this many completed episodes.
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn pipeline(c: &Common) -> splash::Result<Pipeline> {
    let mut cfg = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let root = Pipeline::resolve_root(&cfg, c.out.as_deref());
    let mut p = Pipeline::new(cfg, root)?;
    p.force = c.force;
    Ok(p)
}

fn variant(v: &Variant) -> splash::Result<(Mode, Ablations)> {
    let ablations = match &v.ablate {
        Some(a) => Ablations::parse(a)?,
        None => Ablations::default(),
    };
    match v.mode {
        ModeArg::Splash => Ok((Mode::Splash, ablations)),
        ModeArg::Drex if ablations == Ablations::default() => Ok((Mode::Drex, ablations)),
        ModeArg::Drex => Err(splash::Error::Usage("--ablate applies to splash mode only".into())),
    }
}

fn run(cli: Cli) -> splash::Result<()> {
    match cli.cmd {
        Cmd::Demos(c) => {
            let p = pipeline(&c)?;
            let d = p.demos()?;
            let mean = d.iter().map(|t| t.meta.eta as f64).sum::<f64>() / d.len().max(1) as f64;
            println!("wrote {} demonstrations (mean eta {mean:.2}) to {}", d.len(), p.root.display());
        }
        Cmd::BcTrain(c) => {
            let (o, a) = pipeline(&c)?.bc_train()?;
            println!("training accuracy: options {o:.3}, actions {a:.3}");
        }
        Cmd::Rollout(c) => {
            let n = pipeline(&c)?.rollout()?;
            println!("wrote {n} training rollouts");
        }
        Cmd::Pairs(StageArgs { common: c, variant: v }) => {
            let (m, a) = variant(&v)?;
            let n = pipeline(&c)?.pairs(m, a)?;
            println!("wrote {n} pairs");
        }
        Cmd::RewardTrain(StageArgs { common: c, variant: v }) => {
            let (m, a) = variant(&v)?;
            for l in pipeline(&c)?.reward_train(m, a)? {
                println!(
                    "epoch {:>3}  loss {:.4}  train_acc {:.3}  val_acc {:.3}",
                    l.epoch, l.train_loss, l.train_acc, l.val_acc
                );
            }
        }
        Cmd::Eval(StageArgs { common: c, variant: v }) => {
            let (m, a) = variant(&v)?;
            let s = pipeline(&c)?.eval(m, a)?;
            println!("spearman {:.3}  pearson {:.3}", s.spearman, s.pearson);
            println!(
                "blue captures raising reward {}/{}, red captures lowering it {}/{}",
                s.progress.blue_up, s.progress.blue_total, s.progress.red_down, s.progress.red_total
            );
        }
        Cmd::Tournament(c) => {
            let (o, a) = pipeline(&c)?.tournament()?;
            println!("options-BC win rate {:.2} (mean eta {:.2})", o.win_rate(), o.mean_eta());
            println!("vanilla BC win rate {:.2} (mean eta {:.2})", a.win_rate(), a.mean_eta());
        }
        Cmd::Ablation(c) => {
            let rows = pipeline(&c)?.ablation()?;
            print!("{}", splash::eval::ablation_table(&rows));
        }
        Cmd::Config => print!("{}", PipelineConfig::default().to_toml()),
        Cmd::DemoServe { common, port, episodes } => {
            let p = pipeline(&common)?;
            let cfg = ServeConfig {
                field: p.cfg.demo_field(),
                default_option: p.cfg.demo_default_option,
                real_time_factor: p.cfg.real_time_factor,
                out_dir: p.root.join("human_demos"),
                seed: p.cfg.seed,
                max_episodes: episodes,
            };
            let listener = TcpListener::bind(("0.0.0.0", port))?;
            println!("serving demonstration sessions on ws://{}", listener.local_addr()?);
            for f in serve(listener, &cfg, Arc::new(AtomicBool::new(false)))? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
