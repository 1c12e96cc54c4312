//! Runs every pipeline stage at toy scale in a temporary data directory,
//! the same sequence the `splash` subcommands perform one at a time.

use splash::pipeline::{Pipeline, PipelineConfig};
use splash::reward::{Ablations, Mode};

fn main() -> splash::Result<()> {
    let cfg = PipelineConfig {
        seed: 5,
        max_time_s: 120.0,
        demo_max_time_s: 120.0,
        n_demos: 6,
        bc_hidden: 32,
        bc_epochs: 3,
        rollouts_per_level: 4,
        extrap_per_level: 3,
        heldout_games: 3,
        tournament_games: 10,
        hidden: 32,
        epochs: 3,
        lr: 1e-4,
        downsample_rate: 10,
        snippet_len: 10,
        drex_pairs: 500,
        ..PipelineConfig::default()
    };
    let root = std::env::temp_dir().join(format!("splash-pipeline-{}", std::process::id()));
    let p = Pipeline::new(cfg, root.clone())?;

    p.demos()?;
    let (opt_acc, act_acc) = p.bc_train()?;
    println!("cloned policies: options accuracy {opt_acc:.3}, actions accuracy {act_acc:.3}");
    let (o, a) = p.tournament()?;
    println!("win rate options-BC {:.2}, vanilla BC {:.2}", o.win_rate(), a.win_rate());
    p.rollout()?;
    for mode in [Mode::Splash, Mode::Drex] {
        let n = p.pairs(mode, Ablations::default())?;
        p.reward_train(mode, Ablations::default())?;
        let s = p.eval(mode, Ablations::default())?;
        println!("{:>6}: {n} pairs, spearman {:.3}", s.variant, s.spearman);
    }
    println!("manifest:");
    for (path, e) in p.manifest()?.artifacts {
        println!("  {path:<32} {} {}", e.producer, &e.sha256[..12]);
    }
    std::fs::remove_dir_all(root)?;
    Ok(())
}
