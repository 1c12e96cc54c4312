//! Trains a SPLASH reward model on noise-ranked rollouts and prints the
//! per-epoch loss breakdown and preference accuracies.

use splash::bc::{bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset};
use splash::options::NoiseSchedule;
use splash::reward::{build_pairs, fit_reward, TrainConfig};
use splash::sim::FieldConfig;
use splash::traj::generate_rollouts;

fn main() -> splash::Result<()> {
    let cfg = FieldConfig {
        max_time_s: 300.0,
        ..FieldConfig::rollout()
    };
    let demos = collect_demos(8, 0.9, &cfg, 1)?;
    let (bc, _) = bc_fit(
        &DemoDataset::from_trajectories(&demos)?,
        BcTarget::Options,
        &BcConfig { hidden: 64, epochs: 5, ..BcConfig::default() },
    )?;
    let rollouts = generate_rollouts(&bc, &NoiseSchedule::default(), 10, &cfg, 2)?;

    let tc = TrainConfig {
        hidden: 64,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let pairs = build_pairs(&rollouts, &tc, 3)?;
    let fit = fit_reward::<f32>(&pairs, &tc, 4)?;
    println!("{} training pairs, {} validation pairs", fit.n_train, fit.n_val);
    println!("epoch  total      pbirl    if       dr       train_acc val_acc");
    for l in &fit.log {
        println!(
            "{:>5}  {:>9.3} {:>8.3} {:>8.3} {:>8.3} {:>9.3} {:>7.3}",
            l.epoch, l.train_loss, l.pbirl, l.if_term, l.dr, l.train_acc, l.val_acc
        );
    }
    Ok(())
}
