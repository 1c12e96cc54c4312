//! Scores trajectories with a learned reward: extrapolation beyond the
//! training noise levels and the reward trace around captures.

use splash::bc::{bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset};
use splash::eval::{capture_progress, extrapolation_report, reward_trace};
use splash::options::NoiseSchedule;
use splash::reward::{build_pairs, fit_reward, TrainConfig};
use splash::sim::FieldConfig;
use splash::traj::{generate_level_rollouts, generate_rollouts};

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
    let fit = fit_reward::<f32>(&build_pairs(&rollouts, &tc, 3)?, &tc, 4)?;

    let extrap = generate_level_rollouts(&bc, &[0.0, 0.17, 0.33], 5, &cfg, 5)?;
    let demos: Vec<_> = demos.into_iter().map(|d| d.without_obs()).collect();
    let report = extrapolation_report(&fit.net, &rollouts, &demos, &extrap)?;
    print!("{}", report.table());
    println!("spearman {:.3}, pearson {:.3}", report.summary.spearman, report.summary.pearson);

    let held = generate_level_rollouts(&bc, &[0.0], 5, &cfg, 6)?;
    let traces = held.iter().map(|t| reward_trace(&fit.net, t)).collect::<splash::Result<Vec<_>>>()?;
    let p = capture_progress(&traces, 50);
    println!(
        "blue captures raising reward {}/{}, red captures lowering it {}/{}",
        p.blue_up, p.blue_total, p.red_down, p.red_total
    );
    Ok(())
}
