//! Injects epsilon-greedy noise into a cloned policy-over-options and shows
//! how the score degrades along the noise schedule.

use splash::bc::{bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset};
use splash::options::NoiseSchedule;
use splash::sim::FieldConfig;
use splash::traj::{generate_rollouts, Source};

fn main() -> splash::Result<()> {
    let cfg = FieldConfig {
        max_time_s: 200.0,
        ..FieldConfig::rollout()
    };
    let demos = collect_demos(8, 0.9, &cfg, 1)?;
    let data = DemoDataset::from_trajectories(&demos)?;
    let (bc, _) = bc_fit(&data, BcTarget::Options, &BcConfig { hidden: 64, epochs: 5, ..BcConfig::default() })?;

    let schedule = NoiseSchedule::default();
    let rollouts = generate_rollouts(&bc, &schedule, 8, &cfg, 3)?;
    let mean = |keep: &dyn Fn(&splash::traj::Trajectory) -> bool| {
        let e: Vec<f64> = rollouts.iter().filter(|t| keep(t)).map(|t| t.meta.eta as f64).collect();
        e.iter().sum::<f64>() / e.len() as f64
    };
    for &eps in schedule.levels() {
        println!("epsilon {eps:.2}: mean eta {:+.2}", mean(&|t| t.meta.eps == Some(eps)));
    }
    println!("no-op     : mean eta {:+.2}", mean(&|t| t.meta.source == Source::Noop));
    Ok(())
}
