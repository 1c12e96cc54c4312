//! Clones the scripted demonstrator at the options level and at the
//! low-level action level, then plays both clones against the heuristic.

use splash::bc::{bc_evaluate, bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset};
use splash::sim::FieldConfig;

fn main() -> splash::Result<()> {
    let cfg = FieldConfig {
        max_time_s: 240.0,
        ..FieldConfig::demo()
    };
    let demos = collect_demos(10, 0.9, &cfg, 1)?;
    let data = DemoDataset::from_trajectories(&demos)?;
    println!("{} demonstrations, {} labelled observations", demos.len(), data.len());
    let bc = BcConfig {
        hidden: 64,
        epochs: 5,
        ..BcConfig::default()
    };
    for target in [BcTarget::Options, BcTarget::Actions] {
        let (net, log) = bc_fit(&data, target, &bc)?;
        let last = log.last().expect("at least one epoch");
        let m = bc_evaluate(&net, 20, &cfg, 2)?;
        println!(
            "{target:?}: train accuracy {:.3}; vs heuristic {}W/{}L/{}D, mean eta {:.2}",
            last.train_acc,
            m.wins,
            m.losses,
            m.draws,
            m.mean_eta()
        );
    }
    Ok(())
}
