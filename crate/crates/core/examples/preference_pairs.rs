//! Builds SPLASH full-trajectory pairs (with and without score/success
//! pruning) and D-REX snippet pairs from the same noisy rollouts, and round
//! trips the pair file.

use splash::bc::{bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset};
use splash::options::NoiseSchedule;
use splash::pairs::{
    build_pairs_drex, build_pairs_splash, read_pairs, unpruned_pair_count, write_pairs, SplashPairConfig,
};
use splash::sim::FieldConfig;
use splash::traj::generate_rollouts;

fn main() -> splash::Result<()> {
    let cfg = FieldConfig {
        max_time_s: 200.0,
        ..FieldConfig::rollout()
    };
    let demos = collect_demos(6, 0.9, &cfg, 1)?;
    let (bc, _) = bc_fit(
        &DemoDataset::from_trajectories(&demos)?,
        BcTarget::Options,
        &BcConfig { hidden: 32, epochs: 3, ..BcConfig::default() },
    )?;
    let rollouts = generate_rollouts(&bc, &NoiseSchedule::default(), 6, &cfg, 2)?;

    let pruned = build_pairs_splash(&rollouts, &SplashPairConfig::default())?;
    let unpruned = build_pairs_splash(&rollouts, &SplashPairConfig { prune: false, ..SplashPairConfig::default() })?;
    println!(
        "SPLASH: {} candidate pairs ({} by formula), {} survive pruning",
        unpruned.len(),
        unpruned_pair_count(&rollouts, Some(2))?,
        pruned.len()
    );
    let drex = build_pairs_drex(&rollouts, 500, 10, 40, 3)?;
    println!("D-REX: {} snippet pairs of 10 states", drex.len());

    let dir = tempfile_dir();
    let path = dir.join("pairs.jsonl");
    write_pairs(&path, &pruned)?;
    let back = read_pairs(&path, &rollouts, 40)?;
    // Trajectory slots may be renumbered; compare pairs by member id.
    let key = |d: &splash::pairs::PairDataset| -> Vec<_> {
        d.pairs
            .iter()
            .map(|p| (d.traj(&p.worse).meta.id, d.traj(&p.better).meta.id, p.worse.start, p.better.start, p.worse.len))
            .collect()
    };
    println!("pair file round trip preserves every pair: {}", key(&back) == key(&pruned));
    std::fs::remove_dir_all(dir)?;
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("splash-pairs-{}", std::process::id()));
    std::fs::create_dir_all(&d).expect("temp dir");
    d
}
