//! Plays one seeded game of scripted blue agents against the heuristic
//! opponent and prints the outcome and every capture.

use splash::game::{play_episode, Controller, EpisodeSpec};
use splash::sim::FieldConfig;
use splash::traj::Source;

fn main() -> splash::Result<()> {
    let cfg = FieldConfig::demo();
    let spec = EpisodeSpec {
        seed: 7,
        source: Source::Demo,
        epsilon: None,
        record_obs: false,
    };
    let t = play_episode(&cfg, &spec, &Controller::Scripted { skill: 1.0 }, &Controller::Heuristic)?;
    println!(
        "{} ticks ({:.0} s), blue {} - red {}, eta {}, psi {}",
        t.len(),
        t.len() as f64 / cfg.tick_hz,
        t.meta.blue_captures,
        t.meta.red_captures,
        t.meta.eta,
        t.meta.psi
    );
    for c in &t.meta.captures {
        println!("  capture by {:?} at tick {}", c.team, c.tick);
    }
    Ok(())
}
