//! Shows what each intra-option policy asks of a blue agent at kick-off:
//! the setpoint it steers toward and the low-level action it issues.

use splash::options::{primitive_setpoint, run_primitive, scripted_choice, OptionId};
use splash::sim::{reset, FieldConfig};

fn main() -> splash::Result<()> {
    let state = reset(&FieldConfig::rollout(), 3)?;
    let agent = 0;
    let a = &state.agents[agent];
    println!(
        "agent {agent} at ({:.1}, {:.1}) heading {:.0} deg",
        a.position.x, a.position.y, a.heading
    );
    for id in OptionId::ALL {
        let sp = primitive_setpoint(id, &state, agent);
        println!(
            "{:>8}: speed {:.2} m/s, heading {:>6.1} deg -> {:?}",
            id.name(),
            sp.speed,
            sp.heading,
            run_primitive(id, &state, agent)
        );
    }
    println!("scripted demonstrator picks {}", scripted_choice(&state, agent).name());
    Ok(())
}
