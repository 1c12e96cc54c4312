//! Headless episode runner shared by demonstration collection, rollouts,
//! tournaments and evaluation games.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::neuro::DenseNet;
use crate::options::{
    epsilon_greedy_low_level, heuristic_opponent, noisy_policy_over_options, run_primitive, scripted_demonstrator,
    OptionId,
};
use crate::sim::{global_state_vector, observe, reset, FieldConfig, GameState, LowAction, Team};
use crate::traj::{Source, TrajMeta, Trajectory};

/// Who drives a team.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    /// Potential-field opponent.
    Heuristic,
    /// Every agent always idles.
    Idle,
    /// Scripted demonstrator with the given skill.
    Scripted { skill: f64 },
    /// Cloned policy-over-options with noise injection.
    Options { net: &'a DenseNet, epsilon: f64 },
    /// Cloned low-level policy with epsilon-greedy noise.
    Actions { net: &'a DenseNet, epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: LowAction,
    pub option: Option<OptionId>,
}

impl Decision {
    pub fn from_option(option: OptionId, state: &GameState, agent: usize) -> Self {
        Self {
            action: run_primitive(option, state, agent),
            option: Some(option),
        }
    }
}

impl Controller<'_> {
    pub fn decide(&self, state: &GameState, agent: usize, rng: &mut ChaCha8Rng) -> Decision {
        match *self {
            Controller::Heuristic => Decision {
                action: heuristic_opponent(state, agent),
                option: None,
            },
            Controller::Idle => Decision {
                action: LowAction::NoOp,
                option: Some(OptionId::NoOp),
            },
            Controller::Scripted { skill } => {
                Decision::from_option(scripted_demonstrator(state, agent, skill, rng), state, agent)
            }
            Controller::Options { net, epsilon } => {
                let obs = observe(state, agent);
                Decision::from_option(noisy_policy_over_options(net, &obs, epsilon, rng), state, agent)
            }
            Controller::Actions { net, epsilon } => {
                let obs = observe(state, agent);
                let a = epsilon_greedy_low_level(net, &obs, epsilon, rng);
                // The policy acts in the team-canonical frame.
                let action = match state.agents[agent].team {
                    Team::Blue => a,
                    Team::Red => a.mirrored(),
                };
                Decision { action, option: None }
            }
        }
    }
}

/// Per-episode settings.
#[derive(Clone, Debug)]
pub struct EpisodeSpec {
    pub seed: u64,
    pub source: Source,
    pub epsilon: Option<f64>,
    /// Record every agent's observation vector at every tick.
    pub record_obs: bool,
}

/// Stream of decision randomness for an episode, independent of the
/// spawn randomness drawn by [`reset`].
pub fn episode_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03)
}

/// Plays one game to termination with blue as the learner team. The
/// trajectory holds every state from the initial one to the terminal one,
/// each paired with the decision taken there (the terminal decision is
/// recorded but never executed).
pub fn play_episode(cfg: &FieldConfig, spec: &EpisodeSpec, blue: &Controller, red: &Controller) -> Result<Trajectory> {
    let mut state = reset(cfg, spec.seed)?;
    let mut rng = episode_rng(spec.seed);
    let mut traj = Trajectory::empty(cfg, spec.record_obs);
    let n = state.n_agents();
    let mut decisions = Vec::with_capacity(n);
    loop {
        decisions.clear();
        for i in 0..n {
            let c = match state.agents[i].team {
                Team::Blue => blue,
                Team::Red => red,
            };
            decisions.push(c.decide(&state, i, &mut rng));
        }
        record_step(&mut traj, &state, &decisions, spec.record_obs);
        if state.is_terminal() {
            break;
        }
        let actions: Vec<LowAction> = decisions.iter().map(|d| d.action).collect();
        if let Some(c) = state.step(&actions)?.capture {
            traj.meta.captures.push(c);
        }
    }
    finish(&mut traj, &state, spec.seed, spec.source, spec.epsilon);
    Ok(traj)
}

/// Appends the state and the learner team's decisions.
pub fn record_step(traj: &mut Trajectory, state: &GameState, decisions: &[Decision], record_obs: bool) {
    traj.ticks.push(state.tick);
    traj.global.extend(global_state_vector(state, Team::Blue));
    if record_obs {
        for i in 0..state.n_agents() {
            traj.obs.extend(observe(state, i));
        }
    }
    for i in state.team_agents(Team::Blue) {
        traj.options.push(decisions[i].option.unwrap_or(OptionId::NoOp));
        traj.actions.push(decisions[i].action);
    }
}

/// Fills in the episode outcome once the game is over.
pub fn finish(traj: &mut Trajectory, state: &GameState, seed: u64, source: Source, epsilon: Option<f64>) {
    let eta = state.score_difference();
    traj.meta = TrajMeta {
        eps: epsilon,
        eta,
        psi: eta.signum() as i8,
        seed,
        len: traj.ticks.len(),
        source,
        blue_captures: state.blue_captures,
        red_captures: state.red_captures,
        ..std::mem::take(&mut traj.meta)
    };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::{Activation, Head};
    use crate::sim::global_state_len;

    fn short() -> FieldConfig {
        FieldConfig {
            max_time_s: 30.0,
            ..FieldConfig::demo()
        }
    }

    #[test]
    fn episode_records_every_state() {
        let cfg = short();
        let spec = EpisodeSpec {
            seed: 3,
            source: Source::Demo,
            epsilon: None,
            record_obs: true,
        };
        let t = play_episode(&cfg, &spec, &Controller::Scripted { skill: 0.9 }, &Controller::Heuristic).unwrap();
        assert_eq!(t.len(), 301);
        assert_eq!(t.meta.len, 301);
        assert_eq!(t.global.len(), 301 * global_state_len(&cfg));
        assert_eq!(t.options.len(), 301 * 2);
        assert_eq!(t.obs.len(), 301 * 4 * t.obs_dim);
        assert_eq!(t.ticks[300], 300);
        let again = play_episode(&cfg, &spec, &Controller::Scripted { skill: 0.9 }, &Controller::Heuristic).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn mixture_identity_holds() {
        // The deployed action is exactly the primitive of the sampled option.
        let cfg = short();
        let net: DenseNet = DenseNet::new(
            &[crate::sim::observation_len(&cfg), 16, 7],
            Activation::Tanh,
            Head::Softmax,
            1,
        )
        .unwrap();
        let c = Controller::Options { net: &net, epsilon: 0.5 };
        let mut state = reset(&cfg, 2).unwrap();
        let mut rng = episode_rng(2);
        for _ in 0..200 {
            let d: Vec<Decision> = (0..4).map(|i| c.decide(&state, i, &mut rng)).collect();
            for (i, di) in d.iter().enumerate() {
                assert_eq!(di.action, run_primitive(di.option.unwrap(), &state, i));
            }
            state.step(&d.iter().map(|d| d.action).collect::<Vec<_>>()).unwrap();
        }
    }
}
