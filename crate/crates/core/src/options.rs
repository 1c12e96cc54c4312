//! Behavioral primitives, noise-injected policy sampling, the potential-field
//! opponent and the scripted demonstrator.
//!
//! Every option is a deterministic map from game state to a (speed, heading)
//! setpoint. [`run_primitive`] quantizes that setpoint to the nearest of the
//! four low-level actions, so the deployed low-level policy is always
//! `run_primitive(sampled option, state)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::neuro::{DenseNet, Real};
use crate::sim::{wrap_deg, GameState, LowAction, Team, Vec2};

/// Half-angle of the forward cone: midway between forward (0 deg) and the
/// 135 deg steering setpoints.
pub const FORWARD_CONE_DEG: f64 = 67.5;
/// Flank lane distance from the side wall, m.
pub const FLANK_LANE_MARGIN_M: f64 = 6.0;
/// Guard post as a fraction of the flag-to-threat distance.
pub const GUARD_FRACTION: f64 = 0.3;
/// Guard holds position once this close to its post, m.
pub const GUARD_HOLD_RADIUS_M: f64 = 3.0;
/// Defender switches from guard to tag inside this flag distance, m.
pub const DEFENDER_ALERT_RADIUS_M: f64 = 45.0;
/// Range of the opponent's repulsive potential, m.
pub const REPULSION_RANGE_M: f64 = 25.0;
/// Peak repulsive gain relative to the unit attractive pull.
pub const REPULSION_GAIN: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionId {
    Attack,
    Flank,
    Avoid,
    Retreat,
    Guard,
    Tag,
    NoOp,
}

impl OptionId {
    pub const COUNT: usize = 7;
    pub const ALL: [OptionId; 7] = [
        OptionId::Attack,
        OptionId::Flank,
        OptionId::Avoid,
        OptionId::Retreat,
        OptionId::Guard,
        OptionId::Tag,
        OptionId::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<OptionId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OptionId::Attack => "attack",
            OptionId::Flank => "flank",
            OptionId::Avoid => "avoid",
            OptionId::Retreat => "retreat",
            OptionId::Guard => "guard",
            OptionId::Tag => "tag",
            OptionId::NoOp => "no_op",
        }
    }
}

impl std::str::FromStr for OptionId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown option `{s}`"))
    }
}

/// Desired speed (m/s) and absolute heading (deg).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setpoint {
    pub speed: f64,
    pub heading: f64,
}

impl Setpoint {
    fn stop(heading: f64) -> Self {
        Self { speed: 0.0, heading }
    }
}

struct View<'a> {
    state: &'a GameState,
    agent: usize,
    team: Team,
    pos: Vec2,
}

impl<'a> View<'a> {
    fn new(state: &'a GameState, agent: usize) -> Self {
        let a = &state.agents[agent];
        Self {
            state,
            agent,
            team: a.team,
            pos: a.position,
        }
    }

    fn max_speed(&self) -> f64 {
        self.state.config.max_speed_mps
    }

    fn heading(&self) -> f64 {
        self.state.agents[self.agent].heading
    }

    fn toward(&self, target: Vec2) -> Setpoint {
        Setpoint {
            speed: self.max_speed(),
            heading: (target - self.pos).bearing_deg(),
        }
    }

    fn own_flag(&self) -> Vec2 {
        self.state.flag_home(self.team)
    }

    fn opp_flag(&self) -> Vec2 {
        self.state.flag_home(self.team.other())
    }

    /// +1 when the own half is toward +x.
    fn home_dir(&self) -> f64 {
        match self.team {
            Team::Blue => 1.0,
            Team::Red => -1.0,
        }
    }

    fn live_opponents(&self) -> impl Iterator<Item = usize> + '_ {
        self.state
            .team_agents(self.team.other())
            .filter(|&i| !self.state.agents[i].is_tagged)
    }

    fn nearest_live_opponent_to(&self, p: Vec2) -> Option<usize> {
        self.live_opponents().min_by(|&a, &b| {
            let da = self.state.agents[a].position.dist(p);
            let db = self.state.agents[b].position.dist(p);
            da.total_cmp(&db)
        })
    }
}

fn attack(v: &View) -> Setpoint {
    v.toward(v.opp_flag())
}

fn flank(v: &View) -> Setpoint {
    let cfg = &v.state.config;
    let flag = v.opp_flag();
    let lane_y = if v.pos.y < cfg.height_m / 2.0 {
        FLANK_LANE_MARGIN_M
    } else {
        cfg.height_m - FLANK_LANE_MARGIN_M
    };
    // Corner on the opponent end, level with their flag zone.
    let corner_x = flag.x;
    let to_corner_x = (corner_x - v.pos.x) * -v.home_dir();
    if to_corner_x <= cfg.grab_radius_m * 2.0 {
        return v.toward(flag);
    }
    if (v.pos.y - lane_y).abs() > FLANK_LANE_MARGIN_M {
        // Merge into the lane while still making ground.
        let ahead = v.pos.x - v.home_dir() * 10.0;
        return v.toward(Vec2::new(ahead, lane_y));
    }
    v.toward(Vec2::new(corner_x, lane_y))
}

fn avoid(v: &View) -> Setpoint {
    match v.nearest_live_opponent_to(v.pos) {
        Some(o) => {
            let away = v.pos - v.state.agents[o].position;
            if away.norm() == 0.0 {
                v.toward(v.own_flag())
            } else {
                Setpoint {
                    speed: v.max_speed(),
                    heading: away.bearing_deg(),
                }
            }
        }
        None => Setpoint::stop(v.heading()),
    }
}

fn retreat(v: &View) -> Setpoint {
    Setpoint {
        speed: v.max_speed(),
        heading: if v.home_dir() > 0.0 { 0.0 } else { -180.0 },
    }
}

fn guard(v: &View) -> Setpoint {
    let flag = v.own_flag();
    let post = match v.nearest_live_opponent_to(flag) {
        Some(o) => {
            let threat = v.state.agents[o].position;
            flag + (threat - flag).scale(GUARD_FRACTION)
        }
        None => flag,
    };
    if v.pos.dist(post) <= GUARD_HOLD_RADIUS_M {
        Setpoint::stop(v.heading())
    } else {
        v.toward(post)
    }
}

fn tag(v: &View) -> Setpoint {
    match v.nearest_live_opponent_to(v.own_flag()) {
        Some(o) => v.toward(v.state.agents[o].position),
        None => guard(v),
    }
}

/// Setpoint of an intra-option policy.
pub fn primitive_setpoint(id: OptionId, state: &GameState, agent: usize) -> Setpoint {
    let v = View::new(state, agent);
    match id {
        OptionId::Attack => attack(&v),
        OptionId::Flank => flank(&v),
        OptionId::Avoid => avoid(&v),
        OptionId::Retreat => retreat(&v),
        OptionId::Guard => guard(&v),
        OptionId::Tag => tag(&v),
        OptionId::NoOp => Setpoint::stop(v.heading()),
    }
}

/// Nearest low-level action to a setpoint for the given agent.
pub fn quantize(state: &GameState, agent: usize, sp: Setpoint) -> LowAction {
    if sp.speed <= 0.0 {
        return LowAction::NoOp;
    }
    let rel = wrap_deg(sp.heading - state.agents[agent].heading);
    if rel.abs() < FORWARD_CONE_DEG {
        LowAction::ForwardMax
    } else if rel > 0.0 {
        LowAction::SteerLeft135
    } else {
        LowAction::SteerRight135
    }
}

pub fn run_primitive(id: OptionId, state: &GameState, agent: usize) -> LowAction {
    quantize(state, agent, primitive_setpoint(id, state, agent))
}

/// Probability of each option under noise level `epsilon` when the cloned
/// policy prefers `greedy`.
pub fn option_probabilities(greedy: OptionId, epsilon: f64) -> [f64; OptionId::COUNT] {
    let k = OptionId::COUNT as f64;
    let mut p = [epsilon / k; OptionId::COUNT];
    p[greedy.index()] = 1.0 - epsilon + epsilon / k;
    p
}

/// Same as [`option_probabilities`] over the low-level actions.
pub fn action_probabilities(greedy: LowAction, epsilon: f64) -> [f64; LowAction::COUNT] {
    let k = LowAction::COUNT as f64;
    let mut p = [epsilon / k; LowAction::COUNT];
    p[greedy.index()] = 1.0 - epsilon + epsilon / k;
    p
}

/// Draws an index: uniform over `n` with probability `epsilon`, otherwise the
/// greedy choice. `greedy` is only evaluated when needed.
fn epsilon_draw<R: Rng + ?Sized>(n: usize, epsilon: f64, rng: &mut R, greedy: impl FnOnce() -> usize) -> usize {
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..n)
    } else {
        greedy()
    }
}

/// Samples an option from the epsilon-noised policy-over-options.
pub fn noisy_option<R: Rng + ?Sized>(epsilon: f64, rng: &mut R, greedy: impl FnOnce() -> OptionId) -> OptionId {
    let i = epsilon_draw(OptionId::COUNT, epsilon, rng, || greedy().index());
    OptionId::ALL[i]
}

/// Samples an option given the cloned policy-over-options and an observation.
pub fn noisy_policy_over_options<T: Real, R: Rng + ?Sized>(
    bc_policy: &DenseNet<T>,
    obs: &[f32],
    epsilon: f64,
    rng: &mut R,
) -> OptionId {
    noisy_option(epsilon, rng, || {
        let x: Vec<T> = obs.iter().map(|&v| T::of(v as f64)).collect();
        let i = bc_policy.argmax(&x).expect("observation length matches policy input");
        OptionId::from_index(i).unwrap_or(OptionId::NoOp)
    })
}

/// Epsilon-greedy sampling over the four low-level actions.
pub fn epsilon_greedy_low_level<T: Real, R: Rng + ?Sized>(
    bc_action_policy: &DenseNet<T>,
    obs: &[f32],
    epsilon: f64,
    rng: &mut R,
) -> LowAction {
    let i = epsilon_draw(LowAction::COUNT, epsilon, rng, || {
        let x: Vec<T> = obs.iter().map(|&v| T::of(v as f64)).collect();
        bc_action_policy.argmax(&x).expect("observation length matches policy input")
    });
    LowAction::ALL[i]
}

/// Strictly increasing noise levels in `[0, 1]`, one rollout bin each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule(Vec<f64>);

impl NoiseSchedule {
    pub fn new(levels: Vec<f64>) -> crate::Result<Self> {
        if levels.is_empty() {
            return Err(crate::Error::Config("noise schedule is empty".into()));
        }
        if levels.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(crate::Error::Config(format!("noise levels must lie in [0, 1]: {levels:?}")));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(crate::Error::Config(format!("noise levels must be strictly increasing: {levels:?}")));
        }
        Ok(Self(levels))
    }

    pub fn levels(&self) -> &[f64] {
        &self.0
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self(vec![0.5, 0.67, 0.83, 1.0])
    }
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = crate::Error;

    fn try_from(v: Vec<f64>) -> crate::Result<Self> {
        Self::new(v)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.0
    }
}

/// Potential-field attacker: pulled toward the opponent flag (or home while
/// carrying or tagged) and pushed away from untagged opponents standing on
/// their own half.
pub fn heuristic_opponent(state: &GameState, agent: usize) -> LowAction {
    let v = View::new(state, agent);
    let a = &state.agents[agent];
    let goal = if a.has_flag || a.is_tagged { v.own_flag() } else { v.opp_flag() };
    let to_goal = goal - v.pos;
    let mut force = if to_goal.norm() > 0.0 {
        to_goal.scale(1.0 / to_goal.norm())
    } else {
        Vec2::default()
    };
    for o in v.live_opponents() {
        let opp = &state.agents[o];
        if !opp.on_own_side {
            continue;
        }
        let away = v.pos - opp.position;
        let d = away.norm();
        if d > 0.0 && d < REPULSION_RANGE_M {
            let gain = REPULSION_GAIN * (REPULSION_RANGE_M - d) / REPULSION_RANGE_M;
            force = force + away.scale(gain / d);
        }
    }
    if force.norm() < 1e-9 {
        return LowAction::NoOp;
    }
    quantize(
        state,
        agent,
        Setpoint {
            speed: state.config.max_speed_mps,
            heading: force.bearing_deg(),
        },
    )
}

/// Option the scripted strategy prefers, before any skill noise.
pub fn scripted_choice(state: &GameState, agent: usize) -> OptionId {
    let v = View::new(state, agent);
    let me = &state.agents[agent];
    let slot = agent % state.config.team_size;
    if slot == 0 {
        let threatened = v
            .nearest_live_opponent_to(v.own_flag())
            .map(|o| state.agents[o].position.dist(v.own_flag()) < DEFENDER_ALERT_RADIUS_M)
            .unwrap_or(false);
        if threatened && me.cooldown_remaining_s == 0.0 {
            OptionId::Tag
        } else {
            OptionId::Guard
        }
    } else if me.has_flag {
        OptionId::Retreat
    } else {
        // Opponents have committed once none of them is left defending.
        let committed = v.live_opponents().all(|o| !state.agents[o].on_own_side);
        if committed {
            OptionId::Attack
        } else {
            OptionId::Flank
        }
    }
}

/// Scripted stand-in for a human demonstrator. Slot 0 defends, slot 1
/// attacks; with probability `1 - skill` a uniformly random non-preferred
/// option is emitted instead.
pub fn scripted_demonstrator<R: Rng + ?Sized>(state: &GameState, agent: usize, skill: f64, rng: &mut R) -> OptionId {
    let best = scripted_choice(state, agent);
    if rng.gen::<f64>() < skill {
        return best;
    }
    let k = rng.gen_range(0..OptionId::COUNT - 1);
    let i = if k >= best.index() { k + 1 } else { k };
    OptionId::ALL[i]
}
