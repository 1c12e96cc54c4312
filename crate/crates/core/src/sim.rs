//! Discrete-time two-team maritime capture-the-flag simulator.
//!
//! The field is a `width_m x height_m` rectangle split by a vertical
//! scrimmage line. Blue defends the right half, red the left half. Each agent
//! is a unicycle with a heading controller and a first-order speed response;
//! the four low-level actions only move the controller setpoints.
//!
//! Agents are stored blue first: indices `0..team_size` are blue and
//! `team_size..2 * team_size` are red, with blue agent `i` mirroring red
//! agent `team_size + i`.
//!
//! Observations are computed in a team-canonical frame: a red agent sees the
//! field reflected about the scrimmage line so that, like blue, it defends the
//! right-hand side. This makes a learned policy usable by either team.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Proportional heading gain, 1/s.
pub const HEADING_KP: f64 = 2.0;
/// Derivative heading gain (dimensionless).
pub const HEADING_KD: f64 = 0.5;
/// Turn-rate limit, deg/s.
pub const MAX_TURN_RATE_DEG: f64 = 90.0;
/// Time constant of the speed response, s.
pub const SPEED_TIME_CONSTANT_S: f64 = 1.0;
/// Relative heading commanded by the two steering actions, deg.
pub const STEER_ANGLE_DEG: f64 = 135.0;
/// Maximum initial heading jitter applied by [`reset`], deg.
pub const SPAWN_HEADING_JITTER_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Blue,
    Red,
}

impl Team {
    pub fn index(self) -> usize {
        match self {
            Team::Blue => 0,
            Team::Red => 1,
        }
    }

    pub fn other(self) -> Team {
        match self {
            Team::Blue => Team::Red,
            Team::Red => Team::Blue,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Direction of this vector in degrees, counter-clockwise from +x.
    pub fn bearing_deg(self) -> f64 {
        self.y.atan2(self.x).to_degrees()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;

    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;

    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_deg(a: f64) -> f64 {
    let r = (a + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs.
    if r >= 180.0 {
        r - 360.0
    } else {
        r
    }
}

/// Static field and rule parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub width_m: f64,
    pub height_m: f64,
    pub tag_radius_m: f64,
    pub grab_radius_m: f64,
    pub max_speed_mps: f64,
    pub tag_cooldown_s: f64,
    pub tick_hz: f64,
    pub max_time_s: f64,
    pub max_captures: u32,
    pub team_size: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self::rollout()
    }
}

impl FieldConfig {
    /// Episode caps used for reward-learning rollouts: 750 s, 10 captures.
    pub fn rollout() -> Self {
        Self {
            width_m: 160.0,
            height_m: 80.0,
            tag_radius_m: 10.0,
            grab_radius_m: 10.0,
            max_speed_mps: 1.5,
            tag_cooldown_s: 30.0,
            tick_hz: 10.0,
            max_time_s: 750.0,
            max_captures: 10,
            team_size: 2,
        }
    }

    /// Episode caps used while collecting demonstrations: 720 s, 2 captures.
    pub fn demo() -> Self {
        Self {
            max_time_s: 720.0,
            max_captures: 2,
            ..Self::rollout()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("width_m", self.width_m),
            ("height_m", self.height_m),
            ("tag_radius_m", self.tag_radius_m),
            ("grab_radius_m", self.grab_radius_m),
            ("max_speed_mps", self.max_speed_mps),
            ("tag_cooldown_s", self.tag_cooldown_s),
            ("tick_hz", self.tick_hz),
            ("max_time_s", self.max_time_s),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_captures == 0 {
            return Err(Error::Config("max_captures must be positive".into()));
        }
        if self.team_size == 0 {
            return Err(Error::Config("team_size must be at least 1".into()));
        }
        if self.tag_radius_m > self.width_m.min(self.height_m) / 2.0 {
            return Err(Error::Config(format!(
                "tag_radius_m {} exceeds half the short field side",
                self.tag_radius_m
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_hz
    }

    pub fn diagonal(&self) -> f64 {
        self.width_m.hypot(self.height_m)
    }

    pub fn midline_x(&self) -> f64 {
        self.width_m / 2.0
    }

    pub fn max_ticks(&self) -> u64 {
        (self.max_time_s * self.tick_hz).ceil() as u64
    }

    pub fn n_agents(&self) -> usize {
        2 * self.team_size
    }

    pub fn team_of(&self, agent: usize) -> Team {
        if agent < self.team_size {
            Team::Blue
        } else {
            Team::Red
        }
    }

    /// Home (flag-zone centre) of a team: on the end-wall midline, inset by
    /// the grab radius so the whole zone lies inside the field.
    pub fn flag_home(&self, team: Team) -> Vec2 {
        let y = self.height_m / 2.0;
        match team {
            Team::Blue => Vec2::new(self.width_m - self.grab_radius_m, y),
            Team::Red => Vec2::new(self.grab_radius_m, y),
        }
    }

    pub fn is_on_side(&self, team: Team, p: Vec2) -> bool {
        match team {
            Team::Blue => p.x >= self.midline_x(),
            Team::Red => p.x < self.midline_x(),
        }
    }

    /// Reflection about the scrimmage line.
    pub fn reflect(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.width_m - p.x, p.y)
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width_m), p.y.clamp(0.0, self.height_m))
    }
}

/// Reflects a heading about the vertical axis.
pub fn reflect_heading(h: f64) -> f64 {
    wrap_deg(180.0 - h)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowAction {
    NoOp,
    ForwardMax,
    SteerRight135,
    SteerLeft135,
}

impl LowAction {
    pub const COUNT: usize = 4;
    pub const ALL: [LowAction; 4] = [
        LowAction::NoOp,
        LowAction::ForwardMax,
        LowAction::SteerRight135,
        LowAction::SteerLeft135,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<LowAction> {
        Self::ALL.get(i).copied()
    }

    /// The same action seen in the reflected frame (left and right swap).
    pub fn mirrored(self) -> LowAction {
        match self {
            LowAction::SteerRight135 => LowAction::SteerLeft135,
            LowAction::SteerLeft135 => LowAction::SteerRight135,
            a => a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub position: Vec2,
    /// Degrees counter-clockwise from +x, in `[-180, 180)`.
    pub heading: f64,
    pub speed: f64,
    pub team: Team,
    pub is_tagged: bool,
    pub has_flag: bool,
    pub on_own_side: bool,
    pub cooldown_remaining_s: f64,
}

/// One scoring event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureEvent {
    pub tick: u64,
    pub team: Team,
}

/// Everything that happened during one [`GameState::step`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepEvents {
    /// `(tagger, victim)` pairs in resolution order.
    pub tags: Vec<(usize, usize)>,
    pub grabs: Vec<usize>,
    pub capture: Option<CaptureEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub config: FieldConfig,
    pub agents: Vec<AgentState>,
    pub blue_captures: u32,
    pub red_captures: u32,
    pub tick: u64,
    /// Indexed by [`Team::index`].
    pub flag_home_positions: [Vec2; 2],
    /// Agent holding each team's flag, indexed by the flag owner's team.
    pub flag_taken_by: [Option<usize>; 2],
    pub seed: u64,
}

/// Places both teams at their flag zones. Identical seeds give identical
/// states; the seed only perturbs the initial headings.
pub fn reset(config: &FieldConfig, seed: u64) -> Result<GameState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.team_size;
    let spacing = 20.0;
    let mut agents = Vec::with_capacity(2 * n);
    for team in [Team::Blue, Team::Red] {
        let home = config.flag_home(team);
        let facing = match team {
            Team::Blue => 180.0,
            Team::Red => 0.0,
        };
        for k in 0..n {
            let offset = (k as f64 - (n as f64 - 1.0) / 2.0) * spacing;
            let position = config.clamp(Vec2::new(home.x, home.y + offset));
            let jitter = rng.gen_range(-SPAWN_HEADING_JITTER_DEG..=SPAWN_HEADING_JITTER_DEG);
            agents.push(AgentState {
                position,
                heading: wrap_deg(facing + jitter),
                speed: 0.0,
                team,
                is_tagged: false,
                has_flag: false,
                on_own_side: config.is_on_side(team, position),
                cooldown_remaining_s: 0.0,
            });
        }
    }
    Ok(GameState {
        config: config.clone(),
        agents,
        blue_captures: 0,
        red_captures: 0,
        tick: 0,
        flag_home_positions: [config.flag_home(Team::Blue), config.flag_home(Team::Red)],
        flag_taken_by: [None, None],
        seed,
    })
}

/// Pure-function form of [`GameState::step`].
pub fn step(state: &GameState, actions: &[LowAction]) -> Result<GameState> {
    let mut next = state.clone();
    next.step(actions)?;
    Ok(next)
}

/// Turn rate produced by the heading controller for a held setpoint error.
///
/// With the setpoint fixed over the tick the error rate equals minus the turn
/// rate, so `u = Kp e + Kd de/dt` solves to `u = Kp e / (1 + Kd)`.
pub fn heading_rate(error_deg: f64) -> f64 {
    (HEADING_KP * error_deg / (1.0 + HEADING_KD)).clamp(-MAX_TURN_RATE_DEG, MAX_TURN_RATE_DEG)
}

impl GameState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn captures(&self, team: Team) -> u32 {
        match team {
            Team::Blue => self.blue_captures,
            Team::Red => self.red_captures,
        }
    }

    /// Blue captures minus red captures.
    pub fn score_difference(&self) -> i32 {
        self.blue_captures as i32 - self.red_captures as i32
    }

    pub fn elapsed_s(&self) -> f64 {
        self.tick as f64 / self.config.tick_hz
    }

    pub fn is_terminal(&self) -> bool {
        self.tick >= self.config.max_ticks()
            || self.blue_captures >= self.config.max_captures
            || self.red_captures >= self.config.max_captures
    }

    pub fn team_agents(&self, team: Team) -> std::ops::Range<usize> {
        let n = self.config.team_size;
        match team {
            Team::Blue => 0..n,
            Team::Red => n..2 * n,
        }
    }

    pub fn flag_home(&self, team: Team) -> Vec2 {
        self.flag_home_positions[team.index()]
    }

    /// Swaps the teams and reflects the field about the scrimmage line.
    pub fn mirrored(&self) -> GameState {
        let n = self.config.team_size;
        let remap = |i: usize| if i < n { i + n } else { i - n };
        let agents = (0..2 * n)
            .map(|i| {
                let src = &self.agents[remap(i)];
                AgentState {
                    position: self.config.reflect(src.position),
                    heading: reflect_heading(src.heading),
                    team: src.team.other(),
                    ..src.clone()
                }
            })
            .collect();
        GameState {
            config: self.config.clone(),
            agents,
            blue_captures: self.red_captures,
            red_captures: self.blue_captures,
            tick: self.tick,
            flag_home_positions: [
                self.config.reflect(self.flag_home_positions[1]),
                self.config.reflect(self.flag_home_positions[0]),
            ],
            flag_taken_by: [self.flag_taken_by[1].map(remap), self.flag_taken_by[0].map(remap)],
            seed: self.seed,
        }
    }

    /// Advances the game by one tick.
    pub fn step(&mut self, actions: &[LowAction]) -> Result<StepEvents> {
        if self.is_terminal() {
            return Err(Error::Usage(format!("step called on terminal state at tick {}", self.tick)));
        }
        if actions.len() != self.agents.len() {
            return Err(Error::Usage(format!(
                "expected {} actions, got {}",
                self.agents.len(),
                actions.len()
            )));
        }
        let cfg = &self.config;
        let dt = cfg.dt();
        let mut events = StepEvents::default();

        for (agent, &action) in self.agents.iter_mut().zip(actions) {
            let (speed_sp, heading_err) = if agent.is_tagged {
                let home = self.flag_home_positions[agent.team.index()];
                let bearing = (home - agent.position).bearing_deg();
                (cfg.max_speed_mps, wrap_deg(bearing - agent.heading))
            } else {
                match action {
                    LowAction::NoOp => (0.0, 0.0),
                    LowAction::ForwardMax => (cfg.max_speed_mps, 0.0),
                    LowAction::SteerRight135 => (cfg.max_speed_mps, -STEER_ANGLE_DEG),
                    LowAction::SteerLeft135 => (cfg.max_speed_mps, STEER_ANGLE_DEG),
                }
            };
            agent.heading = wrap_deg(agent.heading + heading_rate(heading_err) * dt);
            let alpha = (dt / SPEED_TIME_CONSTANT_S).min(1.0);
            agent.speed = (agent.speed + (speed_sp - agent.speed) * alpha).clamp(0.0, cfg.max_speed_mps);
            let h = agent.heading.to_radians();
            let moved = agent.position + Vec2::new(h.cos(), h.sin()).scale(agent.speed * dt);
            agent.position = cfg.clamp(moved);
            agent.on_own_side = cfg.is_on_side(agent.team, agent.position);
            agent.cooldown_remaining_s = (agent.cooldown_remaining_s - dt).max(0.0);
            if agent.cooldown_remaining_s < 1e-9 {
                agent.cooldown_remaining_s = 0.0;
            }
        }

        // Tagged agents that made it home rejoin the game.
        for agent in self.agents.iter_mut().filter(|a| a.is_tagged) {
            let home = self.flag_home_positions[agent.team.index()];
            if agent.position.dist(home) <= cfg.grab_radius_m {
                agent.is_tagged = false;
            }
        }

        // Tags, resolved in agent-index order. The victim must be off-side,
        // i.e. inside the tagger's half.
        for tagger in 0..self.agents.len() {
            let t = &self.agents[tagger];
            if t.is_tagged || t.cooldown_remaining_s > 0.0 || !t.on_own_side {
                continue;
            }
            let (t_team, t_pos) = (t.team, t.position);
            let victim = self
                .agents
                .iter()
                .enumerate()
                .filter(|(_, v)| v.team != t_team && !v.is_tagged && !v.on_own_side)
                .map(|(i, v)| (i, v.position.dist(t_pos)))
                .filter(|&(_, d)| d <= cfg.tag_radius_m)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((vi, _)) = victim {
                let v = &mut self.agents[vi];
                v.is_tagged = true;
                if v.has_flag {
                    v.has_flag = false;
                    self.flag_taken_by[t_team.index()] = None;
                }
                self.agents[tagger].cooldown_remaining_s = cfg.tag_cooldown_s;
                events.tags.push((tagger, vi));
            }
        }

        // Grabs.
        for i in 0..self.agents.len() {
            let a = &self.agents[i];
            if a.is_tagged || a.has_flag {
                continue;
            }
            let opp = a.team.other();
            if self.flag_taken_by[opp.index()].is_some() {
                continue;
            }
            if a.position.dist(self.flag_home_positions[opp.index()]) <= cfg.grab_radius_m {
                self.agents[i].has_flag = true;
                self.flag_taken_by[opp.index()] = Some(i);
                events.grabs.push(i);
            }
        }

        // At most one capture per tick; a second carrier scores next tick.
        if let Some(i) = (0..self.agents.len()).find(|&i| {
            let a = &self.agents[i];
            a.has_flag && a.on_own_side
        }) {
            let team = self.agents[i].team;
            self.agents[i].has_flag = false;
            self.flag_taken_by[team.other().index()] = None;
            match team {
                Team::Blue => self.blue_captures += 1,
                Team::Red => self.red_captures += 1,
            }
            events.capture = Some(CaptureEvent {
                tick: self.tick + 1,
                team,
            });
        }

        self.tick += 1;
        Ok(events)
    }
}

/// Agent kinematics expressed in a team-canonical frame.
struct CanonicalAgent {
    position: Vec2,
    heading: f64,
}

fn canonical_agent(cfg: &FieldConfig, team: Team, a: &AgentState) -> CanonicalAgent {
    match team {
        Team::Blue => CanonicalAgent {
            position: a.position,
            heading: a.heading,
        },
        Team::Red => CanonicalAgent {
            position: cfg.reflect(a.position),
            heading: reflect_heading(a.heading),
        },
    }
}

fn canonical_point(cfg: &FieldConfig, team: Team, p: Vec2) -> Vec2 {
    match team {
        Team::Blue => p,
        Team::Red => cfg.reflect(p),
    }
}

/// Agents in canonical order for `ego`: ego, its teammates, then opponents,
/// each group by index.
pub fn canonical_order(state: &GameState, ego: usize) -> Vec<usize> {
    let team = state.agents[ego].team;
    let mut order = vec![ego];
    order.extend(state.team_agents(team).filter(|&i| i != ego));
    order.extend(state.team_agents(team.other()));
    order
}

fn unit_to_sym(x: f64) -> f64 {
    (2.0 * x - 1.0).clamp(-1.0, 1.0)
}

fn flag(b: bool) -> f32 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Length of [`observe`]'s output for a given configuration.
pub fn observation_len(cfg: &FieldConfig) -> usize {
    5 + 5 * (cfg.n_agents() - 1) + 2 * 2 + 4 * 2 + 1
}

/// Ego-centric observation of `agent`, every entry in `[-1, 1]`.
///
/// Layout: ego `[speed, cooldown, tagged, on_side, has_flag]`; for each other
/// agent in canonical order `[distance, bearing, tagged, on_side, has_flag]`;
/// `[distance, bearing]` to the own and then the opponent flag; the same for
/// the own end wall, opponent end wall, top wall and bottom wall; the signed
/// capture difference over `max_captures`.
pub fn observe(state: &GameState, agent: usize) -> Vec<f32> {
    let cfg = &state.config;
    let team = state.agents[agent].team;
    let ego_raw = &state.agents[agent];
    let ego = canonical_agent(cfg, team, ego_raw);
    let diag = cfg.diagonal();
    let rel = |p: Vec2| -> (f32, f32) {
        let d = p - ego.position;
        let dist = unit_to_sym(d.norm() / diag);
        let bearing = wrap_deg(d.bearing_deg() - ego.heading) / 180.0;
        (dist as f32, bearing as f32)
    };

    let mut out = Vec::with_capacity(observation_len(cfg));
    out.push(unit_to_sym(ego_raw.speed / cfg.max_speed_mps) as f32);
    out.push(unit_to_sym(ego_raw.cooldown_remaining_s / cfg.tag_cooldown_s) as f32);
    out.push(flag(ego_raw.is_tagged));
    out.push(flag(ego_raw.on_own_side));
    out.push(flag(ego_raw.has_flag));

    for &other in &canonical_order(state, agent)[1..] {
        let a = &state.agents[other];
        let (d, b) = rel(canonical_agent(cfg, team, a).position);
        out.extend_from_slice(&[d, b, flag(a.is_tagged), flag(a.on_own_side), flag(a.has_flag)]);
    }

    for t in [team, team.other()] {
        let (d, b) = rel(canonical_point(cfg, team, state.flag_home(t)));
        out.extend_from_slice(&[d, b]);
    }

    // In the canonical frame the own end wall is at x = width.
    let p = ego.position;
    let walls = [
        ((cfg.width_m - p.x) / cfg.width_m, 0.0),
        (p.x / cfg.width_m, 180.0),
        ((cfg.height_m - p.y) / cfg.height_m, 90.0),
        (p.y / cfg.height_m, -90.0),
    ];
    for (frac, dir) in walls {
        out.push(unit_to_sym(frac) as f32);
        out.push((wrap_deg(dir - ego.heading) / 180.0) as f32);
    }

    out.push(score_feature(state, team));
    out
}

fn score_feature(state: &GameState, team: Team) -> f32 {
    let diff = state.captures(team) as f64 - state.captures(team.other()) as f64;
    (diff / state.config.max_captures as f64).clamp(-1.0, 1.0) as f32
}

/// Length of [`global_state_vector`]'s output.
pub fn global_state_len(cfg: &FieldConfig) -> usize {
    9 * cfg.n_agents() + 3
}

/// Whole-game state from one team's perspective, every entry in `[-1, 1]`.
///
/// Per agent (perspective team first, then opponents, each by index) in the
/// team-canonical frame: `[x, y, cos heading, sin heading, speed, tagged,
/// has_flag, on_side, cooldown]`; then own-flag-taken, opponent-flag-taken and
/// the capture difference over `max_captures`.
pub fn global_state_vector(state: &GameState, perspective: Team) -> Vec<f32> {
    let cfg = &state.config;
    let mut out = Vec::with_capacity(global_state_len(cfg));
    let order = state
        .team_agents(perspective)
        .chain(state.team_agents(perspective.other()));
    for i in order {
        let a = &state.agents[i];
        let c = canonical_agent(cfg, perspective, a);
        let h = c.heading.to_radians();
        out.extend_from_slice(&[
            unit_to_sym(c.position.x / cfg.width_m) as f32,
            unit_to_sym(c.position.y / cfg.height_m) as f32,
            h.cos() as f32,
            h.sin() as f32,
            unit_to_sym(a.speed / cfg.max_speed_mps) as f32,
            flag(a.is_tagged),
            flag(a.has_flag),
            flag(a.on_own_side),
            unit_to_sym(a.cooldown_remaining_s / cfg.tag_cooldown_s) as f32,
        ]);
    }
    out.push(flag(state.flag_taken_by[perspective.index()].is_some()));
    out.push(flag(state.flag_taken_by[perspective.other().index()].is_some()));
    out.push(score_feature(state, perspective));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idle(state: &GameState) -> Vec<LowAction> {
        vec![LowAction::NoOp; state.n_agents()]
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = FieldConfig::default();
        assert_eq!(reset(&cfg, 7).unwrap(), reset(&cfg, 7).unwrap());
        assert_ne!(reset(&cfg, 7).unwrap(), reset(&cfg, 8).unwrap());
    }

    #[test]
    fn flag_zones_follow_field_sides() {
        let cfg = FieldConfig::default();
        let s = reset(&cfg, 7).unwrap();
        let blue = s.flag_home(Team::Blue);
        let red = s.flag_home(Team::Red);
        assert!(blue.x > cfg.midline_x());
        assert_eq!(blue.y, cfg.height_m / 2.0);
        assert!(red.x < cfg.midline_x());
        assert_eq!(red.y, cfg.height_m / 2.0);
        for a in &s.agents {
            assert!(a.on_own_side);
            assert!(a.position.dist(s.flag_home(a.team)) <= cfg.grab_radius_m + 1e-12);
        }
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = FieldConfig {
            team_size: 0,
            ..FieldConfig::default()
        };
        assert!(matches!(reset(&cfg, 1), Err(Error::Config(_))));
        let cfg = FieldConfig {
            tag_radius_m: 50.0,
            ..FieldConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = FieldConfig {
            max_speed_mps: -1.0,
            ..FieldConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn wrap_stays_in_range() {
        for a in [-540.0, -180.0, -1e-18, 0.0, 179.999, 180.0, 360.0, 725.0] {
            let w = wrap_deg(a);
            assert!((-180.0..180.0).contains(&w), "{a} -> {w}");
        }
        assert_eq!(wrap_deg(180.0), -180.0);
    }

    /// Red agent at home, blue agent off-side 9.9 m away, everyone at rest.
    fn tag_scenario(red_cooldown: f64) -> GameState {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 1).unwrap();
        s.agents[0].position = Vec2::new(60.0, 40.0);
        s.agents[0].on_own_side = false;
        s.agents[2].position = Vec2::new(60.0 - 9.9, 40.0);
        s.agents[2].cooldown_remaining_s = red_cooldown;
        s
    }

    #[test]
    fn opponent_in_range_on_home_side_tags() {
        let mut s = tag_scenario(0.0);
        let ev = s.step(&idle(&s)).unwrap();
        assert_eq!(ev.tags, vec![(2, 0)]);
        assert!(s.agents[0].is_tagged);
        assert_eq!(s.agents[2].cooldown_remaining_s, 30.0);
    }

    #[test]
    fn cooldown_blocks_tag() {
        let mut s = tag_scenario(12.0);
        let ev = s.step(&idle(&s)).unwrap();
        assert!(ev.tags.is_empty());
        assert!(!s.agents[0].is_tagged);
        assert!((s.agents[2].cooldown_remaining_s - 11.9).abs() < 1e-9);
    }

    #[test]
    fn no_tag_on_own_side() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 1).unwrap();
        // Both on blue's half: red could be tagged by blue, blue cannot be tagged.
        s.agents[0].position = Vec2::new(100.0, 40.0);
        s.agents[2].position = Vec2::new(105.0, 40.0);
        s.agents[2].on_own_side = false;
        s.agents[0].cooldown_remaining_s = 5.0;
        s.agents[1].cooldown_remaining_s = 5.0;
        let ev = s.step(&idle(&s)).unwrap();
        assert!(ev.tags.is_empty());
        assert!(!s.agents[0].is_tagged);
    }

    #[test]
    fn speed_converges_without_overshoot() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 3).unwrap();
        let mut actions = idle(&s);
        actions[0] = LowAction::ForwardMax;
        for _ in 0..400 {
            s.step(&actions).unwrap();
            assert!(s.agents[0].speed <= cfg.max_speed_mps);
        }
        assert!((s.agents[0].speed - 1.5).abs() < 1e-6);
    }

    #[test]
    fn steering_turns_at_rate_limit() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 3).unwrap();
        let h0 = s.agents[0].heading;
        let mut actions = idle(&s);
        actions[0] = LowAction::SteerLeft135;
        s.step(&actions).unwrap();
        let turned = wrap_deg(s.agents[0].heading - h0);
        assert!((turned - 9.0).abs() < 1e-9);
    }

    #[test]
    fn time_limit_is_terminal() {
        let cfg = FieldConfig {
            max_time_s: 2.0,
            ..FieldConfig::default()
        };
        let mut s = reset(&cfg, 3).unwrap();
        for _ in 0..20 {
            assert!(!s.is_terminal());
            s.step(&idle(&s)).unwrap();
        }
        assert!(s.is_terminal());
        assert!(matches!(s.step(&idle(&s)), Err(Error::Usage(_))));
    }

    #[test]
    fn grab_and_capture() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 3).unwrap();
        let red_flag = s.flag_home(Team::Red);
        s.agents[0].position = Vec2::new(red_flag.x + 5.0, red_flag.y);
        s.agents[0].on_own_side = false;
        let ev = s.step(&idle(&s)).unwrap();
        assert_eq!(ev.grabs, vec![0]);
        assert!(s.agents[0].has_flag);
        assert_eq!(s.flag_taken_by[Team::Red.index()], Some(0));
        s.agents[0].position = Vec2::new(cfg.midline_x() + 1.0, 40.0);
        let ev = s.step(&idle(&s)).unwrap();
        assert_eq!(ev.capture.map(|c| c.team), Some(Team::Blue));
        assert_eq!(s.blue_captures, 1);
        assert!(!s.agents[0].has_flag);
        assert_eq!(s.flag_taken_by, [None, None]);
    }

    #[test]
    fn tagged_carrier_drops_flag_and_returns_home() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 3).unwrap();
        s.agents[0].position = Vec2::new(60.0, 40.0);
        s.agents[0].has_flag = true;
        s.agents[0].on_own_side = false;
        s.flag_taken_by[Team::Red.index()] = Some(0);
        s.agents[2].position = Vec2::new(55.0, 40.0);
        s.step(&idle(&s)).unwrap();
        assert!(s.agents[0].is_tagged);
        assert!(!s.agents[0].has_flag);
        assert_eq!(s.flag_taken_by[Team::Red.index()], None);
        // Forced return ignores the action and never regrabs on the way.
        let mut ticks = 0;
        while s.agents[0].is_tagged {
            let mut actions = idle(&s);
            actions[0] = LowAction::SteerLeft135;
            s.step(&actions).unwrap();
            assert!(!s.agents[0].has_flag);
            ticks += 1;
            assert!(ticks < 2000, "tagged agent never got home");
        }
        assert!(s.agents[0].position.dist(s.flag_home(Team::Blue)) <= cfg.grab_radius_m);
    }

    #[test]
    fn observation_entries_are_normalized() {
        let cfg = FieldConfig::default();
        let s = reset(&cfg, 11).unwrap();
        for i in 0..s.n_agents() {
            let o = observe(&s, i);
            assert_eq!(o.len(), observation_len(&cfg));
            assert!(o.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let g = global_state_vector(&s, Team::Blue);
        assert_eq!(g.len(), global_state_len(&cfg));
        assert_eq!(*g.last().unwrap(), 0.0);
    }

    #[test]
    fn colocated_teammate_is_at_minimum_distance() {
        let cfg = FieldConfig::default();
        let mut s = reset(&cfg, 11).unwrap();
        s.agents[1].position = s.agents[0].position;
        let o = observe(&s, 0);
        assert_eq!(o[5], -1.0);
    }
}
