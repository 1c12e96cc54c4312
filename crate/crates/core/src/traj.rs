//! Trajectories: recording layout, downsampling, noised rollout generation
//! and the line-oriented trajectory file format.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{usage, Error, Result};
use crate::game::{play_episode, Controller, EpisodeSpec};
use crate::neuro::DenseNet;
use crate::options::{NoiseSchedule, OptionId};
use crate::seed::derive_seed;
use crate::sim::{global_state_len, observation_len, CaptureEvent, FieldConfig, LowAction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    /// Scripted demonstrator games.
    Demo,
    /// Games recorded through the live demo service.
    Human,
    /// Noise-injected rollouts of the cloned policy.
    #[default]
    Rollout,
    /// Rollouts where the learner team always idles.
    Noop,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub id: u64,
    /// Noise level for rollouts; `None` for demos and no-op rollouts.
    pub eps: Option<f64>,
    /// Blue captures minus red captures at the end of the episode.
    pub eta: i32,
    /// Sign of `eta`: win, draw or loss.
    pub psi: i8,
    pub seed: u64,
    /// Episode length in recorded states (before any downsampling).
    pub len: usize,
    pub source: Source,
    pub blue_captures: u32,
    pub red_captures: u32,
    pub captures: Vec<CaptureEvent>,
}

/// One episode, stored column-wise.
///
/// Row `i` holds the state at tick `ticks[i]`: the blue-perspective global
/// state vector, optionally every agent's observation vector, and the option
/// and low-level action each blue agent chose there.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub meta: TrajMeta,
    pub ticks: Vec<u64>,
    pub global_dim: usize,
    pub global: Vec<f32>,
    pub obs_dim: usize,
    pub n_agents: usize,
    /// `len * n_agents * obs_dim` entries, or empty when not recorded.
    pub obs: Vec<f32>,
    pub n_learners: usize,
    pub options: Vec<OptionId>,
    pub actions: Vec<LowAction>,
}

impl Trajectory {
    pub fn empty(cfg: &FieldConfig, with_obs: bool) -> Self {
        Self {
            global_dim: global_state_len(cfg),
            obs_dim: if with_obs { observation_len(cfg) } else { 0 },
            n_agents: cfg.n_agents(),
            n_learners: cfg.team_size,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn has_obs(&self) -> bool {
        !self.obs.is_empty()
    }

    pub fn global_row(&self, i: usize) -> &[f32] {
        &self.global[i * self.global_dim..(i + 1) * self.global_dim]
    }

    pub fn obs_row(&self, i: usize, agent: usize) -> &[f32] {
        let start = (i * self.n_agents + agent) * self.obs_dim;
        &self.obs[start..start + self.obs_dim]
    }

    pub fn option_at(&self, i: usize, learner: usize) -> OptionId {
        self.options[i * self.n_learners + learner]
    }

    pub fn action_at(&self, i: usize, learner: usize) -> LowAction {
        self.actions[i * self.n_learners + learner]
    }

    /// Keeps only the listed rows, in order.
    pub fn select(&self, rows: &[usize]) -> Trajectory {
        let mut out = Trajectory {
            meta: self.meta.clone(),
            global_dim: self.global_dim,
            obs_dim: self.obs_dim,
            n_agents: self.n_agents,
            n_learners: self.n_learners,
            ..Trajectory::default()
        };
        for &i in rows {
            out.ticks.push(self.ticks[i]);
            out.global.extend_from_slice(self.global_row(i));
            if self.has_obs() {
                let w = self.n_agents * self.obs_dim;
                out.obs.extend_from_slice(&self.obs[i * w..(i + 1) * w]);
            }
            let k = self.n_learners;
            if !self.options.is_empty() {
                out.options.extend_from_slice(&self.options[i * k..(i + 1) * k]);
            }
            if !self.actions.is_empty() {
                out.actions.extend_from_slice(&self.actions[i * k..(i + 1) * k]);
            }
        }
        out
    }

    /// Same trajectory without per-agent observations.
    pub fn without_obs(mut self) -> Trajectory {
        self.obs = Vec::new();
        self.obs_dim = 0;
        self
    }
}

/// Row indices kept by [`downsample`]: `0, rate, 2 rate, ...` plus the last
/// row when it is not already on the grid.
pub fn downsample_indices(len: usize, rate: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).step_by(rate.max(1)).collect();
    if len > 0 && idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

/// Keeps every `rate`-th state and always the final one. Metadata is kept as is.
pub fn downsample(traj: &Trajectory, rate: usize) -> Result<Trajectory> {
    if rate < 1 {
        return usage("downsampling rate must be at least 1");
    }
    Ok(traj.select(&downsample_indices(traj.len(), rate)))
}

/// Noise-injected rollouts of the cloned policy-over-options against the
/// heuristic opponent: `m` per noise level, then `m` no-op rollouts ranked
/// below the noisiest level. Ids are assigned in generation order.
pub fn generate_rollouts(
    bc_policy: &DenseNet,
    schedule: &NoiseSchedule,
    m: usize,
    cfg: &FieldConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if m < 1 {
        return usage("need at least one rollout per noise level");
    }
    let mut jobs: Vec<(Option<f64>, u64)> = Vec::new();
    for (b, &eps) in schedule.levels().iter().enumerate() {
        jobs.extend((0..m).map(|k| (Some(eps), derive_seed(seed, &[b as u64, k as u64]))));
    }
    let noop_bin = schedule.levels().len() as u64;
    jobs.extend((0..m).map(|k| (None, derive_seed(seed, &[noop_bin, k as u64]))));
    run_rollout_jobs(bc_policy, cfg, &jobs)
}

/// Rollouts at explicit noise levels (used for held-out extrapolation sets).
pub fn generate_level_rollouts(
    bc_policy: &DenseNet,
    levels: &[f64],
    m: usize,
    cfg: &FieldConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let jobs: Vec<(Option<f64>, u64)> = levels
        .iter()
        .enumerate()
        .flat_map(|(b, &eps)| (0..m).map(move |k| (Some(eps), derive_seed(seed, &[b as u64, k as u64]))))
        .collect();
    run_rollout_jobs(bc_policy, cfg, &jobs)
}

fn run_rollout_jobs(bc_policy: &DenseNet, cfg: &FieldConfig, jobs: &[(Option<f64>, u64)]) -> Result<Vec<Trajectory>> {
    let mut out = jobs
        .par_iter()
        .map(|&(eps, seed)| rollout(bc_policy, cfg, eps, seed))
        .collect::<Result<Vec<_>>>()?;
    for (i, t) in out.iter_mut().enumerate() {
        t.meta.id = i as u64;
    }
    Ok(out)
}

/// A single rollout: `eps = None` means the learner team idles throughout.
pub fn rollout(bc_policy: &DenseNet, cfg: &FieldConfig, eps: Option<f64>, seed: u64) -> Result<Trajectory> {
    let (blue, source) = match eps {
        Some(epsilon) => (
            Controller::Options {
                net: bc_policy,
                epsilon,
            },
            Source::Rollout,
        ),
        None => (Controller::Idle, Source::Noop),
    };
    let spec = EpisodeSpec {
        seed,
        source,
        epsilon: eps,
        record_obs: false,
    };
    play_episode(cfg, &spec, &blue, &Controller::Heuristic)
}

/// Replays a stored rollout from its seed and noise level and returns the
/// recomputed score.
pub fn replay_eta(bc_policy: &DenseNet, cfg: &FieldConfig, meta: &TrajMeta) -> Result<i32> {
    match meta.source {
        Source::Rollout | Source::Noop => Ok(rollout(bc_policy, cfg, meta.eps, meta.seed)?.meta.eta),
        other => usage(format!("cannot replay a {other:?} trajectory from its seed alone")),
    }
}

/// Rounds to six significant digits, the precision used on disk.
pub fn round_sig6(x: f32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x as f64;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

struct Sig6<'a>(&'a [f32]);

impl Serialize for Sig6<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for &v in self.0 {
            seq.serialize_element(&round_sig6(v))?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct StepOut<'a> {
    t: u64,
    global: Sig6<'a>,
    #[serde(skip_serializing_if = "Option::is_none")]
    obs: Option<Vec<Sig6<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    opts: Option<&'a [OptionId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acts: Option<&'a [LowAction]>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    meta: &'a TrajMeta,
    steps: Vec<StepOut<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepIn {
    t: u64,
    global: Vec<f32>,
    #[serde(default)]
    obs: Option<Vec<Vec<f32>>>,
    #[serde(default)]
    opts: Option<Vec<OptionId>>,
    #[serde(default)]
    acts: Option<Vec<LowAction>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    meta: TrajMeta,
    steps: Vec<StepIn>,
}

/// Serialises one trajectory as a single line of JSON.
pub fn trajectory_to_line(t: &Trajectory) -> Result<String> {
    let k = t.n_learners;
    let steps = (0..t.len())
        .map(|i| StepOut {
            t: t.ticks[i],
            global: Sig6(t.global_row(i)),
            obs: t
                .has_obs()
                .then(|| (0..t.n_agents).map(|a| Sig6(t.obs_row(i, a))).collect()),
            opts: (!t.options.is_empty()).then(|| &t.options[i * k..(i + 1) * k]),
            acts: (!t.actions.is_empty()).then(|| &t.actions[i * k..(i + 1) * k]),
        })
        .collect();
    Ok(serde_json::to_string(&RecordOut { meta: &t.meta, steps })?)
}

pub fn trajectory_from_line(line: &str) -> Result<Trajectory> {
    let rec: RecordIn = serde_json::from_str(line)?;
    let first = rec
        .steps
        .first()
        .ok_or_else(|| Error::Format(format!("trajectory {} has no steps", rec.meta.id)))?;
    let mut t = Trajectory {
        global_dim: first.global.len(),
        n_agents: first.obs.as_ref().map_or(0, |o| o.len()),
        obs_dim: first.obs.as_ref().and_then(|o| o.first()).map_or(0, |o| o.len()),
        n_learners: first
            .opts
            .as_ref()
            .map(|o| o.len())
            .or_else(|| first.acts.as_ref().map(|a| a.len()))
            .unwrap_or(0),
        meta: rec.meta,
        ..Trajectory::default()
    };
    for (i, s) in rec.steps.into_iter().enumerate() {
        let bad = |what: &str| Error::Format(format!("trajectory {} step {i}: inconsistent {what}", t.meta.id));
        if s.global.len() != t.global_dim {
            return Err(bad("global length"));
        }
        t.ticks.push(s.t);
        t.global.extend(s.global);
        match s.obs {
            Some(obs) => {
                if obs.len() != t.n_agents || obs.iter().any(|o| o.len() != t.obs_dim) {
                    return Err(bad("observation shape"));
                }
                obs.into_iter().for_each(|o| t.obs.extend(o));
            }
            None if t.obs_dim > 0 => return Err(bad("observation presence")),
            None => {}
        }
        if let Some(o) = s.opts {
            if o.len() != t.n_learners {
                return Err(bad("option labels"));
            }
            t.options.extend(o);
        }
        if let Some(a) = s.acts {
            if a.len() != t.n_learners {
                return Err(bad("action labels"));
            }
            t.actions.extend(a);
        }
    }
    if !t.options.is_empty() && t.options.len() != t.len() * t.n_learners {
        return Err(Error::Format(format!("trajectory {}: option labels missing on some steps", t.meta.id)));
    }
    if !t.actions.is_empty() && t.actions.len() != t.len() * t.n_learners {
        return Err(Error::Format(format!("trajectory {}: action labels missing on some steps", t.meta.id)));
    }
    Ok(t)
}

/// Writes one trajectory per line.
pub fn write_trajectories(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for t in trajs {
        w.write_all(trajectory_to_line(t)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            trajectory_from_line(&line)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{play_episode, Controller, EpisodeSpec};

    fn demo(seed: u64) -> Trajectory {
        let cfg = FieldConfig {
            max_time_s: 20.0,
            ..FieldConfig::demo()
        };
        let spec = EpisodeSpec {
            seed,
            source: Source::Demo,
            epsilon: None,
            record_obs: true,
        };
        play_episode(&cfg, &spec, &Controller::Scripted { skill: 0.8 }, &Controller::Heuristic).unwrap()
    }

    #[test]
    fn downsample_keeps_grid_and_final_state() {
        assert_eq!(downsample_indices(10, 4), vec![0, 4, 8, 9]);
        assert_eq!(downsample_indices(9, 4), vec![0, 4, 8]);
        assert_eq!(downsample_indices(1, 40), vec![0]);
        let t = demo(1);
        let d = downsample(&t, 40).unwrap();
        assert_eq!(d.len(), t.len().div_ceil(40) + usize::from(!(t.len() - 1).is_multiple_of(40)));
        assert_eq!(d.ticks.last(), t.ticks.last());
        assert_eq!(d.global_row(1), t.global_row(40));
        assert_eq!(d.meta, t.meta);
        assert_eq!(downsample(&t, 1).unwrap(), t);
        assert!(downsample(&t, 0).is_err());
    }

    #[test]
    fn sig6_rounding() {
        assert_eq!(round_sig6(0.0), 0.0);
        assert_eq!(round_sig6(1.0), 1.0);
        assert_eq!(round_sig6(0.123_456_78), 0.123457);
        assert_eq!(round_sig6(-1234.5678), -1234.57);
    }

    #[test]
    fn line_round_trip_within_precision() {
        let t = demo(4);
        let line = trajectory_to_line(&t).unwrap();
        let back = trajectory_from_line(&line).unwrap();
        assert_eq!(back.meta, t.meta);
        assert_eq!(back.ticks, t.ticks);
        assert_eq!(back.options, t.options);
        assert_eq!(back.actions, t.actions);
        assert_eq!((back.obs_dim, back.n_agents, back.n_learners), (t.obs_dim, t.n_agents, t.n_learners));
        for (a, b) in t.global.iter().zip(&back.global).chain(t.obs.iter().zip(&back.obs)) {
            assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
        }
        // A second round trip is exact.
        assert_eq!(trajectory_to_line(&back).unwrap(), line);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(trajectory_from_line("{}").is_err());
        assert!(trajectory_from_line("not json").is_err());
        let t = demo(5);
        let mut v: serde_json::Value = serde_json::from_str(&trajectory_to_line(&t).unwrap()).unwrap();
        v["steps"][3]["global"].as_array_mut().unwrap().pop();
        assert!(trajectory_from_line(&v.to_string()).is_err());
    }
}
