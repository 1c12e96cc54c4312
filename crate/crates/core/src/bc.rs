//! Behavior cloning of the demonstrator: a policy over options (or, as a
//! baseline, directly over low-level actions) fit by cross-entropy.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::game::{play_episode, Controller, EpisodeSpec};
use crate::neuro::{softmax_cross_entropy, Activation, AdamState, DenseNet, Head};
use crate::options::OptionId;
use crate::seed::derive_seed;
use crate::sim::{FieldConfig, LowAction};
use crate::traj::{Source, Trajectory};

/// Which labels the policy is cloned on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcTarget {
    Options,
    Actions,
}

impl BcTarget {
    pub fn n_classes(self) -> usize {
        match self {
            BcTarget::Options => OptionId::COUNT,
            BcTarget::Actions => LowAction::COUNT,
        }
    }
}

/// Observation/label pairs from every recorded step of every learner agent.
#[derive(Clone, Debug, Default)]
pub struct DemoDataset {
    pub obs_dim: usize,
    pub obs: Vec<f32>,
    pub options: Vec<OptionId>,
    pub actions: Vec<LowAction>,
}

impl DemoDataset {
    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let mut d = DemoDataset::default();
        for t in trajs {
            if !t.has_obs() || t.options.is_empty() || t.actions.is_empty() {
                return usage(format!(
                    "trajectory {} lacks observations or labels and cannot be cloned from",
                    t.meta.id
                ));
            }
            if d.obs_dim == 0 {
                d.obs_dim = t.obs_dim;
            } else if d.obs_dim != t.obs_dim {
                return Err(Error::Format(format!("trajectory {} has observation length {}", t.meta.id, t.obs_dim)));
            }
            // Learners are the first `n_learners` agents (the blue team).
            for i in 0..t.len() {
                for k in 0..t.n_learners {
                    d.obs.extend_from_slice(t.obs_row(i, k));
                    d.options.push(t.option_at(i, k));
                    d.actions.push(t.action_at(i, k));
                }
            }
        }
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn label(&self, i: usize, target: BcTarget) -> usize {
        match target {
            BcTarget::Options => self.options[i].index(),
            BcTarget::Actions => self.actions[i].index(),
        }
    }

    fn rows(&self, idx: &[usize]) -> Array2<f32> {
        let mut x = Array2::zeros((idx.len(), self.obs_dim));
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r)
                .as_slice_mut()
                .expect("contiguous row")
                .copy_from_slice(&self.obs[i * self.obs_dim..(i + 1) * self.obs_dim]);
        }
        x
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
}

/// Fits a tanh MLP with a softmax head by minibatch Adam on cross-entropy.
pub fn bc_fit(data: &DemoDataset, target: BcTarget, cfg: &BcConfig) -> Result<(DenseNet, Vec<BcEpoch>)> {
    if data.is_empty() {
        return usage("no demonstration samples to clone");
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || cfg.hidden == 0 {
        return Err(Error::Config("batch size, epochs and hidden width must be positive".into()));
    }
    let sizes = [data.obs_dim, cfg.hidden, cfg.hidden, target.n_classes()];
    let mut net: DenseNet = DenseNet::new(&sizes, Activation::Tanh, Head::Softmax, cfg.seed)?;
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = batch.iter().map(|&i| data.label(i, target)).collect();
            let tape = net.forward_tape(data.rows(batch))?;
            let (loss, grad, ok) = softmax_cross_entropy(tape.output.view(), &labels);
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite cloning loss in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            correct += ok;
            let g = net.backward(&tape, grad.view());
            adam.update(&mut net, &g)?;
        }
        log.push(BcEpoch {
            epoch,
            loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
        });
    }
    Ok((net, log))
}

/// Fraction of samples whose label is the policy's most likely class.
pub fn bc_accuracy(net: &DenseNet, data: &DemoDataset, target: BcTarget) -> Result<f64> {
    if data.is_empty() {
        return usage("no samples to score");
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(4096) {
        let out = net.outputs(data.rows(chunk).view())?;
        for (r, &i) in chunk.iter().enumerate() {
            if crate::neuro::argmax(out.row(r).iter().copied()) == data.label(i, target) {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Outcome tally from the blue team's point of view.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub wins: usize,
    pub losses: usize,
    pub draws: usize,
    pub etas: Vec<i32>,
}

impl MatchRecord {
    pub fn games(&self) -> usize {
        self.etas.len()
    }

    pub fn win_rate(&self) -> f64 {
        self.wins as f64 / self.games().max(1) as f64
    }

    pub fn mean_eta(&self) -> f64 {
        self.etas.iter().map(|&e| e as f64).sum::<f64>() / self.games().max(1) as f64
    }

    pub fn from_etas(etas: Vec<i32>) -> Self {
        Self {
            wins: etas.iter().filter(|&&e| e > 0).count(),
            losses: etas.iter().filter(|&&e| e < 0).count(),
            draws: etas.iter().filter(|&&e| e == 0).count(),
            etas,
        }
    }
}

/// Plays `n_games` independent games; game `k` uses seed `derive_seed(seed, [k])`.
pub fn play_match(blue: &Controller, red: &Controller, n_games: usize, cfg: &FieldConfig, seed: u64) -> Result<MatchRecord> {
    let etas = (0..n_games)
        .into_par_iter()
        .map(|k| {
            let spec = EpisodeSpec {
                seed: derive_seed(seed, &[k as u64]),
                source: Source::Rollout,
                epsilon: None,
                record_obs: false,
            };
            play_episode(cfg, &spec, blue, red).map(|t| t.meta.eta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatchRecord::from_etas(etas))
}

/// Greedy cloned policy (options or low-level, by its output width) against
/// the heuristic opponent.
pub fn bc_evaluate(policy: &DenseNet, n_games: usize, cfg: &FieldConfig, seed: u64) -> Result<MatchRecord> {
    let blue = match policy.output_len() {
        n if n == OptionId::COUNT => Controller::Options { net: policy, epsilon: 0.0 },
        n if n == LowAction::COUNT => Controller::Actions { net: policy, epsilon: 0.0 },
        n => return usage(format!("policy has {n} outputs; expected {} or {}", OptionId::COUNT, LowAction::COUNT)),
    };
    play_match(&blue, &Controller::Heuristic, n_games, cfg, seed)
}

/// Scripted demonstrations against the heuristic opponent, with observations.
pub fn collect_demos(n: usize, skill: f64, cfg: &FieldConfig, seed: u64) -> Result<Vec<Trajectory>> {
    if !(0.0..=1.0).contains(&skill) {
        return Err(Error::Config(format!("demonstrator skill {skill} outside [0, 1]")));
    }
    let mut out = (0..n)
        .into_par_iter()
        .map(|k| {
            let spec = EpisodeSpec {
                seed: derive_seed(seed, &[k as u64]),
                source: Source::Demo,
                epsilon: None,
                record_obs: true,
            };
            play_episode(cfg, &spec, &Controller::Scripted { skill }, &Controller::Heuristic)
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, t) in out.iter_mut().enumerate() {
        t.meta.id = i as u64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> FieldConfig {
        FieldConfig {
            max_time_s: 20.0,
            ..FieldConfig::demo()
        }
    }

    #[test]
    fn dataset_counts_every_learner_step() {
        let demos = collect_demos(2, 0.9, &short(), 1).unwrap();
        let d = DemoDataset::from_trajectories(&demos).unwrap();
        assert_eq!(d.len(), demos.iter().map(|t| t.len() * 2).sum::<usize>());
        assert_eq!(d.obs.len(), d.len() * d.obs_dim);
        assert_eq!(d.obs_dim, 33);
    }

    #[test]
    fn rollouts_without_observations_are_refused() {
        let demos = collect_demos(1, 0.9, &short(), 1).unwrap();
        let stripped: Vec<_> = demos.into_iter().map(|t| t.without_obs()).collect();
        assert!(matches!(DemoDataset::from_trajectories(&stripped), Err(Error::Usage(_))));
    }

    #[test]
    fn cloning_fits_a_small_demo_set() {
        let demos = collect_demos(3, 1.0, &short(), 2).unwrap();
        let d = DemoDataset::from_trajectories(&demos).unwrap();
        let cfg = BcConfig {
            hidden: 32,
            epochs: 15,
            ..BcConfig::default()
        };
        let (net, log) = bc_fit(&d, BcTarget::Options, &cfg).unwrap();
        assert!(log.last().unwrap().loss < log[0].loss);
        assert!(bc_accuracy(&net, &d, BcTarget::Options).unwrap() > 0.8);
        let (again, _) = bc_fit(&d, BcTarget::Options, &cfg).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn match_record_tallies() {
        let m = MatchRecord::from_etas(vec![1, 0, -2, 3]);
        assert_eq!((m.wins, m.losses, m.draws, m.games()), (2, 1, 1, 4));
        assert_eq!(m.win_rate(), 0.5);
        assert_eq!(m.mean_eta(), 0.5);
    }
}
