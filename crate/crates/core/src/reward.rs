//! The reward-learning objective and its training loop.
//!
//! The loss of a pair combines
//! - a Bradley–Terry preference term on the summed rewards of the two members,
//! - initial-versus-final state comparisons weighted by each member's
//!   outcome sign, and
//! - first- and second-difference penalties that keep the per-state reward
//!   smooth along a trajectory.
//!
//! All terms are written as functions of per-state rewards with analytic
//! derivatives; the network gradient then comes from one backward pass over
//! every state in the batch.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::neuro::{Activation, AdamState, DenseNet, Gradients, Head, Real};
use crate::options::NoiseSchedule;
use crate::pairs::{build_pairs_drex, build_pairs_splash, split, subsample, PairDataset, Segment, SplashPairConfig, TrajectoryPair};
use crate::traj::Trajectory;
use crate::seed::derive_seed;

/// Which pair builder feeds training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Splash,
    Drex,
}

/// Components switched off for ablation studies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    pub no_prune: bool,
    pub no_if: bool,
    pub no_dr: bool,
}

impl Ablations {
    pub fn parse(name: &str) -> Result<Self> {
        let mut a = Ablations::default();
        match name {
            "full" | "none" => {}
            "no_prune" => a.no_prune = true,
            "no_if" => a.no_if = true,
            "no_dr" => a.no_dr = true,
            other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
        Ok(a)
    }

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.no_prune {
            parts.push("no_prune");
        }
        if self.no_if {
            parts.push("no_if");
        }
        if self.no_dr {
            parts.push("no_dr");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_if: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub schedule: NoiseSchedule,
    pub rollouts_per_level: usize,
    pub downsample_rate: usize,
    pub split_fraction: f64,
    pub mode: Mode,
    pub ablations: Ablations,
    /// Seeded cap on the number of pairs kept after construction.
    pub max_pairs: Option<usize>,
    /// Snippet pairs drawn in D-REX mode.
    pub drex_pairs: usize,
    /// D-REX snippet length in downsampled states.
    pub snippet_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 20.0,
            lambda_if: 4.0,
            lr: 1e-5,
            batch_size: 32,
            epochs: 10,
            hidden: 256,
            schedule: NoiseSchedule::default(),
            rollouts_per_level: 100,
            downsample_rate: 40,
            split_fraction: 0.8,
            mode: Mode::Splash,
            ablations: Ablations::default(),
            max_pairs: None,
            drex_pairs: 256_000,
            snippet_len: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda1, self.lambda2, self.lambda_if].iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("regularisation coefficients must be non-negative".into()));
        }
        if self.batch_size < 1 || self.hidden < 1 || self.downsample_rate < 1 || self.rollouts_per_level < 1 {
            return Err(Error::Config(
                "batch size, hidden width, downsample rate and rollouts per level must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Effective term weights after the mode and ablation switches.
    pub fn weights(&self) -> LossWeights {
        let splash = self.mode == Mode::Splash;
        let dr = splash && !self.ablations.no_dr;
        LossWeights {
            lambda_if: if splash && !self.ablations.no_if { self.lambda_if } else { 0.0 },
            lambda1: if dr { self.lambda1 } else { 0.0 },
            lambda2: if dr { self.lambda2 } else { 0.0 },
        }
    }
}

/// Weights of the auxiliary terms; a zero weight removes the term entirely.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_if: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub const PBIRL_ONLY: LossWeights = LossWeights {
        lambda_if: 0.0,
        lambda1: 0.0,
        lambda2: 0.0,
    };
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Preference loss given the summed rewards of the two members.
pub fn pbirl_from_returns(sum_worse: f64, sum_better: f64) -> f64 {
    softplus(sum_worse - sum_better)
}

/// One initial-versus-final comparison: the final state of a trajectory with
/// outcome sign `psi_final` against an initial state.
pub fn phi(r_initial: f64, r_final: f64, psi_final: i8) -> f64 {
    f64::from(psi_final) * softplus(r_initial - r_final)
}

/// Sums of absolute first and second differences of one reward sequence.
pub fn difference_sums(r: &[f64]) -> (f64, f64) {
    let d1 = r.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    let d2 = r.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).sum();
    (d1, d2)
}

/// Per-term values of a pair's loss. `if_term` and `dr` are already weighted,
/// so `total = pbirl + if_term + dr`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairLoss {
    pub pbirl: f64,
    pub if_term: f64,
    pub dr: f64,
    pub total: f64,
    pub correct: bool,
}

/// Rewards of every stored state of a pair's two trajectories, with outcome
/// signs. The loss reads segment rows plus each trajectory's first segment
/// row and its true final row.
pub struct PairRewards<'a> {
    pub worse: &'a [f64],
    pub better: &'a [f64],
    pub worse_seg: Segment,
    pub better_seg: Segment,
    pub psi_worse: i8,
    pub psi_better: i8,
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of one pair and, optionally, its derivative with respect to every
/// reward (accumulated, scaled by `scale`, into `grad_worse`/`grad_better`).
pub fn pair_loss(
    r: &PairRewards,
    w: &LossWeights,
    grads: Option<(&mut [f64], &mut [f64])>,
    scale: f64,
) -> Result<PairLoss> {
    let (ws, bs) = (r.worse_seg, r.better_seg);
    if ws.len != bs.len {
        return usage("pair members have different lengths");
    }
    let (rw, rb) = (&r.worse[ws.rows()], &r.better[bs.rows()]);
    if rw.iter().chain(rb).any(|v| !v.is_finite()) {
        return Err(Error::Training("non-finite reward".into()));
    }
    let (sum_w, sum_b): (f64, f64) = (rw.iter().sum(), rb.iter().sum());
    let mut out = PairLoss {
        pbirl: pbirl_from_returns(sum_w, sum_b),
        correct: sum_b > sum_w,
        ..PairLoss::default()
    };
    let mut gw = vec![0.0; r.worse.len()];
    let mut gb = vec![0.0; r.better.len()];
    let s = sigmoid(sum_w - sum_b);
    gw[ws.rows()].iter_mut().for_each(|g| *g += s);
    gb[bs.rows()].iter_mut().for_each(|g| *g -= s);

    if w.lambda_if > 0.0 {
        let (iw, ib) = (ws.start, bs.start);
        let (fw, fb) = (r.worse.len() - 1, r.better.len() - 1);
        if !(r.worse[fw].is_finite() && r.better[fb].is_finite()) {
            return Err(Error::Training("non-finite reward".into()));
        }
        // (initial row owner, initial row, final row owner, final row, psi of final owner)
        let terms = [
            (0, iw, 1, fb, r.psi_better),
            (1, ib, 0, fw, r.psi_worse),
            (0, iw, 0, fw, r.psi_worse),
            (1, ib, 1, fb, r.psi_better),
        ];
        let mut l_if = 0.0;
        for (oi, i, of, f, psi) in terms {
            let ri = if oi == 0 { r.worse[i] } else { r.better[i] };
            let rf = if of == 0 { r.worse[f] } else { r.better[f] };
            l_if += phi(ri, rf, psi);
            let d = w.lambda_if * f64::from(psi) * sigmoid(ri - rf);
            (if oi == 0 { &mut gw } else { &mut gb })[i] += d;
            (if of == 0 { &mut gw } else { &mut gb })[f] -= d;
        }
        out.if_term = w.lambda_if * l_if;
    }

    if w.lambda1 > 0.0 || w.lambda2 > 0.0 {
        if ws.len < 3 {
            return usage(format!("smoothness terms need members of at least 3 states, got {}", ws.len));
        }
        let n = (ws.len + bs.len) as f64;
        let (c1, c2) = (w.lambda1 / (n - 2.0), w.lambda2 / (n - 4.0));
        let (w1, w2) = difference_sums(rw);
        let (b1, b2) = difference_sums(rb);
        out.dr = c1 * (w1 + b1) + c2 * (w2 + b2);
        for (seq, g, start) in [(rw, &mut gw, ws.start), (rb, &mut gb, bs.start)] {
            for t in 0..seq.len() - 1 {
                let d = c1 * sgn(seq[t + 1] - seq[t]);
                g[start + t + 1] += d;
                g[start + t] -= d;
            }
            for t in 0..seq.len() - 2 {
                let d = c2 * sgn(seq[t + 2] - 2.0 * seq[t + 1] + seq[t]);
                g[start + t + 2] += d;
                g[start + t + 1] -= 2.0 * d;
                g[start + t] += d;
            }
        }
    }

    out.total = out.pbirl + out.if_term + out.dr;
    if !out.total.is_finite() {
        return Err(Error::Training("non-finite pair loss".into()));
    }
    if let Some((dw, db)) = grads {
        dw.iter_mut().zip(&gw).for_each(|(a, g)| *a += scale * g);
        db.iter_mut().zip(&gb).for_each(|(a, g)| *a += scale * g);
    }
    Ok(out)
}

/// Rewards of every row of every listed trajectory, in one forward pass per
/// chunk of rows.
pub fn trajectory_rewards<T: Real>(net: &DenseNet<T>, data: &PairDataset, trajs: &[usize]) -> Result<Vec<Vec<f64>>> {
    let dim = data.global_dim();
    let mut out = Vec::with_capacity(trajs.len());
    for group in trajs.chunks(64) {
        let x = stack_rows::<T>(data, group, dim);
        let r = net.outputs(x.view())?;
        let mut row = 0;
        for &t in group {
            let n = data.trajectories[t].len();
            out.push((row..row + n).map(|i| r[[i, 0]].f64()).collect());
            row += n;
        }
    }
    Ok(out)
}

fn stack_rows<T: Real>(data: &PairDataset, trajs: &[usize], dim: usize) -> Array2<T> {
    let rows: usize = trajs.iter().map(|&t| data.trajectories[t].len()).sum();
    let mut flat = Vec::with_capacity(rows * dim);
    for &t in trajs {
        flat.extend(data.trajectories[t].global.iter().map(|&v| T::of(v as f64)));
    }
    Array2::from_shape_vec((rows, dim), flat).expect("row-major stack")
}

fn pair_rewards<'a>(data: &PairDataset, p: &TrajectoryPair, rw: &'a [f64], rb: &'a [f64]) -> PairRewards<'a> {
    PairRewards {
        worse: rw,
        better: rb,
        worse_seg: p.worse,
        better_seg: p.better,
        psi_worse: data.traj(&p.worse).meta.psi,
        psi_better: data.traj(&p.better).meta.psi,
    }
}

/// Loss terms of a single pair under the given weights.
pub fn evaluate_pair<T: Real>(
    net: &DenseNet<T>,
    data: &PairDataset,
    pair: &TrajectoryPair,
    w: &LossWeights,
) -> Result<PairLoss> {
    let r = trajectory_rewards(net, data, &[pair.worse.traj, pair.better.traj])?;
    pair_loss(&pair_rewards(data, pair, &r[0], &r[1]), w, None, 1.0)
}

pub fn loss_pbirl<T: Real>(net: &DenseNet<T>, data: &PairDataset, pair: &TrajectoryPair) -> Result<f64> {
    Ok(evaluate_pair(net, data, pair, &LossWeights::PBIRL_ONLY)?.pbirl)
}

/// The unweighted sum of the four initial/final comparisons.
pub fn loss_if<T: Real>(net: &DenseNet<T>, data: &PairDataset, pair: &TrajectoryPair) -> Result<f64> {
    let w = LossWeights {
        lambda_if: 1.0,
        ..LossWeights::PBIRL_ONLY
    };
    Ok(evaluate_pair(net, data, pair, &w)?.if_term)
}

pub fn loss_dr<T: Real>(
    net: &DenseNet<T>,
    data: &PairDataset,
    pair: &TrajectoryPair,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let w = LossWeights {
        lambda_if: 0.0,
        lambda1,
        lambda2,
    };
    let s = pair.worse.len.min(pair.better.len);
    if s < 3 {
        return usage(format!("smoothness terms need members of at least 3 states, got {s}"));
    }
    Ok(evaluate_pair(net, data, pair, &w)?.dr)
}

pub fn loss_total<T: Real>(net: &DenseNet<T>, data: &PairDataset, pair: &TrajectoryPair, cfg: &TrainConfig) -> Result<f64> {
    Ok(evaluate_pair(net, data, pair, &cfg.weights())?.total)
}

/// Sums over a batch of pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchStats {
    pub n: usize,
    pub total: f64,
    pub pbirl: f64,
    pub if_term: f64,
    pub dr: f64,
    pub correct: usize,
}

impl BatchStats {
    fn add(&mut self, l: &PairLoss) {
        self.n += 1;
        self.total += l.total;
        self.pbirl += l.pbirl;
        self.if_term += l.if_term;
        self.dr += l.dr;
        self.correct += usize::from(l.correct);
    }
}

/// Mean loss over `pairs` and its gradient with respect to the parameters.
pub fn batch_gradient<T: Real>(
    net: &DenseNet<T>,
    data: &PairDataset,
    pairs: &[TrajectoryPair],
    w: &LossWeights,
) -> Result<(BatchStats, Gradients<T>)> {
    if pairs.is_empty() {
        return usage("empty batch");
    }
    // Only the rows some pair reads are evaluated: per trajectory, the span
    // covering its segments plus, for the initial/final terms, the final row.
    struct Block {
        traj: usize,
        lo: usize,
        hi: usize,
        final_row: bool,
        offset: usize,
    }
    let need_final = w.lambda_if > 0.0;
    let mut blocks: Vec<Block> = Vec::new();
    for p in pairs {
        for s in [p.worse, p.better] {
            match blocks.iter_mut().find(|b| b.traj == s.traj) {
                Some(b) => {
                    b.lo = b.lo.min(s.start);
                    b.hi = b.hi.max(s.start + s.len);
                }
                None => blocks.push(Block {
                    traj: s.traj,
                    lo: s.start,
                    hi: s.start + s.len,
                    final_row: false,
                    offset: 0,
                }),
            }
        }
    }
    let dim = data.global_dim();
    let mut flat: Vec<T> = Vec::new();
    let mut rows = 0;
    for b in &mut blocks {
        let t = &data.trajectories[b.traj];
        b.final_row = need_final && b.hi < t.len();
        b.offset = rows;
        flat.extend(t.global[b.lo * dim..b.hi * dim].iter().map(|&v| T::of(v as f64)));
        if b.final_row {
            flat.extend(t.global_row(t.len() - 1).iter().map(|&v| T::of(v as f64)));
        }
        rows += b.hi - b.lo + usize::from(b.final_row);
    }
    let x = Array2::from_shape_vec((rows, dim), flat).expect("row-major stack");
    let tape = net.forward_tape(x)?;
    let out: Vec<f64> = tape.output.column(0).iter().map(|v| v.f64()).collect();
    // Maps a trajectory row to its stacked row.
    let locate = |b: &Block, r: usize| -> Option<usize> {
        if (b.lo..b.hi).contains(&r) {
            Some(b.offset + r - b.lo)
        } else if b.final_row && r == data.trajectories[b.traj].len() - 1 {
            Some(b.offset + b.hi - b.lo)
        } else {
            None
        }
    };
    let expand = |b: &Block| -> Vec<f64> {
        (0..data.trajectories[b.traj].len())
            .map(|r| locate(b, r).map_or(0.0, |i| out[i]))
            .collect()
    };
    let mut d = vec![0.0; rows];
    let scale = 1.0 / pairs.len() as f64;
    let mut stats = BatchStats::default();
    for (k, p) in pairs.iter().enumerate() {
        let bw = blocks.iter().find(|b| b.traj == p.worse.traj).expect("collected above");
        let bb = blocks.iter().find(|b| b.traj == p.better.traj).expect("collected above");
        let (rw, rb) = (expand(bw), expand(bb));
        let mut gw = vec![0.0; rw.len()];
        let mut gb = vec![0.0; rb.len()];
        let l = pair_loss(&pair_rewards(data, p, &rw, &rb), w, Some((&mut gw, &mut gb)), scale).map_err(|e| match e {
            Error::Training(m) => Error::Training(format!(
                "{m} in batch pair {k} (worse trajectory id {}, better id {})",
                data.traj(&p.worse).meta.id,
                data.traj(&p.better).meta.id
            )),
            other => other,
        })?;
        for (b, g) in [(bw, &gw), (bb, &gb)] {
            for (r, &gr) in g.iter().enumerate() {
                if gr != 0.0 {
                    d[locate(b, r).expect("gradient only on evaluated rows")] += gr;
                }
            }
        }
        stats.add(&l);
    }
    let d_out = Array2::from_shape_vec((rows, 1), d.into_iter().map(T::of).collect()).expect("column");
    Ok((stats, net.backward(&tape, d_out.view())))
}

/// Fraction of pairs whose better member has the larger summed reward.
pub fn preference_accuracy<T: Real>(net: &DenseNet<T>, data: &PairDataset, pairs: &[usize]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut used: Vec<usize> = pairs
        .iter()
        .flat_map(|&i| [data.pairs[i].worse.traj, data.pairs[i].better.traj])
        .collect();
    used.sort_unstable();
    used.dedup();
    let rewards = trajectory_rewards(net, data, &used)?;
    let of = |s: &Segment| -> f64 {
        let k = used.binary_search(&s.traj).expect("collected above");
        rewards[k][s.rows()].iter().sum()
    };
    let correct = pairs
        .iter()
        .filter(|&&i| of(&data.pairs[i].better) > of(&data.pairs[i].worse))
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub pbirl: f64,
    #[serde(rename = "if")]
    pub if_term: f64,
    pub dr: f64,
}

/// Initial reward network: ReLU hidden layers and a scalar head.
pub fn init_reward_net<T: Real>(input: usize, hidden: usize, seed: u64) -> Result<DenseNet<T>> {
    DenseNet::new(&[input, hidden, hidden, 1], Activation::Relu, Head::Scalar, seed)
}

/// Adam over shuffled minibatches of the `train` pairs for `cfg.epochs`
/// epochs; the final-epoch network is returned along with per-epoch logs.
pub fn train_reward<T: Real>(
    data: &PairDataset,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DenseNet<T>, Vec<EpochLog>)> {
    cfg.validate()?;
    if train.is_empty() {
        return usage("no training pairs");
    }
    let mut net = init_reward_net::<T>(data.global_dim(), cfg.hidden, derive_seed(seed, &[0]))?;
    let mut adam = AdamState::new(&net, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let weights = cfg.weights();
    let mut order = train.to_vec();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = BatchStats::default();
        for batch in order.chunks(cfg.batch_size) {
            let pairs: Vec<TrajectoryPair> = batch.iter().map(|&i| data.pairs[i]).collect();
            let (stats, grads) = batch_gradient(&net, data, &pairs, &weights)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            adam.update(&mut net, &grads)
                .map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            sum.n += stats.n;
            sum.total += stats.total;
            sum.pbirl += stats.pbirl;
            sum.if_term += stats.if_term;
            sum.dr += stats.dr;
            sum.correct += stats.correct;
        }
        let n = sum.n as f64;
        log.push(EpochLog {
            epoch,
            train_loss: sum.total / n,
            train_acc: sum.correct as f64 / n,
            val_acc: preference_accuracy(&net, data, val)?,
            pbirl: sum.pbirl / n,
            if_term: sum.if_term / n,
            dr: sum.dr / n,
        });
    }
    Ok((net, log))
}

/// Pairs for the configured mode from a set of rollouts.
pub fn build_pairs(rollouts: &[Trajectory], cfg: &TrainConfig, seed: u64) -> Result<PairDataset> {
    let data = match cfg.mode {
        Mode::Splash => build_pairs_splash(
            rollouts,
            &SplashPairConfig {
                downsample_rate: cfg.downsample_rate,
                prune: !cfg.ablations.no_prune,
                max_eta: Some(2),
            },
        )?,
        Mode::Drex => build_pairs_drex(rollouts, cfg.drex_pairs, cfg.snippet_len, cfg.downsample_rate, seed)?,
    };
    Ok(match cfg.max_pairs {
        Some(m) => subsample(data, m, derive_seed(seed, &[1])),
        None => data,
    })
}

/// A trained reward model with its provenance.
#[derive(Clone, Debug)]
pub struct FittedReward<T: Real = f32> {
    pub net: DenseNet<T>,
    pub log: Vec<EpochLog>,
    pub n_train: usize,
    pub n_val: usize,
}

/// Splits a pair dataset and trains on it.
pub fn fit_reward<T: Real>(data: &PairDataset, cfg: &TrainConfig, seed: u64) -> Result<FittedReward<T>> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (train, val) = split(&idx, cfg.split_fraction, derive_seed(seed, &[2]))?;
    let (net, log) = train_reward(data, &train, &val, cfg, derive_seed(seed, &[3]))?;
    Ok(FittedReward {
        net,
        log,
        n_train: train.len(),
        n_val: val.len(),
    })
}
