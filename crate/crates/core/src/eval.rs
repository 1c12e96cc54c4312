//! Evaluating learned rewards: return extrapolation, per-tick traces around
//! captures, smoothness and the ablation table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Result};
use crate::neuro::{DenseNet, Real};
use crate::sim::{CaptureEvent, Team};
use crate::traj::Trajectory;

/// Per-tick rewards over every stored global state.
pub fn step_rewards<T: Real>(net: &DenseNet<T>, traj: &Trajectory) -> Result<Vec<f64>> {
    let dim = traj.global_dim;
    let mut out = Vec::with_capacity(traj.len());
    for chunk in traj.global.chunks(4096 * dim.max(1)) {
        let x = Array2::from_shape_vec((chunk.len() / dim, dim), chunk.iter().map(|&v| T::of(v as f64)).collect())
            .expect("whole rows");
        out.extend(net.outputs(x.view())?.column(0).iter().map(|v| v.f64()));
    }
    Ok(out)
}

/// Mean per-state reward over the full-resolution trajectory.
pub fn predicted_return<T: Real>(net: &DenseNet<T>, traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return usage("cannot score an empty trajectory");
    }
    let r = step_rewards(net, traj)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSet {
    Train,
    Demo,
    Extrapolation,
}

impl EvalSet {
    pub fn name(self) -> &'static str {
        match self {
            EvalSet::Train => "train",
            EvalSet::Demo => "demo",
            EvalSet::Extrapolation => "extrapolation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapRecord {
    pub id: u64,
    pub set: EvalSet,
    pub eps: Option<f64>,
    pub eta: i32,
    pub predicted: f64,
    /// Prediction mapped onto the pooled ground-truth range.
    pub normalized: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapSummary {
    pub pearson: f64,
    pub spearman: f64,
    /// Mean absolute deviation of normalized prediction from ground truth.
    pub mad: BTreeMap<EvalSet, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationReport {
    pub records: Vec<ExtrapRecord>,
    pub summary: ExtrapSummary,
}

impl ExtrapolationReport {
    /// Plot-ready table: one line per trajectory.
    pub fn table(&self) -> String {
        let mut s = String::from("id\tset\teps\teta\tpredicted\tnormalized\n");
        for r in &self.records {
            let eps = r.eps.map_or("-".to_string(), |e| format!("{e}"));
            let _ = writeln!(s, "{}\t{}\t{eps}\t{}\t{:.6}\t{:.6}", r.id, r.set.name(), r.eta, r.predicted, r.normalized);
        }
        s
    }
}

/// Affine map of `values` onto `[lo, hi]`; constant inputs map to the midpoint.
pub fn affine_to_range(values: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![(lo + hi) / 2.0; values.len()];
    }
    values.iter().map(|v| lo + (v - min) * (hi - lo) / (max - min)).collect()
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// 1-based ranks, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie correction.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Scores every trajectory, maps predictions onto the pooled ground-truth
/// range and correlates them with the true scores.
pub fn extrapolation_report<T: Real>(
    net: &DenseNet<T>,
    train: &[Trajectory],
    demo: &[Trajectory],
    extrap: &[Trajectory],
) -> Result<ExtrapolationReport> {
    let sets = [(EvalSet::Train, train), (EvalSet::Demo, demo), (EvalSet::Extrapolation, extrap)];
    let total: usize = sets.iter().map(|(_, t)| t.len()).sum();
    if total < 3 {
        return usage(format!("need at least 3 trajectories to correlate, got {total}"));
    }
    let mut records = Vec::with_capacity(total);
    for (set, trajs) in sets {
        for t in trajs {
            records.push(ExtrapRecord {
                id: t.meta.id,
                set,
                eps: t.meta.eps,
                eta: t.meta.eta,
                predicted: predicted_return(net, t)?,
                normalized: 0.0,
            });
        }
    }
    let eta: Vec<f64> = records.iter().map(|r| f64::from(r.eta)).collect();
    let pred: Vec<f64> = records.iter().map(|r| r.predicted).collect();
    let lo = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for (r, n) in records.iter_mut().zip(affine_to_range(&pred, lo, hi)) {
        r.normalized = n;
    }
    let mut mad: BTreeMap<EvalSet, (f64, usize)> = BTreeMap::new();
    for r in &records {
        let e = mad.entry(r.set).or_default();
        e.0 += (r.normalized - f64::from(r.eta)).abs();
        e.1 += 1;
    }
    let summary = ExtrapSummary {
        pearson: pearson(&pred, &eta),
        spearman: spearman(&pred, &eta),
        mad: mad.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    };
    Ok(ExtrapolationReport { records, summary })
}

/// Per-tick reward of one game, shifted to start at zero, with capture marks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub id: u64,
    pub ticks: Vec<u64>,
    pub reward: Vec<f64>,
    pub captures: Vec<CaptureEvent>,
}

pub fn reward_trace<T: Real>(net: &DenseNet<T>, traj: &Trajectory) -> Result<RewardTrace> {
    let mut reward = step_rewards(net, traj)?;
    if let Some(&r0) = reward.first() {
        reward.iter_mut().for_each(|r| *r -= r0);
    }
    Ok(RewardTrace {
        id: traj.meta.id,
        ticks: traj.ticks.clone(),
        reward,
        captures: traj.meta.captures.clone(),
    })
}

impl RewardTrace {
    /// Columns `tick, reward, event`; the event column names the capturing team.
    pub fn table(&self) -> String {
        let mut s = String::from("tick\treward\tevent\n");
        for (t, r) in self.ticks.iter().zip(&self.reward) {
            let event = self
                .captures
                .iter()
                .find(|c| c.tick == *t)
                .map_or("", |c| match c.team {
                    Team::Blue => "blue_capture",
                    Team::Red => "red_capture",
                });
            let _ = writeln!(s, "{t}\t{r:.6}\t{event}");
        }
        s
    }

    /// Variance of the per-tick first differences; lower is smoother.
    pub fn first_difference_variance(&self) -> f64 {
        let d: Vec<f64> = self.reward.windows(2).map(|w| w[1] - w[0]).collect();
        if d.is_empty() {
            return 0.0;
        }
        let m = d.iter().sum::<f64>() / d.len() as f64;
        d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / d.len() as f64
    }

    /// Mean reward over the `window` ticks before and from a capture's tick,
    /// or `None` when either side is empty.
    pub fn around(&self, capture: &CaptureEvent, window: u64) -> Option<(f64, f64)> {
        let mean = |lo: u64, hi: u64| -> Option<f64> {
            let v: Vec<f64> = self
                .ticks
                .iter()
                .zip(&self.reward)
                .filter(|(t, _)| (lo..hi).contains(*t))
                .map(|(_, r)| *r)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        let c = capture.tick;
        Some((mean(c.saturating_sub(window), c)?, mean(c, c + window)?))
    }
}

/// How often the reward moves in the scoring team's favour around captures.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgressStats {
    pub blue_up: usize,
    pub blue_total: usize,
    pub red_down: usize,
    pub red_total: usize,
}

impl ProgressStats {
    pub fn blue_fraction(&self) -> f64 {
        self.blue_up as f64 / self.blue_total.max(1) as f64
    }

    pub fn red_fraction(&self) -> f64 {
        self.red_down as f64 / self.red_total.max(1) as f64
    }
}

pub fn capture_progress(traces: &[RewardTrace], window: u64) -> ProgressStats {
    let mut s = ProgressStats::default();
    for tr in traces {
        for c in &tr.captures {
            let Some((before, after)) = tr.around(c, window) else {
                continue;
            };
            match c.team {
                Team::Blue => {
                    s.blue_total += 1;
                    s.blue_up += usize::from(after > before);
                }
                Team::Red => {
                    s.red_total += 1;
                    s.red_down += usize::from(after < before);
                }
            }
        }
    }
    s
}

/// Mean first-difference variance over a set of traces.
pub fn mean_first_difference_variance(traces: &[RewardTrace]) -> f64 {
    traces.iter().map(RewardTrace::first_difference_variance).sum::<f64>() / traces.len().max(1) as f64
}

/// One line of the ablation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub spearman: f64,
    pub fd_variance: f64,
    pub val_acc: f64,
    pub n_pairs: usize,
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant\tspearman\tfd_variance\tval_acc\tn_pairs\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.4}\t{:.6e}\t{:.4}\t{}",
            r.variant, r.spearman, r.fd_variance, r.val_acc, r.n_pairs
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuro::{Activation, Head};
    use crate::traj::TrajMeta;
    use approx::assert_abs_diff_eq;

    fn constant_net(c: f64) -> DenseNet<f64> {
        let mut net = DenseNet::<f64>::zeros(&[2, 3, 1], Activation::Relu, Head::Scalar).unwrap();
        net.biases_mut()[1][0] = c;
        net
    }

    fn traj(id: u64, eta: i32, rows: &[[f32; 2]]) -> Trajectory {
        Trajectory {
            meta: TrajMeta {
                id,
                eta,
                psi: eta.signum() as i8,
                ..TrajMeta::default()
            },
            ticks: (0..rows.len() as u64).collect(),
            global_dim: 2,
            global: rows.iter().flatten().copied().collect(),
            ..Trajectory::default()
        }
    }

    #[test]
    fn constant_reward_predicts_constant() {
        let net = constant_net(0.75);
        let t = traj(0, 0, &[[0.1, 0.2], [0.3, -0.4], [0.0, 1.0]]);
        assert_abs_diff_eq!(predicted_return(&net, &t).unwrap(), 0.75, epsilon = 1e-12);
        assert!(predicted_return(&net, &traj(1, 0, &[])).is_err());
    }

    #[test]
    fn repeating_states_keeps_the_mean() {
        let net: DenseNet<f64> = DenseNet::new(&[2, 8, 1], Activation::Relu, Head::Scalar, 4).unwrap();
        let rows = [[0.1, 0.2], [0.3, -0.4], [-0.9, 1.0]];
        let doubled: Vec<[f32; 2]> = rows.iter().flat_map(|r| [*r, *r]).collect();
        let a = predicted_return(&net, &traj(0, 0, &rows)).unwrap();
        let b = predicted_return(&net, &traj(0, 0, &doubled)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn affine_map_endpoints() {
        assert_eq!(affine_to_range(&[2.0, 4.0, 6.0], 0.0, 10.0), vec![0.0, 5.0, 10.0]);
        assert_eq!(affine_to_range(&[1.0, 1.0], -2.0, 2.0), vec![0.0, 0.0]);
    }

    #[test]
    fn rank_correlations() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(spearman(&x, &[10.0, 20.0, 25.0, 100.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]), -1.0, epsilon = 1e-12);
        assert_eq!(pearson(&x, &[1.0; 4]), 0.0);
        // Hand-computed: ranks (1,2,3,4) vs (1,3,2,4) -> 1 - 6*2/(4*15) = 0.8.
        assert_abs_diff_eq!(spearman(&x, &[1.0, 3.0, 2.0, 4.0]), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn perfect_predictions_report() {
        // Reward equal to the first feature; each trajectory's feature is its score.
        let mut net = DenseNet::<f64>::zeros(&[2, 2, 1], Activation::Relu, Head::Scalar).unwrap();
        let w = net.params_flat();
        let mut p = w.clone();
        // Layer 0: h0 = relu(x0 + 5); layer 1: out = h0 - 5.
        p[0] = 1.0; // w[0][0,0]
        p[4] = 5.0; // b0[0]
        p[6] = 1.0; // w1[0,0]
        p[8] = -5.0; // b1
        net.set_params_flat(&p).unwrap();
        let ts: Vec<Trajectory> = (-2..=2).map(|e| traj(e as u64, e, &[[e as f32, 0.0]; 3])).collect();
        let r = extrapolation_report(&net, &ts[..2], &ts[2..3], &ts[3..]).unwrap();
        assert_abs_diff_eq!(r.summary.spearman, 1.0, epsilon = 1e-12);
        for m in r.summary.mad.values() {
            assert_abs_diff_eq!(*m, 0.0, epsilon = 1e-9);
        }
        assert!(extrapolation_report(&net, &ts[..1], &ts[1..2], &[]).is_err());
    }

    #[test]
    fn trace_shifts_and_brackets_captures() {
        let mut net = DenseNet::<f64>::zeros(&[2, 2, 1], Activation::Relu, Head::Scalar).unwrap();
        let mut p = net.params_flat();
        p[0] = 1.0;
        p[6] = 1.0;
        p[8] = 0.5;
        net.set_params_flat(&p).unwrap();
        let rows: Vec<[f32; 2]> = (0..100).map(|t| [if t >= 60 { 1.0 } else { 0.0 }, 0.0]).collect();
        let mut t = traj(3, 1, &rows);
        t.meta.captures = vec![
            CaptureEvent { tick: 60, team: Team::Blue },
            CaptureEvent { tick: 99, team: Team::Red },
        ];
        let tr = reward_trace(&net, &t).unwrap();
        assert_eq!(tr.reward[0], 0.0);
        let s = capture_progress(std::slice::from_ref(&tr), 50);
        assert_eq!((s.blue_up, s.blue_total, s.red_down, s.red_total), (1, 1, 0, 1));
        assert!(tr.table().lines().nth(61).unwrap().ends_with("blue_capture"));
        assert!(tr.first_difference_variance() > 0.0);
    }
}
