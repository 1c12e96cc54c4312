//! Ranked trajectory pairs: the pruned full-trajectory pairs used by SPLASH
//! and the noise-ranked snippet pairs of the D-REX baseline.
//!
//! Pairs do not own trajectory data. A [`PairDataset`] stores each
//! downsampled trajectory once and every pair refers to segments of it.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::traj::{downsample, Source, Trajectory};

/// Why a pair is ordered the way it is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Both members are noised rollouts; lower noise ranks higher.
    NoiseRank,
    /// The worse member is a no-op rollout.
    NoopRank,
}

/// Contiguous rows `start..start + len` of a stored trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub traj: usize,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectoryPair {
    pub worse: Segment,
    pub better: Segment,
    pub provenance: Provenance,
}

/// Downsampled trajectories plus the pairs defined over them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairDataset {
    pub trajectories: Vec<Trajectory>,
    pub pairs: Vec<TrajectoryPair>,
}

impl PairDataset {
    pub fn traj(&self, s: &Segment) -> &Trajectory {
        &self.trajectories[s.traj]
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same trajectories, only the listed pairs.
    pub fn subset(&self, idx: &[usize]) -> PairDataset {
        PairDataset {
            trajectories: self.trajectories.clone(),
            pairs: idx.iter().map(|&i| self.pairs[i]).collect(),
        }
    }

    pub fn global_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.global_dim)
    }
}

/// Options for [`build_pairs_splash`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplashPairConfig {
    pub downsample_rate: usize,
    /// Apply the success/score monotonicity filter.
    pub prune: bool,
    /// Rollouts scoring above this are dropped before pairing.
    pub max_eta: Option<i32>,
}

impl Default for SplashPairConfig {
    fn default() -> Self {
        Self {
            downsample_rate: 40,
            prune: true,
            max_eta: Some(2),
        }
    }
}

/// Noise rank of a rollout: its noise level, or past every level for no-op
/// rollouts.
fn noise_key(t: &Trajectory) -> Result<f64> {
    match (t.meta.source, t.meta.eps) {
        (Source::Noop, _) => Ok(f64::INFINITY),
        (_, Some(e)) => Ok(e),
        (s, None) => usage(format!("trajectory {} ({s:?}) carries no noise level", t.meta.id)),
    }
}

/// Groups trajectory indices into bins of equal noise, ordered from least to
/// most noisy.
fn noise_bins(trajs: &[Trajectory], keep: impl Fn(&Trajectory) -> bool) -> Result<Vec<Vec<usize>>> {
    let mut keyed: Vec<(f64, usize)> = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let k = noise_key(t)?;
        if keep(t) {
            keyed.push((k, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut bins: Vec<Vec<usize>> = Vec::new();
    let mut last = None;
    for (k, i) in keyed {
        if last != Some(k) {
            bins.push(Vec::new());
            last = Some(k);
        }
        bins.last_mut().expect("bin pushed").push(i);
    }
    Ok(bins)
}

/// True when a candidate pair respects the success and score ordering.
pub fn passes_pruning(worse: &Trajectory, better: &Trajectory) -> bool {
    worse.meta.psi <= better.meta.psi && worse.meta.eta <= better.meta.eta
}

/// Every cross-bin pair of rollouts, the lower-noise member ranked better,
/// filtered by [`passes_pruning`] unless pruning is off. Both members are
/// downsampled and truncated to their common length.
pub fn build_pairs_splash(trajs: &[Trajectory], cfg: &SplashPairConfig) -> Result<PairDataset> {
    let bins = noise_bins(trajs, |t| cfg.max_eta.is_none_or(|m| t.meta.eta <= m))?;
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut out = PairDataset::default();
    for bin in &bins {
        for &i in bin {
            slot.insert(i, out.trajectories.len());
            out.trajectories.push(downsample(&trajs[i], cfg.downsample_rate)?.without_obs());
        }
    }
    for (a, better_bin) in bins.iter().enumerate() {
        for worse_bin in &bins[a + 1..] {
            for &b in better_bin {
                for &w in worse_bin {
                    if cfg.prune && !passes_pruning(&trajs[w], &trajs[b]) {
                        continue;
                    }
                    let (sb, sw) = (slot[&b], slot[&w]);
                    let len = out.trajectories[sb].len().min(out.trajectories[sw].len());
                    out.pairs.push(TrajectoryPair {
                        worse: Segment { traj: sw, start: 0, len },
                        better: Segment { traj: sb, start: 0, len },
                        provenance: provenance(&trajs[w]),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn provenance(worse: &Trajectory) -> Provenance {
    if worse.meta.source == Source::Noop {
        Provenance::NoopRank
    } else {
        Provenance::NoiseRank
    }
}

/// Number of SPLASH candidates before pruning: the sum over bin pairs of the
/// product of bin sizes, after the score discard.
pub fn unpruned_pair_count(trajs: &[Trajectory], max_eta: Option<i32>) -> Result<usize> {
    let sizes: Vec<usize> = noise_bins(trajs, |t| max_eta.is_none_or(|m| t.meta.eta <= m))?
        .iter()
        .map(Vec::len)
        .collect();
    let total: usize = sizes.iter().sum();
    let squares: usize = sizes.iter().map(|s| s * s).sum();
    Ok((total * total - squares) / 2)
}

/// Noise-ranked snippet pairs: two distinct bins and one rollout from each
/// are drawn uniformly, then equal-length snippets whose better start is no
/// earlier than the worse start. Sampled with replacement.
pub fn build_pairs_drex(
    trajs: &[Trajectory],
    n_pairs: usize,
    snippet_len: usize,
    downsample_rate: usize,
    seed: u64,
) -> Result<PairDataset> {
    if snippet_len == 0 {
        return usage("snippet length must be positive");
    }
    let bins = noise_bins(trajs, |_| true)?;
    if bins.len() < 2 {
        return usage("need rollouts from at least two noise levels");
    }
    let mut out = PairDataset::default();
    let mut slot = vec![0; trajs.len()];
    for bin in &bins {
        for &i in bin {
            slot[i] = out.trajectories.len();
            out.trajectories.push(downsample(&trajs[i], downsample_rate)?.without_obs());
        }
    }
    let shortest = out.trajectories.iter().map(Trajectory::len).min().unwrap_or(0);
    if snippet_len > shortest {
        return usage(format!(
            "snippet length {snippet_len} exceeds the shortest downsampled trajectory ({shortest})"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_pairs {
        let a = rng.gen_range(0..bins.len());
        let mut b = rng.gen_range(0..bins.len() - 1);
        if b >= a {
            b += 1;
        }
        let (better_bin, worse_bin) = (a.min(b), a.max(b));
        let bi = *bins[better_bin].choose(&mut rng).expect("non-empty bin");
        let wi = *bins[worse_bin].choose(&mut rng).expect("non-empty bin");
        let (sb, sw) = (slot[bi], slot[wi]);
        let (lb, lw) = (out.trajectories[sb].len(), out.trajectories[sw].len());
        let worse_start = rng.gen_range(0..=lb.min(lw) - snippet_len);
        let better_start = rng.gen_range(worse_start..=lb - snippet_len);
        out.pairs.push(TrajectoryPair {
            worse: Segment {
                traj: sw,
                start: worse_start,
                len: snippet_len,
            },
            better: Segment {
                traj: sb,
                start: better_start,
                len: snippet_len,
            },
            provenance: provenance(&trajs[wi]),
        });
    }
    Ok(out)
}

/// Seeded shuffle, then the first `round(fraction * n)` items train.
pub fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return usage(format!("split fraction {fraction} outside (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * items.len() as f64).round() as usize;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
}

/// Keeps a seeded random subset of at most `max` pairs, in original order.
pub fn subsample(data: PairDataset, max: usize, seed: u64) -> PairDataset {
    if data.pairs.len() <= max {
        return data;
    }
    let mut idx: Vec<usize> = (0..data.pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(max);
    idx.sort_unstable();
    PairDataset {
        pairs: idx.iter().map(|&i| data.pairs[i]).collect(),
        trajectories: data.trajectories,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairLine {
    worse_id: u64,
    better_id: u64,
    provenance: Provenance,
    worse_start: usize,
    better_start: usize,
    len: usize,
}

/// Writes one pair per line, members referenced by trajectory id.
pub fn write_pairs(path: &Path, data: &PairDataset) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for p in &data.pairs {
        let line = PairLine {
            worse_id: data.traj(&p.worse).meta.id,
            better_id: data.traj(&p.better).meta.id,
            provenance: p.provenance,
            worse_start: p.worse.start,
            better_start: p.better.start,
            len: p.worse.len,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pair file against the rollouts it was built from. Only the
/// referenced trajectories are kept, downsampled at `downsample_rate`.
pub fn read_pairs(path: &Path, rollouts: &[Trajectory], downsample_rate: usize) -> Result<PairDataset> {
    let by_id: HashMap<u64, usize> = rollouts.iter().enumerate().map(|(i, t)| (t.meta.id, i)).collect();
    let mut slot: HashMap<u64, usize> = HashMap::new();
    let mut out = PairDataset::default();
    let mut resolve = |id: u64, out: &mut PairDataset| -> Result<usize> {
        if let Some(&s) = slot.get(&id) {
            return Ok(s);
        }
        let &i = by_id
            .get(&id)
            .ok_or_else(|| Error::Format(format!("pair references unknown trajectory id {id}")))?;
        out.trajectories.push(downsample(&rollouts[i], downsample_rate)?.without_obs());
        slot.insert(id, out.trajectories.len() - 1);
        Ok(out.trajectories.len() - 1)
    };
    for (n, line) in BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PairLine = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), n + 1)))?;
        let worse = resolve(p.worse_id, &mut out)?;
        let better = resolve(p.better_id, &mut out)?;
        for (s, start) in [(worse, p.worse_start), (better, p.better_start)] {
            if start + p.len > out.trajectories[s].len() {
                return Err(Error::Format(format!("{} line {}: segment out of range", path.display(), n + 1)));
            }
        }
        out.pairs.push(TrajectoryPair {
            worse: Segment { traj: worse, start: p.worse_start, len: p.len },
            better: Segment { traj: better, start: p.better_start, len: p.len },
            provenance: p.provenance,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::TrajMeta;

    fn fake(id: u64, eps: Option<f64>, eta: i32, len: usize) -> Trajectory {
        Trajectory {
            meta: TrajMeta {
                id,
                eps,
                eta,
                psi: eta.signum() as i8,
                len,
                source: if eps.is_some() { Source::Rollout } else { Source::Noop },
                ..TrajMeta::default()
            },
            ticks: (0..len as u64).collect(),
            global_dim: 1,
            global: (0..len).map(|i| i as f32).collect(),
            ..Trajectory::default()
        }
    }

    #[test]
    fn pruning_rejects_inverted_scores() {
        let better = fake(0, Some(0.5), 1, 10);
        let worse = fake(1, Some(1.0), 3, 10);
        let trajs = vec![better, worse];
        let cfg = SplashPairConfig { max_eta: None, downsample_rate: 1, prune: true };
        assert!(build_pairs_splash(&trajs, &cfg).unwrap().is_empty());
        let trajs = vec![fake(0, Some(0.5), -1, 10), fake(1, Some(1.0), 1, 10)];
        assert!(build_pairs_splash(&trajs, &cfg).unwrap().is_empty());
        let unpruned = SplashPairConfig { prune: false, ..cfg };
        assert_eq!(build_pairs_splash(&trajs, &unpruned).unwrap().len(), 1);
    }

    #[test]
    fn lower_noise_is_better_and_noop_ranks_last() {
        let trajs = vec![fake(0, None, -1, 8), fake(1, Some(1.0), -1, 12), fake(2, Some(0.5), 0, 10)];
        let d = build_pairs_splash(&trajs, &SplashPairConfig { downsample_rate: 1, ..Default::default() }).unwrap();
        let ranks: Vec<(u64, u64, Provenance)> = d
            .pairs
            .iter()
            .map(|p| (d.traj(&p.worse).meta.id, d.traj(&p.better).meta.id, p.provenance))
            .collect();
        assert_eq!(
            ranks,
            vec![
                (1, 2, Provenance::NoiseRank),
                (0, 2, Provenance::NoopRank),
                (0, 1, Provenance::NoopRank),
            ]
        );
        for p in &d.pairs {
            assert_eq!(p.worse.len, p.better.len);
        }
        assert_eq!(d.pairs[1].worse.len, 8);
    }

    #[test]
    fn high_scores_are_discarded_before_pairing() {
        let trajs = vec![fake(0, Some(0.5), 3, 5), fake(1, Some(0.67), 0, 5), fake(2, Some(0.83), 0, 5)];
        let d = build_pairs_splash(&trajs, &SplashPairConfig { downsample_rate: 1, ..Default::default() }).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.trajectories.len(), 2);
        assert_eq!(unpruned_pair_count(&trajs, Some(2)).unwrap(), 1);
        assert_eq!(unpruned_pair_count(&trajs, None).unwrap(), 3);
    }

    #[test]
    fn unlabeled_rollouts_are_refused() {
        let mut t = fake(0, None, 0, 5);
        t.meta.source = Source::Demo;
        assert!(build_pairs_splash(&[t], &SplashPairConfig::default()).is_err());
    }

    #[test]
    fn drex_snippets_respect_start_order() {
        let trajs: Vec<Trajectory> = (0..6)
            .map(|i| fake(i, [Some(0.5), Some(1.0), None][i as usize % 3], 0, 30 + i as usize))
            .collect();
        let d = build_pairs_drex(&trajs, 500, 7, 1, 3).unwrap();
        assert_eq!(d.len(), 500);
        for p in &d.pairs {
            assert!(p.better.start >= p.worse.start);
            assert_eq!((p.worse.len, p.better.len), (7, 7));
            assert!(p.better.start + 7 <= d.traj(&p.better).len());
            assert!(p.worse.start + 7 <= d.traj(&p.worse).len());
            let (w, b) = (d.traj(&p.worse), d.traj(&p.better));
            assert!(noise_key(w).unwrap() > noise_key(b).unwrap());
        }
        assert_eq!(d, build_pairs_drex(&trajs, 500, 7, 1, 3).unwrap());
        assert!(build_pairs_drex(&trajs, 5, 31, 1, 3).is_err());
    }

    #[test]
    fn split_partitions() {
        let items: Vec<usize> = (0..100).collect();
        let (a, b) = split(&items, 0.8, 1).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, 0.8, 1).unwrap().0, a);
        assert!(split(&items, 1.0, 1).is_err());
    }

    #[test]
    fn pair_file_round_trip() {
        let trajs: Vec<Trajectory> = (0..4).map(|i| fake(i + 10, Some([0.5, 1.0][i as usize % 2]), 0, 9)).collect();
        let d = build_pairs_drex(&trajs, 20, 3, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.jsonl");
        write_pairs(&p, &d).unwrap();
        let back = read_pairs(&p, &trajs, 2).unwrap();
        assert_eq!(back.len(), d.len());
        for (x, y) in d.pairs.iter().zip(&back.pairs) {
            assert_eq!(d.traj(&x.worse).meta.id, back.traj(&y.worse).meta.id);
            assert_eq!(d.traj(&x.better).meta.id, back.traj(&y.better).meta.id);
            assert_eq!((x.worse.start, x.better.start, x.worse.len), (y.worse.start, y.better.start, y.worse.len));
        }
    }
}
