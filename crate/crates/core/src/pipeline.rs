//! Artifact-level pipeline: each stage reads the artifacts of earlier stages
//! from the data directory, writes its own, and records them in the
//! directory's manifest together with a hash of the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bc::{bc_accuracy, bc_evaluate, bc_fit, collect_demos, BcConfig, BcTarget, DemoDataset, MatchRecord};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_table, capture_progress, extrapolation_report, mean_first_difference_variance, reward_trace,
    AblationRow, ExtrapolationReport, ProgressStats, RewardTrace,
};
use crate::neuro::DenseNet;
use crate::options::{NoiseSchedule, OptionId};
use crate::pairs::{read_pairs, write_pairs};
use crate::reward::{build_pairs, train_reward, Ablations, EpochLog, Mode, TrainConfig};
use crate::seed::derive_seed;
use crate::sim::FieldConfig;
use crate::traj::{generate_level_rollouts, generate_rollouts, read_trajectories, write_trajectories, Trajectory};

/// Every pipeline setting in one flat table. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data_dir: PathBuf,

    pub width_m: f64,
    pub height_m: f64,
    pub tag_radius_m: f64,
    pub grab_radius_m: f64,
    pub max_speed_mps: f64,
    pub tag_cooldown_s: f64,
    pub tick_hz: f64,
    pub team_size: usize,
    pub max_time_s: f64,
    pub max_captures: u32,
    pub demo_max_time_s: f64,
    pub demo_max_captures: u32,

    pub n_demos: usize,
    pub demo_skill: f64,
    pub bc_hidden: usize,
    pub bc_epochs: usize,
    pub bc_batch_size: usize,
    pub bc_lr: f64,

    pub schedule: NoiseSchedule,
    pub rollouts_per_level: usize,
    pub extrap_levels: Vec<f64>,
    pub extrap_per_level: usize,
    pub heldout_games: usize,
    pub heldout_epsilon: f64,
    pub tournament_games: usize,

    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_if: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub hidden: usize,
    pub downsample_rate: usize,
    pub split_fraction: f64,
    pub max_pairs: Option<usize>,
    pub drex_pairs: usize,
    pub snippet_len: usize,

    pub demo_default_option: OptionId,
    pub real_time_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let f = FieldConfig::rollout();
        let d = FieldConfig::demo();
        let t = TrainConfig::default();
        let b = BcConfig::default();
        Self {
            seed: 0,
            data_dir: PathBuf::from("artifacts"),
            width_m: f.width_m,
            height_m: f.height_m,
            tag_radius_m: f.tag_radius_m,
            grab_radius_m: f.grab_radius_m,
            max_speed_mps: f.max_speed_mps,
            tag_cooldown_s: f.tag_cooldown_s,
            tick_hz: f.tick_hz,
            team_size: f.team_size,
            max_time_s: f.max_time_s,
            max_captures: f.max_captures,
            demo_max_time_s: d.max_time_s,
            demo_max_captures: d.max_captures,
            n_demos: 50,
            demo_skill: 0.9,
            bc_hidden: b.hidden,
            bc_epochs: b.epochs,
            bc_batch_size: b.batch_size,
            bc_lr: b.lr,
            schedule: t.schedule,
            rollouts_per_level: t.rollouts_per_level,
            extrap_levels: vec![0.0, 0.17, 0.33],
            extrap_per_level: 20,
            heldout_games: 20,
            heldout_epsilon: 0.0,
            tournament_games: 100,
            lambda1: t.lambda1,
            lambda2: t.lambda2,
            lambda_if: t.lambda_if,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            hidden: t.hidden,
            downsample_rate: t.downsample_rate,
            split_fraction: t.split_fraction,
            max_pairs: t.max_pairs,
            drex_pairs: t.drex_pairs,
            snippet_len: t.snippet_len,
            demo_default_option: OptionId::NoOp,
            real_time_factor: 1.0 / 3.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Field used for rollouts and evaluation games.
    pub fn field(&self) -> FieldConfig {
        FieldConfig {
            width_m: self.width_m,
            height_m: self.height_m,
            tag_radius_m: self.tag_radius_m,
            grab_radius_m: self.grab_radius_m,
            max_speed_mps: self.max_speed_mps,
            tag_cooldown_s: self.tag_cooldown_s,
            tick_hz: self.tick_hz,
            max_time_s: self.max_time_s,
            max_captures: self.max_captures,
            team_size: self.team_size,
        }
    }

    /// Field used while collecting demonstrations.
    pub fn demo_field(&self) -> FieldConfig {
        FieldConfig {
            max_time_s: self.demo_max_time_s,
            max_captures: self.demo_max_captures,
            ..self.field()
        }
    }

    pub fn bc(&self) -> BcConfig {
        BcConfig {
            hidden: self.bc_hidden,
            epochs: self.bc_epochs,
            batch_size: self.bc_batch_size,
            lr: self.bc_lr,
            seed: derive_seed(self.seed, &[Stage::BcTrain as u64]),
        }
    }

    pub fn train(&self, mode: Mode, ablations: Ablations) -> TrainConfig {
        TrainConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_if: self.lambda_if,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            hidden: self.hidden,
            schedule: self.schedule.clone(),
            rollouts_per_level: self.rollouts_per_level,
            downsample_rate: self.downsample_rate,
            split_fraction: self.split_fraction,
            mode,
            ablations,
            max_pairs: self.max_pairs,
            drex_pairs: self.drex_pairs,
            snippet_len: self.snippet_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field().validate()?;
        self.demo_field().validate()?;
        self.train(Mode::Splash, Ablations::default()).validate()?;
        if !(0.0..=1.0).contains(&self.demo_skill) {
            return Err(Error::Config(format!("demo_skill {} outside [0, 1]", self.demo_skill)));
        }
        if self.bc_hidden == 0 || self.bc_epochs == 0 || self.bc_batch_size == 0 || !(self.bc_lr > 0.0) {
            return Err(Error::Config("behavior-cloning settings must be positive".into()));
        }
        let lowest = self.schedule.levels()[0];
        if let Some(e) = self.extrap_levels.iter().find(|&&e| !(0.0..lowest).contains(&e)) {
            return Err(Error::Config(format!(
                "extrapolation level {e} must lie in [0, {lowest}), below the noise schedule"
            )));
        }
        if !(0.0..=1.0).contains(&self.heldout_epsilon) {
            return Err(Error::Config("heldout_epsilon outside [0, 1]".into()));
        }
        if !(self.real_time_factor > 0.0) {
            return Err(Error::Config("real_time_factor must be positive".into()));
        }
        let shortest = (self.field().max_ticks() as usize + 1).div_ceil(self.downsample_rate);
        if self.snippet_len < 1 || self.snippet_len > shortest {
            return Err(Error::Config(format!(
                "snippet_len {} must lie in [1, {shortest}] at this downsampling rate",
                self.snippet_len
            )));
        }
        Ok(())
    }

    /// Hash of every setting that affects artifact contents (the data
    /// directory is excluded).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("data_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Stage identifiers, also used to derive per-stage seeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Demos = 1,
    BcTrain = 2,
    Rollout = 3,
    Pairs = 4,
    RewardTrain = 5,
    Eval = 6,
    Tournament = 7,
}

impl Stage {
    pub fn command(self) -> &'static str {
        match self {
            Stage::Demos => "demos",
            Stage::BcTrain => "bc-train",
            Stage::Rollout => "rollout",
            Stage::Pairs => "pairs",
            Stage::RewardTrain => "reward-train",
            Stage::Eval => "eval",
            Stage::Tournament => "tournament",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub producer: String,
    pub config_hash: String,
    pub sha256: String,
}

/// Checksums and provenance of every artifact in a data directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ManifestEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = std::fs::File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

/// Short name of a reward-model variant, used in artifact file names.
pub fn variant_name(mode: Mode, ablations: Ablations) -> String {
    match mode {
        Mode::Drex => "drex".into(),
        Mode::Splash if ablations == Ablations::default() => "splash".into(),
        Mode::Splash => format!("splash_{}", ablations.name().replace('+', "_")),
    }
}

/// Artifact paths relative to the data directory.
pub mod artifacts {
    pub const DEMOS: &str = "demos.jsonl";
    pub const BC_OPTIONS: &str = "checkpoints/bc_options.ckpt";
    pub const BC_ACTIONS: &str = "checkpoints/bc_actions.ckpt";
    pub const BC_LOG: &str = "reports/bc_train.log";
    pub const ROLLOUTS: &str = "rollouts.jsonl";
    pub const EXTRAP: &str = "extrap.jsonl";
    pub const HELDOUT: &str = "heldout.jsonl";
    pub const TOURNAMENT: &str = "reports/tournament.txt";
    pub const ABLATION: &str = "reports/ablation.txt";

    pub fn pairs(variant: &str) -> String {
        format!("pairs_{variant}.jsonl")
    }

    pub fn reward(variant: &str) -> String {
        format!("checkpoints/reward_{variant}.ckpt")
    }

    pub fn train_log(variant: &str) -> String {
        format!("reports/train_{variant}.log")
    }

    pub fn eval_report(variant: &str) -> String {
        format!("reports/eval_{variant}.txt")
    }

    pub fn traces(variant: &str) -> String {
        format!("reports/traces_{variant}.tsv")
    }
}

/// Headline numbers of an evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variant: String,
    pub spearman: f64,
    pub pearson: f64,
    pub progress: ProgressStats,
    pub fd_variance: f64,
    pub val_acc: Option<f64>,
}

/// A data directory bound to a configuration.
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub root: PathBuf,
    /// Accept input artifacts produced under a different configuration.
    pub force: bool,
}

impl Pipeline {
    /// Artifact root: `out` if given, else `SPLASH_DATA_DIR`, else the
    /// configured `data_dir`.
    pub fn resolve_root(cfg: &PipelineConfig, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf)
            .or_else(|| std::env::var_os("SPLASH_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| cfg.data_dir.clone())
    }

    pub fn new(cfg: PipelineConfig, root: PathBuf) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(root.join("checkpoints"))?;
        std::fs::create_dir_all(root.join("reports"))?;
        Ok(Self { cfg, root, force: false })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn stage_seed(&self, stage: Stage, path: &[u64]) -> u64 {
        let mut p = vec![stage as u64];
        p.extend_from_slice(path);
        derive_seed(self.cfg.seed, &p)
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let p = self.path("manifest.json");
        if !p.exists() {
            return Ok(Manifest::default());
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?)
    }

    fn record(&self, rel: &str, stage: Stage) -> Result<()> {
        let mut m = self.manifest()?;
        m.artifacts.insert(
            rel.to_string(),
            ManifestEntry {
                producer: stage.command().into(),
                config_hash: self.cfg.hash(),
                sha256: sha256_file(&self.path(rel))?,
            },
        );
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }

    /// Checks that an input artifact exists and was produced under the
    /// current configuration.
    fn require(&self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        let missing = || Error::MissingArtifact {
            artifact: p.display().to_string(),
            producer: producer.command(),
        };
        if !p.exists() {
            return Err(missing());
        }
        let m = self.manifest()?;
        let entry = m.artifacts.get(rel).ok_or_else(missing)?;
        let expected = self.cfg.hash();
        if entry.config_hash != expected && !self.force {
            return Err(Error::ConfigMismatch {
                artifact: rel.into(),
                found: entry.config_hash.clone(),
                expected,
            });
        }
        Ok(p)
    }

    fn header(&self, title: &str, inputs: &[&str]) -> Result<String> {
        let m = self.manifest()?;
        let mut s = format!("# {title}\n# config_hash {}\n# seed {}\n", self.cfg.hash(), self.cfg.seed);
        for rel in inputs {
            let sum = m.artifacts.get(*rel).map_or("unrecorded", |e| e.sha256.as_str());
            let _ = writeln!(s, "# input {rel} sha256 {sum}");
        }
        Ok(s)
    }

    fn load_net(&self, rel: &str, producer: Stage) -> Result<DenseNet> {
        Ok(DenseNet::load(&self.require(rel, producer)?)?.0)
    }

    /// Scripted demonstrations.
    pub fn demos(&self) -> Result<Vec<Trajectory>> {
        let demos = collect_demos(
            self.cfg.n_demos,
            self.cfg.demo_skill,
            &self.cfg.demo_field(),
            self.stage_seed(Stage::Demos, &[]),
        )?;
        write_trajectories(&self.path(artifacts::DEMOS), &demos)?;
        self.record(artifacts::DEMOS, Stage::Demos)?;
        Ok(demos)
    }

    /// Options-level and low-level cloned policies from the demonstrations.
    pub fn bc_train(&self) -> Result<(f64, f64)> {
        let demos = read_trajectories(&self.require(artifacts::DEMOS, Stage::Demos)?)?;
        let data = DemoDataset::from_trajectories(&demos)?;
        let mut log = String::new();
        let mut acc = [0.0; 2];
        for (k, (target, rel)) in [(BcTarget::Options, artifacts::BC_OPTIONS), (BcTarget::Actions, artifacts::BC_ACTIONS)]
            .into_iter()
            .enumerate()
        {
            let (net, epochs) = bc_fit(&data, target, &self.cfg.bc())?;
            acc[k] = bc_accuracy(&net, &data, target)?;
            for e in &epochs {
                let line = serde_json::json!({"target": target, "epoch": e.epoch, "loss": e.loss, "train_acc": e.train_acc});
                let _ = writeln!(log, "{line}");
            }
            net.save(&self.path(rel), &format!("bc_{target:?}").to_lowercase())?;
            self.record(rel, Stage::BcTrain)?;
        }
        std::fs::write(self.path(artifacts::BC_LOG), log)?;
        self.record(artifacts::BC_LOG, Stage::BcTrain)?;
        Ok((acc[0], acc[1]))
    }

    /// Training rollouts, extrapolation rollouts and held-out games.
    pub fn rollout(&self) -> Result<usize> {
        let bc = self.load_net(artifacts::BC_OPTIONS, Stage::BcTrain)?;
        let field = self.cfg.field();
        let train = generate_rollouts(
            &bc,
            &self.cfg.schedule,
            self.cfg.rollouts_per_level,
            &field,
            self.stage_seed(Stage::Rollout, &[0]),
        )?;
        write_trajectories(&self.path(artifacts::ROLLOUTS), &train)?;
        self.record(artifacts::ROLLOUTS, Stage::Rollout)?;
        let extrap = generate_level_rollouts(
            &bc,
            &self.cfg.extrap_levels,
            self.cfg.extrap_per_level,
            &field,
            self.stage_seed(Stage::Rollout, &[1]),
        )?;
        write_trajectories(&self.path(artifacts::EXTRAP), &extrap)?;
        self.record(artifacts::EXTRAP, Stage::Rollout)?;
        let held = generate_level_rollouts(
            &bc,
            &[self.cfg.heldout_epsilon],
            self.cfg.heldout_games,
            &field,
            self.stage_seed(Stage::Rollout, &[2]),
        )?;
        write_trajectories(&self.path(artifacts::HELDOUT), &held)?;
        self.record(artifacts::HELDOUT, Stage::Rollout)?;
        Ok(train.len())
    }

    /// Pair dataset for one variant.
    pub fn pairs(&self, mode: Mode, ablations: Ablations) -> Result<usize> {
        let rollouts = read_trajectories(&self.require(artifacts::ROLLOUTS, Stage::Rollout)?)?;
        let name = variant_name(mode, ablations);
        let data = build_pairs(&rollouts, &self.cfg.train(mode, ablations), self.stage_seed(Stage::Pairs, &[]))?;
        let rel = artifacts::pairs(&name);
        write_pairs(&self.path(&rel), &data)?;
        self.record(&rel, Stage::Pairs)?;
        Ok(data.len())
    }

    /// Reward model for one variant, with its per-epoch log.
    pub fn reward_train(&self, mode: Mode, ablations: Ablations) -> Result<Vec<EpochLog>> {
        let name = variant_name(mode, ablations);
        let tc = self.cfg.train(mode, ablations);
        let rollouts = read_trajectories(&self.require(artifacts::ROLLOUTS, Stage::Rollout)?)?;
        let data = read_pairs(&self.require(&artifacts::pairs(&name), Stage::Pairs)?, &rollouts, tc.downsample_rate)?;
        drop(rollouts);
        let idx: Vec<usize> = (0..data.len()).collect();
        let (train, val) = crate::pairs::split(&idx, tc.split_fraction, self.stage_seed(Stage::RewardTrain, &[0]))?;
        let (net, log) = train_reward::<f32>(&data, &train, &val, &tc, self.stage_seed(Stage::RewardTrain, &[1]))?;
        let rel = artifacts::reward(&name);
        net.save(&self.path(&rel), &format!("reward_{name}"))?;
        self.record(&rel, Stage::RewardTrain)?;
        let mut text = String::new();
        for l in &log {
            let _ = writeln!(text, "{}", serde_json::to_string(l)?);
        }
        let log_rel = artifacts::train_log(&name);
        std::fs::write(self.path(&log_rel), text)?;
        self.record(&log_rel, Stage::RewardTrain)?;
        Ok(log)
    }

    /// Extrapolation report and held-out reward traces for one variant.
    pub fn eval(&self, mode: Mode, ablations: Ablations) -> Result<EvalSummary> {
        let name = variant_name(mode, ablations);
        let ckpt = artifacts::reward(&name);
        let net = self.load_net(&ckpt, Stage::RewardTrain)?;
        let train = read_trajectories(&self.require(artifacts::ROLLOUTS, Stage::Rollout)?)?;
        let demos = read_trajectories(&self.require(artifacts::DEMOS, Stage::Demos)?)?;
        let extrap = read_trajectories(&self.require(artifacts::EXTRAP, Stage::Rollout)?)?;
        let held = read_trajectories(&self.require(artifacts::HELDOUT, Stage::Rollout)?)?;
        let report = extrapolation_report(&net, &train, &demos, &extrap)?;
        drop(train);
        let traces = held.iter().map(|t| reward_trace(&net, t)).collect::<Result<Vec<_>>>()?;
        let val_acc = self.last_val_acc(&name);
        let summary = EvalSummary {
            variant: name.clone(),
            spearman: report.summary.spearman,
            pearson: report.summary.pearson,
            progress: capture_progress(&traces, 50),
            fd_variance: mean_first_difference_variance(&traces),
            val_acc,
        };
        let inputs = [
            ckpt.as_str(),
            artifacts::ROLLOUTS,
            artifacts::DEMOS,
            artifacts::EXTRAP,
            artifacts::HELDOUT,
        ];
        let mut text = self.header(&format!("evaluation of {name}"), &inputs)?;
        text.push_str(&eval_text(&summary, &report));
        let rel = artifacts::eval_report(&name);
        std::fs::write(self.path(&rel), text)?;
        self.record(&rel, Stage::Eval)?;
        let mut tr = self.header(&format!("reward traces of {name}"), &inputs)?;
        tr.push_str(&traces_table(&traces));
        let rel = artifacts::traces(&name);
        std::fs::write(self.path(&rel), tr)?;
        self.record(&rel, Stage::Eval)?;
        Ok(summary)
    }

    fn last_val_acc(&self, name: &str) -> Option<f64> {
        let text = std::fs::read_to_string(self.path(&artifacts::train_log(name))).ok()?;
        let last = text.lines().last()?;
        serde_json::from_str::<EpochLog>(last).ok().map(|l| l.val_acc)
    }

    /// Options-level versus low-level cloned policy against the heuristic.
    pub fn tournament(&self) -> Result<(MatchRecord, MatchRecord)> {
        let field = self.cfg.demo_field();
        let seed = self.stage_seed(Stage::Tournament, &[]);
        let n = self.cfg.tournament_games;
        let options = bc_evaluate(&self.load_net(artifacts::BC_OPTIONS, Stage::BcTrain)?, n, &field, seed)?;
        let actions = bc_evaluate(&self.load_net(artifacts::BC_ACTIONS, Stage::BcTrain)?, n, &field, seed)?;
        let mut text = self.header("cloned policies vs heuristic opponent", &[artifacts::BC_OPTIONS, artifacts::BC_ACTIONS])?;
        text.push_str("policy\tgames\twins\tlosses\tdraws\twin_rate\tmean_eta\n");
        for (name, r) in [("options_bc", &options), ("vanilla_bc", &actions)] {
            let _ = writeln!(
                text,
                "{name}\t{}\t{}\t{}\t{}\t{:.3}\t{:.3}",
                r.games(),
                r.wins,
                r.losses,
                r.draws,
                r.win_rate(),
                r.mean_eta()
            );
        }
        std::fs::write(self.path(artifacts::TOURNAMENT), text)?;
        self.record(artifacts::TOURNAMENT, Stage::Tournament)?;
        Ok((options, actions))
    }

    /// Pairs, training and evaluation for the full model and each ablation.
    pub fn ablation(&self) -> Result<Vec<AblationRow>> {
        let mut rows = Vec::new();
        for name in ["full", "no_prune", "no_if", "no_dr"] {
            let a = Ablations::parse(name)?;
            let n_pairs = self.pairs(Mode::Splash, a)?;
            self.reward_train(Mode::Splash, a)?;
            let s = self.eval(Mode::Splash, a)?;
            rows.push(AblationRow {
                variant: name.into(),
                spearman: s.spearman,
                fd_variance: s.fd_variance,
                val_acc: s.val_acc.unwrap_or(f64::NAN),
                n_pairs,
            });
        }
        let inputs: Vec<String> = ["splash", "splash_no_prune", "splash_no_if", "splash_no_dr"]
            .iter()
            .map(|v| artifacts::reward(v))
            .collect();
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        let mut text = self.header("ablation", &refs)?;
        text.push_str(&ablation_table(&rows));
        std::fs::write(self.path(artifacts::ABLATION), text)?;
        self.record(artifacts::ABLATION, Stage::Eval)?;
        Ok(rows)
    }
}

fn eval_text(s: &EvalSummary, r: &ExtrapolationReport) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "spearman\t{:.6}", s.spearman);
    let _ = writeln!(t, "pearson\t{:.6}", s.pearson);
    for (set, mad) in &r.summary.mad {
        let _ = writeln!(t, "mad_{}\t{mad:.6}", set.name());
    }
    let p = &s.progress;
    let _ = writeln!(t, "blue_captures_rising\t{}/{}", p.blue_up, p.blue_total);
    let _ = writeln!(t, "red_captures_falling\t{}/{}", p.red_down, p.red_total);
    let _ = writeln!(t, "fd_variance\t{:.6e}", s.fd_variance);
    if let Some(v) = s.val_acc {
        let _ = writeln!(t, "val_acc\t{v:.6}");
    }
    t.push('\n');
    t.push_str(&r.table());
    t
}

fn traces_table(traces: &[RewardTrace]) -> String {
    let mut t = String::from("game\ttick\treward\tevent\n");
    for tr in traces {
        for line in tr.table().lines().skip(1) {
            let _ = writeln!(t, "{}\t{line}", tr.id);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let back = PipelineConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(PipelineConfig::from_toml("sed = 3\n"), Err(Error::Config(_))));
        assert!(PipelineConfig::from_toml("schedule = [0.5, 0.4]\n").is_err());
        assert!(PipelineConfig::from_toml("extrap_levels = [0.6]\n").is_err());
        let cfg = PipelineConfig::from_toml("seed = 3\nepochs = 2\n").unwrap();
        assert_eq!((cfg.seed, cfg.epochs), (3, 2));
    }

    #[test]
    fn hash_ignores_data_dir_only() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            data_dir: "elsewhere".into(),
            ..a.clone()
        };
        let c = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn variant_names() {
        assert_eq!(variant_name(Mode::Splash, Ablations::default()), "splash");
        assert_eq!(variant_name(Mode::Splash, Ablations::parse("no_dr").unwrap()), "splash_no_dr");
        assert_eq!(variant_name(Mode::Drex, Ablations::default()), "drex");
    }

    #[test]
    fn missing_inputs_name_their_producer() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(PipelineConfig::default(), dir.path().to_path_buf()).unwrap();
        match p.eval(Mode::Splash, Ablations::default()) {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "reward-train"),
            other => panic!("unexpected {other:?}"),
        }
        match p.bc_train() {
            Err(Error::MissingArtifact { producer, .. }) => assert_eq!(producer, "demos"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
