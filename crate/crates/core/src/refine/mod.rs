//! Memory refinement: execute stitched plans, keep the resulting
//! trajectories, and retrain every model on them.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::TrajectoryLog;
use crate::embed::{
    calibrate_dp, embed_all, train_encoder, AuxHeads, EmbedLossPoint, EmbedTrainConfig, Encoder, EncoderArch,
    EmbeddingIndex,
};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::per::PerConfig;
use crate::planners::{rprm_build, PlannerConfig, Roadmap};
use crate::policy::{execute, Memory, RolloutResult, StitchPolicy};
use crate::qlearn::{calibrate_cq, train_q, GoalMatch, LossPoint, MlpQ, QModel, QTrainConfig, TabularQ};

/// Q-function backend.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QBackend {
    /// Lookup table trained by sampled hindsight TD.
    Tabular,
    /// Lookup table solved to its fixed point by full sweeps.
    TabularExact,
    /// MLP trained by sampled hindsight TD.
    Mlp,
}

/// How models are fitted to a buffer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    pub backend: QBackend,
    pub q: QTrainConfig,
    pub max_sweeps: usize,
    /// Goal tolerance for the MLP backend; 0 matches goals exactly.
    pub goal_tolerance: f64,
    pub embed: EmbedTrainConfig,
    /// When positive, `c_q` is this fraction of the mean consecutive `d_Q`.
    pub cq_fraction: f64,
    /// When positive, the retrieval radius is this fraction of the mean
    /// consecutive `d_φ`; otherwise `embed.d_p` is used.
    pub dp_fraction: f64,
    pub l_max: usize,
    pub planner: PlannerConfig,
    pub calibration_pairs: usize,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            backend: QBackend::Tabular,
            q: QTrainConfig::default(),
            max_sweeps: 1000,
            goal_tolerance: 0.0,
            embed: EmbedTrainConfig::default(),
            cq_fraction: 0.0,
            dp_fraction: 0.5,
            l_max: 20,
            planner: PlannerConfig::default(),
            calibration_pairs: 5000,
        }
    }
}

/// Every learned component, fitted to one buffer.
#[derive(Clone, Debug)]
pub struct Models {
    pub q: QModel,
    pub encoder: Encoder,
    pub heads: Option<AuxHeads>,
    pub index: EmbeddingIndex,
    pub per: PerConfig,
    pub roadmap: Roadmap,
}

impl Models {
    pub fn memory<'a>(&'a self, log: &'a TrajectoryLog) -> Memory<'a> {
        Memory {
            log,
            index: &self.index,
            q: &self.q,
            per: &self.per,
        }
    }

    /// Writes `q.bin`, `encoder.bin`, `heads.bin` (when present),
    /// `roadmap.bin` and `per.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.q.save(dir.join("q.bin"))?;
        std::fs::write(dir.join("encoder.bin"), self.encoder.to_bytes())?;
        if let Some(h) = &self.heads {
            std::fs::write(dir.join("heads.bin"), h.to_bytes())?;
        }
        self.roadmap.save(dir.join("roadmap.bin"))?;
        let per = serde_json::json!({ "d_p": self.per.d_p, "l_max": self.per.l_max });
        std::fs::write(dir.join("per.json"), serde_json::to_vec_pretty(&per)?)?;
        Ok(())
    }

    /// Reads a directory written by [`Models::save`]; `log` must be the
    /// buffer the models were fitted to.
    pub fn load(dir: impl AsRef<Path>, log: &TrajectoryLog) -> Result<Self> {
        let dir = dir.as_ref();
        let q = QModel::load(dir.join("q.bin"))?;
        let encoder = Encoder::from_bytes(&std::fs::read(dir.join("encoder.bin"))?)?;
        let heads_path = dir.join("heads.bin");
        let heads = if heads_path.exists() {
            Some(AuxHeads::from_bytes(&std::fs::read(heads_path)?)?)
        } else {
            None
        };
        let roadmap = Roadmap::load(dir.join("roadmap.bin"))?;
        let per: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("per.json"))?)?;
        let d_p = per["d_p"].as_f64().ok_or_else(|| Error::Config("per.json: d_p".into()))?;
        let l_max = per["l_max"].as_u64().ok_or_else(|| Error::Config("per.json: l_max".into()))? as usize;
        let per = PerConfig::new(d_p, l_max);
        per.validate()?;
        let index = embed_all(&encoder, log);
        if roadmap.vertices.iter().any(|&v| v >= log.num_states()) {
            return Err(Error::OutOfRange("roadmap vertex beyond the buffer".into()));
        }
        Ok(Models {
            q,
            encoder,
            heads,
            index,
            per,
            roadmap,
        })
    }
}

/// Loss curves recorded while fitting.
#[derive(Clone, Debug, Default)]
pub struct TrainingCurves {
    pub q: Vec<LossPoint>,
    pub embed: Vec<EmbedLossPoint>,
}

/// Independent sub-seed `k` of `seed`.
pub fn sub_seed(seed: u64, k: u64) -> u64 {
    ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15)).random()
}

/// Trains Q from scratch.
pub fn train_q_model(log: &TrajectoryLog, cfg: &RetrainConfig, seed: u64) -> Result<(QModel, Vec<LossPoint>)> {
    if log.total_steps() == 0 {
        return Err(Error::EmptyLog);
    }
    match cfg.backend {
        QBackend::TabularExact => {
            let mut q = TabularQ::for_log(log, cfg.q.gamma)?;
            q.fit_sweeps(log, cfg.max_sweeps)?;
            Ok((QModel::Tabular(q), Vec::new()))
        }
        QBackend::Tabular => {
            let mut q = QModel::Tabular(TabularQ::for_log(log, cfg.q.gamma)?);
            let curve = train_q(log, &mut q, &cfg.q, seed)?;
            Ok((q, curve))
        }
        QBackend::Mlp => {
            let goal_match = if cfg.goal_tolerance > 0.0 {
                GoalMatch::Within(cfg.goal_tolerance)
            } else {
                GoalMatch::Exact
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut q = QModel::Mlp(MlpQ::new(log, cfg.q.hidden, cfg.q.gamma, cfg.q.momentum, goal_match, &mut rng)?);
            let curve = train_q(log, &mut q, &cfg.q, rng.random())?;
            Ok((q, curve))
        }
    }
}

/// Trains the encoder (and heads) against `q`; the identity architecture
/// needs no training.
pub fn fit_encoder(
    log: &TrajectoryLog,
    q: &QModel,
    cfg: &RetrainConfig,
    seed: u64,
) -> Result<(Encoder, Option<AuxHeads>, Vec<EmbedLossPoint>)> {
    if cfg.embed.arch == EncoderArch::Identity {
        return Ok((Encoder::identity(log.obs_dim()), None, Vec::new()));
    }
    let mut ecfg = cfg.embed;
    if cfg.cq_fraction > 0.0 {
        ecfg.c_q = calibrate_cq(q, log, cfg.cq_fraction, cfg.calibration_pairs)?;
    }
    let (e, h, c) = train_encoder(log, q, &ecfg, seed)?;
    Ok((e, Some(h), c))
}

/// Retrieval radius, buffer index and roadmap for a fitted encoder.
pub fn build_memory(
    log: &TrajectoryLog,
    encoder: &Encoder,
    cfg: &RetrainConfig,
    seed: u64,
) -> Result<(EmbeddingIndex, PerConfig, Roadmap)> {
    let d_p = if cfg.dp_fraction > 0.0 {
        calibrate_dp(encoder, log, cfg.dp_fraction, cfg.calibration_pairs)?
    } else {
        cfg.embed.d_p
    };
    let per = PerConfig::new(d_p, cfg.l_max);
    let index = embed_all(encoder, log);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roadmap = rprm_build(log, &index, &per, &cfg.planner, &mut rng)?;
    Ok((index, per, roadmap))
}

/// Fits Q, the encoder, the retrieval radius and the roadmap from scratch
/// on `log`. Deterministic given `seed`.
pub fn retrain_all(log: &TrajectoryLog, cfg: &RetrainConfig, seed: u64) -> Result<(Models, TrainingCurves)> {
    let (q, q_curve) = train_q_model(log, cfg, sub_seed(seed, 1))?;
    let (encoder, heads, embed_curve) = fit_encoder(log, &q, cfg, sub_seed(seed, 2))?;
    let (index, per, roadmap) = build_memory(log, &encoder, cfg, sub_seed(seed, 3))?;
    Ok((
        Models {
            q,
            encoder,
            heads,
            index,
            per,
            roadmap,
        },
        TrainingCurves {
            q: q_curve,
            embed: embed_curve,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Upper bound on rounds in one cycle.
    pub rounds: usize,
    pub goals_per_round: usize,
    /// Rollout budget per unit of distance band.
    pub budget_multiplier: usize,
    pub replan_every: usize,
    pub keep_only_successes: bool,
    /// Supplied by the caller; not part of the refinement file section.
    #[serde(skip)]
    pub retrain: RetrainConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            rounds: 20,
            goals_per_round: 100,
            budget_multiplier: 4,
            replan_every: 1,
            keep_only_successes: true,
            retrain: RetrainConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("refine.rounds must be at least 1".into()));
        }
        if self.budget_multiplier == 0 {
            return Err(Error::Config("refine.budget_multiplier must be at least 1".into()));
        }
        Ok(())
    }
}

/// A refinement task: start, goal, and the distance band it was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Task<S> {
    pub start: S,
    pub goal: S,
    pub band: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub attempts: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean steps over successful rollouts.
    pub mean_executed_len: f64,
    pub appended_steps: usize,
    pub collected_steps: usize,
}

/// Checks a rollout against the environment dynamics.
pub fn verify_rollout<E: Environment>(env: &E, r: &RolloutResult<E::State>) -> Result<()> {
    for (k, &a) in r.actions.iter().enumerate() {
        let (next, _) = env.step(&r.states[k], a)?;
        if next != r.states[k + 1] || env.observe(&next) != r.observations[k + 1] {
            return Err(Error::Discontinuous(k));
        }
    }
    Ok(())
}

/// One round: for each sampled task, execute `π_M*` with the current models
/// and append the rollout to `collected` (successes only, when configured).
/// Rollouts of zero steps add nothing.
#[allow(clippy::too_many_arguments)]
pub fn refinement_round<E: Environment>(
    env: &E,
    log: &TrajectoryLog,
    models: &Models,
    cfg: &RefineConfig,
    collected: &mut TrajectoryLog,
    sample_task: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<Task<E::State>>,
    reached: &dyn Fn(&E::State, &E::State) -> bool,
    round: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RoundReport> {
    cfg.validate()?;
    let mut report = RoundReport {
        round,
        ..RoundReport::default()
    };
    let mut success_len = 0usize;
    for _ in 0..cfg.goals_per_round {
        let task = sample_task(rng)?;
        let budget = (cfg.budget_multiplier * task.band).max(1);
        let mut policy = StitchPolicy::new(models.memory(log), &models.roadmap, cfg.replan_every);
        let goal = task.goal.clone();
        let r = execute(env, &mut policy, task.start, &task.goal, budget, |s| reached(s, &goal))?;
        report.attempts += 1;
        if r.success {
            report.successes += 1;
            success_len += r.steps_taken;
        }
        if r.steps_taken > 0 && (r.success || !cfg.keep_only_successes) {
            verify_rollout(env, &r)?;
            collected.append_episode(&r.observations, &r.actions)?;
            report.appended_steps += r.steps_taken;
        }
    }
    report.success_rate = if report.attempts == 0 {
        0.0
    } else {
        report.successes as f64 / report.attempts as f64
    };
    report.mean_executed_len = if report.successes == 0 {
        0.0
    } else {
        success_len as f64 / report.successes as f64
    };
    report.collected_steps = collected.total_steps();
    Ok(report)
}

/// Result of a full refinement cycle.
#[derive(Clone, Debug)]
pub struct CycleResult {
    /// Collected trajectories truncated to the size of the original buffer.
    pub refined: TrajectoryLog,
    pub models: Models,
    pub curves: TrainingCurves,
    pub rounds: Vec<RoundReport>,
}

/// Runs rounds with the original models until the collected data matches
/// the original buffer's size, truncates to exactly that size, and retrains
/// everything from scratch on the collected data alone.
pub fn refine_cycle<E: Environment>(
    env: &E,
    log: &TrajectoryLog,
    models: &Models,
    cfg: &RefineConfig,
    sample_task: &mut dyn FnMut(&mut ChaCha8Rng) -> Result<Task<E::State>>,
    reached: &dyn Fn(&E::State, &E::State) -> bool,
    seed: u64,
) -> Result<CycleResult> {
    cfg.validate()?;
    let target = log.total_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 10));
    let mut collected = TrajectoryLog::new(log.obs_dim(), log.num_actions());
    let mut rounds = Vec::new();
    for round in 0..cfg.rounds {
        if collected.total_steps() >= target {
            break;
        }
        rounds.push(refinement_round(
            env,
            log,
            models,
            cfg,
            &mut collected,
            sample_task,
            reached,
            round,
            &mut rng,
        )?);
    }
    let refined = collected.truncated(target)?;
    let (models, curves) = retrain_all(&refined, &cfg.retrain, sub_seed(seed, 11))?;
    Ok(CycleResult {
        refined,
        models,
        curves,
        rounds,
    })
}

pub fn write_rounds_csv(path: impl AsRef<Path>, rounds: &[RoundReport]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "round,attempts,successes,success_rate,mean_executed_len,appended_steps,collected_steps")?;
    for r in rounds {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.round, r.attempts, r.successes, r.success_rate, r.mean_executed_len, r.appended_steps, r.collected_steps
        )?;
    }
    f.flush()?;
    Ok(())
}
