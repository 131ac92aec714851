//! Offline goal-conditioned Q-learning with hindsight relabelling.
//!
//! The TD target is the goal indicator with bootstrapping gated off at the
//! goal: `y = 1[s' = g] + γ · 1[s' ≠ g] · Q_target(s', a*, g)`. Under this
//! convention an optimal `max_a Q(s, ·, g)` equals `γ^(d-1)` for a goal `d`
//! steps away, so [`step_distance`] inverts it back into a step count.

mod mlp;
mod tabular;

pub use mlp::MlpQ;
pub use tabular::TabularQ;

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{sample_hindsight, HindsightMode, TrajectoryLog};
use crate::error::{Error, Result};
use crate::util::same_bits;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_GAMMA: f64 = 0.95;

/// How a reached state is compared against a goal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "tol", rename_all = "snake_case")]
pub enum GoalMatch {
    /// Bit-exact observation equality.
    Exact,
    /// Euclidean observation distance below a tolerance.
    Within(f64),
}

impl GoalMatch {
    pub fn matches(&self, a: &[f32], b: &[f32]) -> bool {
        match *self {
            GoalMatch::Exact => same_bits(a, b),
            GoalMatch::Within(tol) => crate::util::l2_f32(a, b) < tol,
        }
    }
}

/// Read-only goal-conditioned action values.
pub trait QFunction: Send + Sync {
    fn num_actions(&self) -> usize;

    fn obs_dim(&self) -> usize;

    fn gamma(&self) -> f64;

    fn eps(&self) -> f64 {
        DEFAULT_EPS
    }

    /// `Q(s, a, g)` for every action `a`.
    fn q_values(&self, s: &[f32], g: &[f32]) -> Vec<f64>;

    /// The goal-equality test used by the TD target.
    fn same_state(&self, a: &[f32], b: &[f32]) -> bool;

    /// `max_a Q(s, a, g)` over many pairs.
    fn max_q_batch(&self, pairs: &[(&[f32], &[f32])]) -> Vec<f64> {
        pairs
            .iter()
            .map(|(s, g)| self.q_values(s, g).into_iter().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// One relabelled TD sample.
#[derive(Clone, Copy, Debug)]
pub struct QSample<'a> {
    pub state: &'a [f32],
    pub action: usize,
    pub next_state: &'a [f32],
    pub goal: &'a [f32],
}

pub trait TrainableQ: QFunction {
    /// Called once before training on `log`.
    fn prepare(&mut self, _log: &TrajectoryLog) {}

    /// One TD step on `batch`; returns the mean squared TD error.
    fn td_update(&mut self, batch: &[QSample<'_>], lr: f64) -> Result<f64>;

    fn sync_target(&mut self);
}

/// Either backend behind one type, with file dispatch on the magic bytes.
#[derive(Clone, Debug)]
pub enum QModel {
    Tabular(TabularQ),
    Mlp(MlpQ),
}

impl QModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            QModel::Tabular(q) => q.to_bytes(),
            QModel::Mlp(q) => q.to_bytes(),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.get(..4) {
            Some(b"PQTB") => Ok(QModel::Tabular(TabularQ::from_bytes(bytes)?)),
            Some(b"PQMP") => Ok(QModel::Mlp(MlpQ::from_bytes(bytes)?)),
            _ => Err(Error::CorruptHeader("not a Q model file".into())),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    fn inner(&self) -> &dyn QFunction {
        match self {
            QModel::Tabular(q) => q,
            QModel::Mlp(q) => q,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn TrainableQ {
        match self {
            QModel::Tabular(q) => q,
            QModel::Mlp(q) => q,
        }
    }
}

impl QFunction for QModel {
    fn num_actions(&self) -> usize {
        self.inner().num_actions()
    }

    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }

    fn gamma(&self) -> f64 {
        self.inner().gamma()
    }

    fn q_values(&self, s: &[f32], g: &[f32]) -> Vec<f64> {
        self.inner().q_values(s, g)
    }

    fn same_state(&self, a: &[f32], b: &[f32]) -> bool {
        self.inner().same_state(a, b)
    }

    fn max_q_batch(&self, pairs: &[(&[f32], &[f32])]) -> Vec<f64> {
        self.inner().max_q_batch(pairs)
    }
}

impl TrainableQ for QModel {
    fn prepare(&mut self, log: &TrajectoryLog) {
        self.inner_mut().prepare(log)
    }

    fn td_update(&mut self, batch: &[QSample<'_>], lr: f64) -> Result<f64> {
        self.inner_mut().td_update(batch, lr)
    }

    fn sync_target(&mut self) {
        self.inner_mut().sync_target()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub target_sync_every: usize,
    pub gamma: f64,
    pub geom_p: f64,
    pub momentum: f64,
    pub hidden: usize,
    /// Steps between loss-curve points.
    pub log_every: usize,
}

impl Default for QTrainConfig {
    fn default() -> Self {
        QTrainConfig {
            steps: 20_000,
            batch: 64,
            lr: 0.01,
            target_sync_every: 500,
            gamma: DEFAULT_GAMMA,
            geom_p: 0.1,
            momentum: 0.9,
            hidden: 128,
            log_every: 100,
        }
    }
}

impl QTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.steps > 0
            && self.batch > 0
            && self.lr > 0.0
            && self.target_sync_every > 0
            && self.log_every > 0;
        if !positive {
            return Err(Error::Config("Q training counts and rates must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma={} not in (0,1)", self.gamma)));
        }
        if !(self.geom_p > 0.0 && self.geom_p <= 1.0) {
            return Err(Error::Config(format!("geom_p={} not in (0,1]", self.geom_p)));
        }
        Ok(())
    }
}

/// A point on a training curve: mean loss over the preceding window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
}

/// Hindsight TD training with geometric goal offsets.
pub fn train_q<Q: TrainableQ + ?Sized>(
    log: &TrajectoryLog,
    q: &mut Q,
    cfg: &QTrainConfig,
    seed: u64,
) -> Result<Vec<LossPoint>> {
    cfg.validate()?;
    q.prepare(log);
    q.sync_target();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = HindsightMode::Geometric { p: cfg.geom_p };
    let mut curve = Vec::new();
    let mut window = 0.0;
    for step in 1..=cfg.steps {
        let draws = (0..cfg.batch)
            .map(|_| sample_hindsight(log, mode, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<QSample> = draws
            .iter()
            .map(|h| QSample {
                state: log.state(h.state),
                action: h.action,
                next_state: log.state(h.next_state),
                goal: log.state(h.goal_state),
            })
            .collect();
        let loss = q.td_update(&batch, cfg.lr)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        window += loss;
        if step % cfg.target_sync_every == 0 {
            q.sync_target();
        }
        if step % cfg.log_every == 0 {
            curve.push(LossPoint {
                step,
                loss: window / cfg.log_every as f64,
            });
            window = 0.0;
        }
    }
    q.sync_target();
    Ok(curve)
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[LossPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,loss")?;
    for p in curve {
        writeln!(f, "{},{}", p.step, p.loss)?;
    }
    f.flush()?;
    Ok(())
}

/// Largest representable distance, reached when `max_a Q ≤ ε`.
pub fn d_max(gamma: f64, eps: f64) -> f64 {
    1.0 + eps.ln() / gamma.ln()
}

/// `1 + log_γ(clamp(v, ε, 1))`.
pub fn distance_from_value(v: f64, gamma: f64, eps: f64) -> f64 {
    let v = if v.is_nan() { eps } else { v.clamp(eps, 1.0) };
    (1.0 + v.ln() / gamma.ln()).max(1.0)
}

/// Estimated steps from `s` to `g` (0 when they are the same state).
pub fn step_distance<Q: QFunction + ?Sized>(q: &Q, s: &[f32], g: &[f32]) -> f64 {
    if q.same_state(s, g) {
        return 0.0;
    }
    let v = q.q_values(s, g).into_iter().fold(f64::NEG_INFINITY, f64::max);
    distance_from_value(v, q.gamma(), q.eps())
}

/// Symmetric reachability distance `max(d̂(s,g), d̂(g,s))`.
pub fn d_q<Q: QFunction + ?Sized>(q: &Q, s: &[f32], g: &[f32]) -> f64 {
    step_distance(q, s, g).max(step_distance(q, g, s))
}

/// [`d_q`] over many pairs, batched for parametric backends.
pub fn d_q_batch<Q: QFunction + ?Sized>(q: &Q, pairs: &[(&[f32], &[f32])]) -> Vec<f64> {
    let reversed: Vec<(&[f32], &[f32])> = pairs.iter().map(|&(s, g)| (g, s)).collect();
    let fwd = q.max_q_batch(pairs);
    let bwd = q.max_q_batch(&reversed);
    pairs
        .iter()
        .zip(fwd.iter().zip(&bwd))
        .map(|(&(s, g), (&f, &b))| {
            if q.same_state(s, g) {
                0.0
            } else {
                let (gamma, eps) = (q.gamma(), q.eps());
                distance_from_value(f, gamma, eps).max(distance_from_value(b, gamma, eps))
            }
        })
        .collect()
}

/// `fraction ×` mean `d_Q` between consecutive buffer states.
///
/// Transitions whose next observation equals the current one (blocked
/// moves) are skipped. At most `max_pairs` evenly strided transitions are
/// used.
pub fn calibrate_cq<Q: QFunction + ?Sized>(
    q: &Q,
    log: &TrajectoryLog,
    fraction: f64,
    max_pairs: usize,
) -> Result<f64> {
    if log.total_steps() == 0 {
        return Err(Error::EmptyLog);
    }
    if !(fraction > 0.0) {
        return Err(Error::InvalidInput(format!("fraction={fraction} must be positive")));
    }
    let stride = log.total_steps().div_ceil(max_pairs.max(1));
    let pairs: Vec<(&[f32], &[f32])> = (0..log.total_steps())
        .step_by(stride)
        .map(|k| log.transition(k))
        .filter(|t| !same_bits(t.obs, t.next_obs))
        .map(|t| (t.obs, t.next_obs))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    Ok(fraction * crate::util::mean(&d_q_batch(q, &pairs)))
}
