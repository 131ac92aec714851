//! Success-rate evaluation over distance bands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::oracle::{GeodesicTable, ObsDecoder};
use crate::env::{Cell, Direction, Environment, GridEnv};
use crate::error::{Error, Result};
use crate::policy::{execute, Policy, StepInfo, StepMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMetric {
    /// Euclidean cell distance in `[n, n + 1)`.
    Euclidean,
    /// Shortest-path distance in `[n, n + width)`.
    Geodesic { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub bands: Vec<usize>,
    pub pairs_per_band: usize,
    /// Success when the agent is within this many cells (Euclidean) of the
    /// goal.
    pub success_radius: f64,
    pub budget_multiplier: usize,
    pub metric: BandMetric,
    /// Rejection-sampling attempts per requested pair.
    pub max_rejections: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bands: (1..=14).collect(),
            pairs_per_band: 200,
            success_radius: 0.0,
            budget_multiplier: 4,
            metric: BandMetric::Euclidean,
            max_rejections: 2000,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::Config("eval.bands must be nonempty".into()));
        }
        if self.pairs_per_band == 0 {
            return Err(Error::Config("eval.pairs_per_band must be at least 1".into()));
        }
        if self.budget_multiplier == 0 {
            return Err(Error::Config("eval.budget_multiplier must be at least 1".into()));
        }
        if !(self.success_radius >= 0.0) {
            return Err(Error::Config("eval.success_radius must be non-negative".into()));
        }
        Ok(())
    }

    pub fn budget(&self, band: usize) -> usize {
        (self.budget_multiplier * band).max(1)
    }
}

/// Whether `d` falls in band `n` under `metric`.
pub fn in_band(metric: BandMetric, table: &GeodesicTable, a: Cell, b: Cell, n: usize) -> bool {
    match metric {
        BandMetric::Euclidean => {
            let d = a.euclidean(&b);
            d >= n as f64 && d < (n + 1) as f64
        }
        BandMetric::Geodesic { width } => table
            .distance(a, b)
            .is_some_and(|d| d >= n && d < n + width.max(1)),
    }
}

/// Rejection-samples `count` (start, goal) pairs in band `n`, both drawn
/// uniformly from free cells.
pub fn sample_eval_pairs(
    env: &GridEnv,
    table: &GeodesicTable,
    metric: BandMetric,
    n: usize,
    count: usize,
    max_rejections: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Cell, Cell)>> {
    let mut out = Vec::with_capacity(count);
    let limit = max_rejections.max(1) * count.max(1);
    let mut tries = 0usize;
    while out.len() < count {
        if tries == limit {
            return Err(Error::InfeasibleBand(format!(
                "band {n}: found {} of {count} pairs after {limit} draws",
                out.len()
            )));
        }
        tries += 1;
        let a = env.sample_state(rng);
        let b = env.sample_state(rng);
        if in_band(metric, table, a, b, n) {
            out.push((a, b));
        }
    }
    Ok(out)
}

/// Wilson score interval for `k` successes out of `n` at normal quantile
/// `z`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub band: usize,
    pub attempts: usize,
    pub successes: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean steps over successful rollouts.
    pub mean_steps: f64,
    pub fallback_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policy: String,
    pub config_hash: String,
    pub seed: u64,
    pub bands: Vec<BandResult>,
}

impl Report {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "# policy={} config_hash={} seed={}", self.policy, self.config_hash, self.seed)?;
        writeln!(f, "band,attempts,successes,rate,ci_low,ci_high,mean_steps,fallback_steps")?;
        for b in &self.bands {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                b.band, b.attempts, b.successes, b.rate, b.ci_low, b.ci_high, b.mean_steps, b.fallback_steps
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// The evaluation pairs for every band, drawn from one seeded stream so
/// different policies can be compared on identical tasks.
pub fn eval_pairs(env: &GridEnv, table: &GeodesicTable, cfg: &EvalConfig) -> Result<Vec<Vec<(Cell, Cell)>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    cfg.bands
        .iter()
        .map(|&n| sample_eval_pairs(env, table, cfg.metric, n, cfg.pairs_per_band, cfg.max_rejections, &mut rng))
        .collect()
}

/// Runs `policy` on every pair with budget `multiplier × n`.
pub fn eval_success_curve<P: Policy + ?Sized>(
    env: &GridEnv,
    policy: &mut P,
    pairs: &[Vec<(Cell, Cell)>],
    cfg: &EvalConfig,
) -> Result<Vec<BandResult>> {
    let mut out = Vec::new();
    for (&band, band_pairs) in cfg.bands.iter().zip(pairs) {
        let mut successes = 0;
        let mut steps = 0;
        let mut fallback_steps = 0;
        for &(s, g) in band_pairs {
            let r = execute(env, policy, s, &g, cfg.budget(band), |c| c.euclidean(&g) <= cfg.success_radius)?;
            fallback_steps += r.fallback_steps();
            if r.success {
                successes += 1;
                steps += r.steps_taken;
            }
        }
        let attempts = band_pairs.len();
        let (ci_low, ci_high) = wilson_interval(successes, attempts, 1.96);
        out.push(BandResult {
            band,
            attempts,
            successes,
            rate: successes as f64 / attempts.max(1) as f64,
            ci_low,
            ci_high,
            mean_steps: if successes == 0 { 0.0 } else { steps as f64 / successes as f64 },
            fallback_steps,
        });
    }
    Ok(out)
}

/// Follows true shortest paths. Upper-bound reference for evaluation.
pub struct OraclePolicy<'a> {
    env: &'a GridEnv,
    table: &'a GeodesicTable,
    decoder: ObsDecoder,
    goal: Option<Cell>,
}

impl<'a> OraclePolicy<'a> {
    pub fn new(env: &'a GridEnv, table: &'a GeodesicTable) -> Self {
        OraclePolicy {
            env,
            table,
            decoder: ObsDecoder::new(env),
            goal: None,
        }
    }
}

impl Policy for OraclePolicy<'_> {
    fn reset(&mut self, goal: &[f32]) -> Result<()> {
        self.goal = Some(
            self.decoder
                .decode(goal)
                .ok_or_else(|| Error::InvalidInput("goal observation is not a free cell".into()))?,
        );
        Ok(())
    }

    fn act(&mut self, obs: &[f32]) -> Result<StepInfo> {
        let goal = self.goal.ok_or_else(|| Error::InvalidInput("policy used before reset".into()))?;
        let here = self
            .decoder
            .decode(obs)
            .ok_or_else(|| Error::InvalidInput("observation is not a free cell".into()))?;
        let mut best = (usize::MAX, 0);
        for d in Direction::ALL {
            let (next, _) = self.env.maze.step(here, d);
            let dist = self.table.distance(next, goal).unwrap_or(usize::MAX);
            if dist < best.0 {
                best = (dist, d.index());
            }
        }
        Ok(StepInfo {
            action: best.1,
            mode: StepMode::Greedy,
            target: None,
        })
    }
}
