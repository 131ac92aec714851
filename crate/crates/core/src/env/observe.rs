use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Cell, Observation};
use crate::error::{Error, Result};

/// How ground-truth grid cells are lifted into observations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObsMode {
    /// `[x, y]` as floats.
    Identity,
    /// One-hot over `width × height` cells, row-major.
    OneHot,
    /// `dim` random Fourier features of `(x, y)`: sin/cos pairs of random
    /// linear projections, fixed by the seed.
    RandomFeatures { dim: usize },
}

/// Observation lifting map for grid mazes.
#[derive(Clone, Debug)]
pub struct GridObserver {
    mode: ObsMode,
    width: usize,
    height: usize,
    // (wx, wy, phase) per sin/cos pair
    projections: Vec<[f64; 3]>,
}

impl GridObserver {
    pub fn new(mode: ObsMode, width: usize, height: usize, seed: u64) -> Result<Self> {
        let projections = match mode {
            ObsMode::RandomFeatures { dim } => {
                if dim == 0 || dim % 2 != 0 {
                    return Err(Error::InvalidInput(format!(
                        "random feature dim must be even and positive, got {dim}"
                    )));
                }
                random_projections(dim / 2, width.max(height), seed)
            }
            _ => Vec::new(),
        };
        Ok(GridObserver {
            mode,
            width,
            height,
            projections,
        })
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            ObsMode::Identity => 2,
            ObsMode::OneHot => self.width * self.height,
            ObsMode::RandomFeatures { dim } => dim,
        }
    }

    pub fn observe(&self, c: Cell) -> Observation {
        match self.mode {
            ObsMode::Identity => Observation(vec![c.x as f32, c.y as f32]),
            ObsMode::OneHot => {
                let mut v = vec![0.0f32; self.width * self.height];
                v[c.y as usize * self.width + c.x as usize] = 1.0;
                Observation(v)
            }
            ObsMode::RandomFeatures { .. } => Observation(project(&self.projections, c.x as f64, c.y as f64)),
        }
    }

    /// Smallest L2 gap between the observations of two distinct cells in
    /// `cells`. Used to pick a goal-equality tolerance for lifted
    /// observations.
    pub fn min_gap(&self, cells: &[Cell]) -> f64 {
        let obs: Vec<Observation> = cells.iter().map(|&c| self.observe(c)).collect();
        let mut best = f64::INFINITY;
        for i in 0..obs.len() {
            for j in (i + 1)..obs.len() {
                best = best.min(crate::util::l2_f32(&obs[i].0, &obs[j].0));
            }
        }
        best
    }
}

/// Random projections with roughly one period across the map.
pub(crate) fn random_projections(pairs: usize, extent: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f62_7365_7276_6572);
    let scale = std::f64::consts::TAU / extent.max(1) as f64;
    let freq = Normal::new(0.0, scale).expect("positive scale");
    let phase = Uniform::new(0.0, std::f64::consts::TAU).expect("valid range");
    (0..pairs)
        .map(|_| [freq.sample(&mut rng), freq.sample(&mut rng), phase.sample(&mut rng)])
        .collect()
}

pub(crate) fn project(projections: &[[f64; 3]], x: f64, y: f64) -> Vec<f32> {
    let mut v = Vec::with_capacity(projections.len() * 2);
    for &[wx, wy, b] in projections {
        let arg = wx * x + wy * y + b;
        v.push(arg.sin() as f32);
        v.push(arg.cos() as f32);
    }
    v
}
