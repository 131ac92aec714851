use rand::Rng;
use serde::{Deserialize, Serialize};

use super::observe::{project, random_projections};
use super::{Cell, Environment, GridMaze, ObsMode, Observation};
use crate::error::{Error, Result};

/// Maze2D-style point mass: bounded box, wall segments, acceleration control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMassSpec {
    /// `[xmin, ymin, xmax, ymax]`
    pub bounds: [f64; 4],
    /// Wall segments `[x0, y0, x1, y1]`.
    pub walls: Vec<[f64; 4]>,
    pub dt: f64,
    pub accel_max: f64,
    pub vel_max: f64,
}

impl PointMassSpec {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bounds;
        if !(x1 > x0 && y1 > y0) {
            return Err(Error::InvalidInput("empty point-mass bounds".into()));
        }
        if !(self.dt > 0.0 && self.accel_max > 0.0 && self.vel_max > 0.0) {
            return Err(Error::InvalidInput("dt, accel_max and vel_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

impl MassState {
    pub fn at_rest(x: f64, y: f64) -> Self {
        MassState {
            pos: [x, y],
            vel: [0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug)]
pub struct PointMassEnv {
    pub spec: PointMassSpec,
    mode: ObsMode,
    projections: Vec<[f64; 3]>,
}

impl PointMassEnv {
    pub fn new(spec: PointMassSpec, mode: ObsMode, seed: u64) -> Result<Self> {
        spec.validate()?;
        let projections = match mode {
            ObsMode::Identity => Vec::new(),
            ObsMode::RandomFeatures { dim } if dim > 0 && dim % 2 == 0 => {
                let extent = (spec.bounds[2] - spec.bounds[0]).max(spec.bounds[3] - spec.bounds[1]);
                random_projections(dim / 2, extent.ceil() as usize, seed)
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "observation mode {other:?} unsupported for point mass"
                )))
            }
        };
        Ok(PointMassEnv {
            spec,
            mode,
            projections,
        })
    }

    /// The discrete 8-way acceleration set used as the action space.
    pub fn action_accel(&self, index: usize) -> Result<[f64; 2]> {
        if index >= 8 {
            return Err(Error::InvalidInput(format!("point-mass action {index} not in [0,8)")));
        }
        let angle = index as f64 * std::f64::consts::FRAC_PI_4;
        let a = self.spec.accel_max;
        let c = angle.cos();
        let s = angle.sin();
        let snap = |v: f64| if v.abs() < 1e-12 { 0.0 } else { v };
        Ok([snap(a * c), snap(a * s)])
    }

    /// One semi-implicit Euler step under continuous acceleration `accel`.
    /// Each axis is integrated separately; a blocked axis keeps its
    /// position and loses its velocity component.
    pub fn step_accel(&self, state: &MassState, accel: [f64; 2]) -> Result<(MassState, bool)> {
        let amax = self.spec.accel_max * (1.0 + 1e-9);
        if accel.iter().any(|a| !a.is_finite() || a.abs() > amax) {
            return Err(Error::InvalidInput(format!("acceleration {accel:?} outside accel box")));
        }
        let dt = self.spec.dt;
        let vmax = self.spec.vel_max;
        let mut vel = [
            (state.vel[0] + accel[0] * dt).clamp(-vmax, vmax),
            (state.vel[1] + accel[1] * dt).clamp(-vmax, vmax),
        ];
        let mut pos = state.pos;
        let mut collided = false;
        for axis in 0..2 {
            let mut next = pos;
            next[axis] += vel[axis] * dt;
            if self.blocked(pos, next) {
                vel[axis] = 0.0;
                collided = true;
            } else {
                pos = next;
            }
        }
        Ok((MassState { pos, vel }, collided))
    }

    fn blocked(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        let [x0, y0, x1, y1] = self.spec.bounds;
        if to[0] < x0 || to[0] > x1 || to[1] < y0 || to[1] > y1 {
            return true;
        }
        self.spec
            .walls
            .iter()
            .any(|w| segments_intersect(from, to, [w[0], w[1]], [w[2], w[3]]))
    }

    /// Grid approximation for geodesic distances: a cell is blocked when any
    /// wall passes through its square.
    pub fn discretize(&self, cell: f64) -> Result<GridMaze> {
        let [x0, y0, x1, y1] = self.spec.bounds;
        let w = ((x1 - x0) / cell).ceil() as usize;
        let h = ((y1 - y0) / cell).ceil() as usize;
        let mut blocked = Vec::new();
        for j in 0..h {
            for i in 0..w {
                let lo = [x0 + i as f64 * cell, y0 + j as f64 * cell];
                let hi = [lo[0] + cell, lo[1] + cell];
                if self.spec.walls.iter().any(|s| segment_hits_box(s, lo, hi)) {
                    blocked.push(Cell::new(i as i32, j as i32));
                }
            }
        }
        GridMaze::with_components(w, h, blocked)
    }

    pub fn cell_of(&self, state: &MassState, cell: f64) -> Cell {
        Cell::new(
            ((state.pos[0] - self.spec.bounds[0]) / cell).floor() as i32,
            ((state.pos[1] - self.spec.bounds[1]) / cell).floor() as i32,
        )
    }
}

impl Environment for PointMassEnv {
    type State = MassState;

    fn num_actions(&self) -> usize {
        8
    }

    fn obs_dim(&self) -> usize {
        match self.mode {
            ObsMode::RandomFeatures { dim } => dim + 2,
            _ => 4,
        }
    }

    fn step(&self, state: &MassState, action: usize) -> Result<(MassState, bool)> {
        self.step_accel(state, self.action_accel(action)?)
    }

    fn observe(&self, s: &MassState) -> Observation {
        match self.mode {
            ObsMode::RandomFeatures { .. } => {
                let mut v = project(&self.projections, s.pos[0], s.pos[1]);
                v.push(s.vel[0] as f32);
                v.push(s.vel[1] as f32);
                Observation(v)
            }
            _ => Observation(vec![s.pos[0] as f32, s.pos[1] as f32, s.vel[0] as f32, s.vel[1] as f32]),
        }
    }

    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> MassState {
        let [x0, y0, x1, y1] = self.spec.bounds;
        MassState::at_rest(rng.random_range(x0..x1), rng.random_range(y0..y1))
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

pub(crate) fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

fn segment_hits_box(s: &[f64; 4], lo: [f64; 2], hi: [f64; 2]) -> bool {
    let a = [s[0], s[1]];
    let b = [s[2], s[3]];
    let inside = |p: [f64; 2]| p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1];
    if inside(a) || inside(b) {
        return true;
    }
    let corners = [lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    (0..4).any(|k| segments_intersect(a, b, corners[k], corners[(k + 1) % 4]))
}
