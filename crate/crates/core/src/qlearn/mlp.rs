use ndarray::Array2;
use rand::Rng;

use super::{GoalMatch, QFunction, QSample, TrainableQ};
use crate::buffer::TrajectoryLog;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{clip_norm, Activation, Mlp, Momentum};

const MAGIC: &[u8; 4] = b"PQMP";
const VERSION: u32 = 1;

/// Parametric goal-conditioned Q: an MLP over standardized
/// `[obs, goal]` with one output per action, trained with double-Q
/// targets.
#[derive(Clone, Debug)]
pub struct MlpQ {
    gamma: f64,
    num_actions: usize,
    obs_dim: usize,
    goal_match: GoalMatch,
    shift: Vec<f64>,
    scale: Vec<f64>,
    online: Mlp,
    target: Mlp,
    opt: Momentum,
    momentum: f64,
}

impl MlpQ {
    /// Builds a fresh network whose input standardization is fitted to
    /// the states of `log`.
    pub fn new<R: Rng + ?Sized>(
        log: &TrajectoryLog,
        hidden: usize,
        gamma: f64,
        momentum: f64,
        goal_match: GoalMatch,
        rng: &mut R,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidInput(format!("gamma={gamma} not in (0,1)")));
        }
        if log.num_states() == 0 {
            return Err(Error::EmptyLog);
        }
        let d = log.obs_dim();
        let n = log.num_states() as f64;
        let mut shift = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for k in 0..log.num_states() {
            for (j, &x) in log.state(k).iter().enumerate() {
                shift[j] += x as f64;
                sq[j] += (x as f64) * (x as f64);
            }
        }
        let scale = (0..d)
            .map(|j| {
                shift[j] /= n;
                let var = sq[j] / n - shift[j] * shift[j];
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let online = Mlp::new(&[2 * d, hidden, hidden, log.num_actions()], Activation::Relu, rng)?;
        let opt = Momentum::new(online.num_params(), 0.0, momentum);
        Ok(MlpQ {
            gamma,
            num_actions: log.num_actions(),
            obs_dim: d,
            goal_match,
            shift,
            scale,
            target: online.clone(),
            online,
            opt,
            momentum,
        })
    }

    pub fn network(&self) -> &Mlp {
        &self.online
    }

    pub fn goal_match(&self) -> GoalMatch {
        self.goal_match
    }

    fn encode_into(&self, row: &mut [f64], s: &[f32], g: &[f32]) {
        let d = self.obs_dim;
        for j in 0..d {
            row[j] = (s[j] as f64 - self.shift[j]) * self.scale[j];
            row[d + j] = (g[j] as f64 - self.shift[j]) * self.scale[j];
        }
    }

    fn inputs<'a>(&self, pairs: impl ExactSizeIterator<Item = (&'a [f32], &'a [f32])>) -> Array2<f64> {
        let mut x = Array2::zeros((pairs.len(), 2 * self.obs_dim));
        for (mut row, (s, g)) in x.rows_mut().into_iter().zip(pairs) {
            self.encode_into(row.as_slice_mut().expect("contiguous row"), s, g);
        }
        x
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.f64(self.gamma);
        w.f64(self.momentum);
        match self.goal_match {
            GoalMatch::Exact => w.f64(-1.0),
            GoalMatch::Within(t) => w.f64(t),
        }
        w.f64s(&self.shift);
        w.f64s(&self.scale);
        self.online.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let gamma = r.f64()?;
        let momentum = r.f64()?;
        let tol = r.f64()?;
        let goal_match = if tol < 0.0 { GoalMatch::Exact } else { GoalMatch::Within(tol) };
        let shift = r.f64s()?;
        let scale = r.f64s()?;
        let online = Mlp::read(&mut r)?;
        r.finish()?;
        let d = shift.len();
        if scale.len() != d || online.in_dim() != 2 * d || !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::CorruptHeader("inconsistent Q network header".into()));
        }
        Ok(MlpQ {
            gamma,
            num_actions: online.out_dim(),
            obs_dim: d,
            goal_match,
            shift,
            scale,
            target: online.clone(),
            opt: Momentum::new(online.num_params(), 0.0, momentum),
            online,
            momentum,
        })
    }
}

impl QFunction for MlpQ {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn q_values(&self, s: &[f32], g: &[f32]) -> Vec<f64> {
        let mut row = vec![0.0; 2 * self.obs_dim];
        self.encode_into(&mut row, s, g);
        self.online.forward_one(&row)
    }

    fn max_q_batch(&self, pairs: &[(&[f32], &[f32])]) -> Vec<f64> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(1024) {
            let q = self.online.forward(self.inputs(chunk.iter().copied()).view());
            out.extend(q.rows().into_iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)));
        }
        out
    }

    fn same_state(&self, a: &[f32], b: &[f32]) -> bool {
        self.goal_match.matches(a, b)
    }
}

impl TrainableQ for MlpQ {
    fn td_update(&mut self, batch: &[QSample<'_>], lr: f64) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty TD batch".into()));
        }
        let b = batch.len();
        let x = self.inputs(batch.iter().map(|s| (s.state, s.goal)));
        let x_next = self.inputs(batch.iter().map(|s| (s.next_state, s.goal)));
        let select = self.online.forward(x_next.view());
        let evaluate = self.target.forward(x_next.view());
        let (q, tape) = self.online.forward_tape(x.view());
        let mut dy = Array2::zeros((b, self.num_actions));
        let mut loss = 0.0;
        for (k, smp) in batch.iter().enumerate() {
            if smp.action >= self.num_actions {
                return Err(Error::InvalidInput(format!("action {} out of range", smp.action)));
            }
            let y = if self.goal_match.matches(smp.next_state, smp.goal) {
                1.0
            } else {
                let row = select.row(k);
                let a_star = crate::util::argmax(row.as_slice().expect("contiguous"));
                self.gamma * evaluate[[k, a_star]]
            };
            let err = q[[k, smp.action]] - y;
            loss += err * err;
            dy[[k, smp.action]] = 2.0 * err / b as f64;
        }
        let mut grad = vec![0.0; self.online.num_params()];
        self.online.backward(&tape, dy.view(), &mut grad);
        clip_norm(&mut grad, 10.0);
        self.opt.lr = lr;
        self.opt.step(self.online.params_mut(), &grad);
        Ok(loss / b as f64)
    }

    fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}
