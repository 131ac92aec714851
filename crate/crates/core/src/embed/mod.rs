//! Perceptual encoder training and the embedding index.
//!
//! The encoder is trained with a reachability-gated contrastive loss
//! `L_Q = hinge(d_φ − d_p)·1[d_Q ≤ c_Q] + hinge(d_p − d_φ)·1[d_Q ≥ c_Q]`
//! and three auxiliary heads (forward model, inverse dynamics, time to
//! goal), all trained jointly.

mod encoder;
mod index;

pub use encoder::{AuxHeads, Encoder, EncoderArch};
pub use index::{embed_all, EmbeddingIndex, Group};

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{sample_hindsight, HindsightMode, TrajectoryLog};
use crate::error::{Error, Result};
use crate::nn::{clip_norm, Adam};
use crate::qlearn::{d_q_batch, QFunction};
use crate::util::{l2, same_bits};
use encoder::softmax;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedTrainConfig {
    pub arch: EncoderArch,
    pub latent_dim: usize,
    pub head_hidden: usize,
    pub d_p: f64,
    pub c_q: f64,
    pub margin: f64,
    pub w_q: f64,
    pub w_t: f64,
    pub w_inv: f64,
    pub w_fwd: f64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub t_max: usize,
    /// Treat the forward-model target `z_{t+1}` as a constant.
    pub stop_grad: bool,
    pub log_every: usize,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            arch: EncoderArch::Mlp { hidden: 64 },
            latent_dim: 16,
            head_hidden: 64,
            d_p: 1.0,
            c_q: 1.0,
            margin: 0.0,
            w_q: 1.0,
            w_t: 1.0,
            w_inv: 1.0,
            w_fwd: 1.0,
            steps: 5000,
            batch: 128,
            lr: 1e-3,
            t_max: 10,
            stop_grad: true,
            log_every: 100,
        }
    }
}

impl EmbedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_p > 0.0 && self.c_q > 0.0) {
            return Err(Error::Config("d_p and c_q must be positive".into()));
        }
        if [self.w_q, self.w_t, self.w_inv, self.w_fwd, self.margin]
            .iter()
            .any(|w| !(*w >= 0.0))
        {
            return Err(Error::Config("loss weights and margin must be non-negative".into()));
        }
        if self.steps == 0 || self.batch == 0 || !(self.lr > 0.0) || self.log_every == 0 {
            return Err(Error::Config("embedding training counts and rates must be positive".into()));
        }
        Ok(())
    }
}

pub fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// The reachability-gated contrastive loss for one pair.
pub fn loss_lq(d_phi: f64, d_q: f64, d_p: f64, c_q: f64, margin: f64) -> f64 {
    let mut l = 0.0;
    if d_q <= c_q {
        l += hinge(d_phi - d_p + margin);
    }
    if d_q >= c_q {
        l += hinge(d_p - d_phi + margin);
    }
    l
}

/// Squared error of a forward-model prediction.
pub fn loss_fwd(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// Cross-entropy of a normalized distribution against a label.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}

/// Encoder plus heads, with one flat parameter space
/// `[encoder | fwd | inv | time]` for optimization and gradient checks.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedModel {
    pub encoder: Encoder,
    pub heads: AuxHeads,
}

/// A training batch; `d_q` holds the frozen reachability distance of each
/// `(state, goal)` pair.
#[derive(Clone, Debug, Default)]
pub struct EmbedBatch<'a> {
    pub states: Vec<&'a [f32]>,
    pub next: Vec<&'a [f32]>,
    pub goals: Vec<&'a [f32]>,
    pub actions: Vec<usize>,
    pub offsets: Vec<usize>,
    pub d_q: Vec<f64>,
}

impl EmbedBatch<'_> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Per-term batch-mean losses and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_q: f64,
    pub l_t: f64,
    pub l_inv: f64,
    pub l_fwd: f64,
}

impl EmbedModel {
    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.heads.num_params()
    }

    fn ranges(&self) -> [std::ops::Range<usize>; 4] {
        let e = self.encoder.num_params();
        let f = e + self.heads.fwd.num_params();
        let i = f + self.heads.inv.num_params();
        let t = i + self.heads.time.num_params();
        [0..e, e..f, f..i, i..t]
    }

    pub fn param(&self, k: usize) -> f64 {
        let [e, f, i, _] = self.ranges();
        if k < e.end {
            self.encoder.params()[k]
        } else if k < f.end {
            self.heads.fwd.params()[k - f.start]
        } else if k < i.end {
            self.heads.inv.params()[k - i.start]
        } else {
            self.heads.time.params()[k - i.end]
        }
    }

    pub fn set_param(&mut self, k: usize, v: f64) {
        let [e, f, i, _] = self.ranges();
        if k < e.end {
            self.encoder.params_mut()[k] = v;
        } else if k < f.end {
            self.heads.fwd.params_mut()[k - f.start] = v;
        } else if k < i.end {
            self.heads.inv.params_mut()[k - i.start] = v;
        } else {
            self.heads.time.params_mut()[k - i.end] = v;
        }
    }

    /// Batch losses; when `grad` is given, accumulates the gradient of the
    /// weighted total into it.
    pub fn loss_and_grad(
        &self,
        batch: &EmbedBatch<'_>,
        cfg: &EmbedTrainConfig,
        grad: Option<&mut [f64]>,
    ) -> LossBreakdown {
        self.loss_split(&self.encoder, batch, cfg, grad)
    }

    /// As [`Self::loss_and_grad`], but with the forward-model target
    /// `z_{t+1}` produced by `target_encoder`.
    pub fn loss_split(
        &self,
        target_encoder: &Encoder,
        batch: &EmbedBatch<'_>,
        cfg: &EmbedTrainConfig,
        grad: Option<&mut [f64]>,
    ) -> LossBreakdown {
        let b = batch.len();
        let bf = b as f64;
        let d = self.encoder.latent_dim();
        let na = self.heads.num_actions();
        let mut rows: Vec<&[f32]> = Vec::with_capacity(3 * b);
        rows.extend(&batch.states);
        rows.extend(&batch.next);
        rows.extend(&batch.goals);
        let (z, tape) = self.encoder.forward_tape(&rows);
        let zt = z.slice(s![0..b, ..]);
        let zg = z.slice(s![2 * b..3 * b, ..]);
        let zn = if std::ptr::eq(target_encoder, &self.encoder) {
            z.slice(s![b..2 * b, ..]).to_owned()
        } else {
            target_encoder.embed_batch(&batch.next)
        };
        let mut dz = Array2::<f64>::zeros((3 * b, d));
        let mut out = LossBreakdown::default();

        for k in 0..b {
            let diff: Vec<f64> = zt.row(k).iter().zip(zg.row(k)).map(|(a, c)| a - c).collect();
            let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dq = batch.d_q[k];
            out.l_q += loss_lq(dist, dq, cfg.d_p, cfg.c_q, cfg.margin) / bf;
            let mut coef = 0.0;
            if dq <= cfg.c_q && dist - cfg.d_p + cfg.margin > 0.0 {
                coef += 1.0;
            }
            if dq >= cfg.c_q && cfg.d_p - dist + cfg.margin > 0.0 {
                coef -= 1.0;
            }
            if coef != 0.0 && dist > 0.0 {
                for j in 0..d {
                    let g = cfg.w_q * coef * diff[j] / dist / bf;
                    dz[[k, j]] += g;
                    dz[[2 * b + k, j]] -= g;
                }
            }
        }

        let mut xf = Array2::<f64>::zeros((b, d + na));
        xf.slice_mut(s![.., 0..d]).assign(&zt);
        for (k, &a) in batch.actions.iter().enumerate() {
            xf[[k, d + a]] = 1.0;
        }
        let (pred, fwd_tape) = self.heads.fwd.forward_tape(xf.view());
        let err = &pred - &zn;
        out.l_fwd = err.iter().map(|e| e * e).sum::<f64>() / bf;
        let d_pred = err.mapv(|e| cfg.w_fwd * 2.0 * e / bf);

        let mut xp = Array2::<f64>::zeros((b, 2 * d));
        xp.slice_mut(s![.., 0..d]).assign(&zt);
        xp.slice_mut(s![.., d..2 * d]).assign(&zg);
        let (inv_logits, inv_tape) = self.heads.inv.forward_tape(xp.view());
        let (time_logits, time_tape) = self.heads.time.forward_tape(xp.view());
        let mut d_inv = Array2::<f64>::zeros(inv_logits.dim());
        let mut d_time = Array2::<f64>::zeros(time_logits.dim());
        for k in 0..b {
            let p = softmax(inv_logits.row(k).as_slice().expect("contiguous"));
            out.l_inv += cross_entropy(&p, batch.actions[k]) / bf;
            for (a, pa) in p.iter().enumerate() {
                let y = if a == batch.actions[k] { 1.0 } else { 0.0 };
                d_inv[[k, a]] = cfg.w_inv * (pa - y) / bf;
            }
            let bin = batch.offsets[k].min(self.heads.t_max());
            let p = softmax(time_logits.row(k).as_slice().expect("contiguous"));
            out.l_t += cross_entropy(&p, bin) / bf;
            for (t, pt) in p.iter().enumerate() {
                let y = if t == bin { 1.0 } else { 0.0 };
                d_time[[k, t]] = cfg.w_t * (pt - y) / bf;
            }
        }
        out.total = cfg.w_q * out.l_q + cfg.w_t * out.l_t + cfg.w_inv * out.l_inv + cfg.w_fwd * out.l_fwd;

        if let Some(grad) = grad {
            let [e, f, i, t] = self.ranges();
            let dxf = self.heads.fwd.backward(&fwd_tape, d_pred.view(), &mut grad[f]);
            let dxi = self.heads.inv.backward(&inv_tape, d_inv.view(), &mut grad[i]);
            let dxt = self.heads.time.backward(&time_tape, d_time.view(), &mut grad[t]);
            for k in 0..b {
                for j in 0..d {
                    dz[[k, j]] += dxf[[k, j]] + dxi[[k, j]] + dxt[[k, j]];
                    dz[[2 * b + k, j]] += dxi[[k, d + j]] + dxt[[k, d + j]];
                    if !cfg.stop_grad {
                        dz[[b + k, j]] -= d_pred[[k, j]];
                    }
                }
            }
            self.encoder.backward(&tape, dz.view(), &mut grad[e]);
        }
        out
    }
}

/// One point of the encoder training curve (window means).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedLossPoint {
    pub step: usize,
    pub losses: LossBreakdown,
}

/// Draws a mixed-horizon hindsight batch and labels it with frozen `d_Q`.
pub fn sample_embed_batch<'a, Q: QFunction + ?Sized, R: rand::Rng + ?Sized>(
    log: &'a TrajectoryLog,
    q: &Q,
    size: usize,
    t_max: usize,
    rng: &mut R,
) -> Result<EmbedBatch<'a>> {
    let mut batch = EmbedBatch::default();
    for _ in 0..size {
        let h = sample_hindsight(log, HindsightMode::Mixed { t_max }, rng)?;
        batch.states.push(log.state(h.state));
        batch.next.push(log.state(h.next_state));
        batch.goals.push(log.state(h.goal_state));
        batch.actions.push(h.action);
        batch.offsets.push(h.offset);
    }
    let pairs: Vec<(&[f32], &[f32])> = batch.states.iter().copied().zip(batch.goals.iter().copied()).collect();
    batch.d_q = d_q_batch(q, &pairs);
    Ok(batch)
}

/// Trains encoder and heads jointly with Adam. Deterministic given `seed`.
pub fn train_encoder<Q: QFunction + ?Sized>(
    log: &TrajectoryLog,
    q: &Q,
    cfg: &EmbedTrainConfig,
    seed: u64,
) -> Result<(Encoder, AuxHeads, Vec<EmbedLossPoint>)> {
    cfg.validate()?;
    if log.total_steps() == 0 {
        return Err(Error::EmptyLog);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::new(cfg.arch, log, cfg.latent_dim, &mut rng)?;
    let heads = AuxHeads::new(encoder.latent_dim(), log.num_actions(), cfg.t_max, cfg.head_hidden, &mut rng)?;
    let mut model = EmbedModel { encoder, heads };
    let [re, rf, ri, rt] = model.ranges();
    let mut opt_e = Adam::new(re.len(), cfg.lr);
    let mut opt_f = Adam::new(rf.len(), cfg.lr);
    let mut opt_i = Adam::new(ri.len(), cfg.lr);
    let mut opt_t = Adam::new(rt.len(), cfg.lr);
    let mut grad = vec![0.0; model.num_params()];
    let mut curve = Vec::new();
    let mut window = LossBreakdown::default();
    for step in 1..=cfg.steps {
        let batch = sample_embed_batch(log, q, cfg.batch, cfg.t_max, &mut rng)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = model.loss_and_grad(&batch, cfg, Some(&mut grad));
        if !l.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss: l.total });
        }
        clip_norm(&mut grad, 100.0);
        opt_e.step(model.encoder.params_mut(), &grad[re.clone()]);
        opt_f.step(model.heads.fwd.params_mut(), &grad[rf.clone()]);
        opt_i.step(model.heads.inv.params_mut(), &grad[ri.clone()]);
        opt_t.step(model.heads.time.params_mut(), &grad[rt.clone()]);
        window.total += l.total;
        window.l_q += l.l_q;
        window.l_t += l.l_t;
        window.l_inv += l.l_inv;
        window.l_fwd += l.l_fwd;
        if step % cfg.log_every == 0 {
            let n = cfg.log_every as f64;
            curve.push(EmbedLossPoint {
                step,
                losses: LossBreakdown {
                    total: window.total / n,
                    l_q: window.l_q / n,
                    l_t: window.l_t / n,
                    l_inv: window.l_inv / n,
                    l_fwd: window.l_fwd / n,
                },
            });
            window = LossBreakdown::default();
        }
    }
    Ok((model.encoder, model.heads, curve))
}

pub fn write_embed_curve_csv(path: impl AsRef<Path>, curve: &[EmbedLossPoint]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,total,l_q,l_t,l_inv,l_fwd")?;
    for p in curve {
        let l = p.losses;
        writeln!(f, "{},{},{},{},{},{}", p.step, l.total, l.l_q, l.l_t, l.l_inv, l.l_fwd)?;
    }
    f.flush()?;
    Ok(())
}

/// Mean `d_φ` between consecutive buffer states, skipping blocked moves
/// (bit-identical consecutive observations). At most `max_pairs` evenly
/// strided transitions are used.
pub fn mean_step_distance(encoder: &Encoder, log: &TrajectoryLog, max_pairs: usize) -> Result<f64> {
    if log.total_steps() == 0 {
        return Err(Error::EmptyLog);
    }
    let stride = log.total_steps().div_ceil(max_pairs.max(1));
    let mut total = 0.0;
    let mut n = 0usize;
    for k in (0..log.total_steps()).step_by(stride) {
        let t = log.transition(k);
        if same_bits(t.obs, t.next_obs) {
            continue;
        }
        total += l2(&encoder.embed(t.obs), &encoder.embed(t.next_obs));
        n += 1;
    }
    if n == 0 {
        return Err(Error::InsufficientData { have: 0, need: 1 });
    }
    Ok(total / n as f64)
}

/// `d_p = fraction ×` mean consecutive `d_φ`; refuses a collapsed encoder.
pub fn calibrate_dp(encoder: &Encoder, log: &TrajectoryLog, fraction: f64, max_pairs: usize) -> Result<f64> {
    if !(fraction > 0.0) {
        return Err(Error::InvalidInput(format!("fraction={fraction} must be positive")));
    }
    let d_p = fraction * mean_step_distance(encoder, log, max_pairs)?;
    if !(d_p > 1e-9) {
        return Err(Error::Degenerate(format!(
            "consecutive states embed to the same point (d_p = {d_p:e}); the encoder has collapsed"
        )));
    }
    Ok(d_p)
}
