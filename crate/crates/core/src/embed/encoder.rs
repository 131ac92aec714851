use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::TrajectoryLog;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, Tape};

const ENCODER_MAGIC: &[u8; 4] = b"PENC";
const HEADS_MAGIC: &[u8; 4] = b"PHDS";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncoderArch {
    /// `z = obs`; latent dimension equals observation dimension.
    Identity,
    Linear,
    /// Two tanh hidden layers.
    Mlp { hidden: usize },
}

/// The perceptual encoder `f_φ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    arch: EncoderArch,
    in_dim: usize,
    out_dim: usize,
    shift: Vec<f64>,
    scale: Vec<f64>,
    net: Option<Mlp>,
}

impl Encoder {
    pub fn identity(dim: usize) -> Self {
        Encoder {
            arch: EncoderArch::Identity,
            in_dim: dim,
            out_dim: dim,
            shift: vec![0.0; dim],
            scale: vec![1.0; dim],
            net: None,
        }
    }

    /// A freshly initialized encoder whose input standardization is fitted
    /// to the states of `log`.
    pub fn new<R: Rng + ?Sized>(
        arch: EncoderArch,
        log: &TrajectoryLog,
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let d = log.obs_dim();
        if arch == EncoderArch::Identity {
            return Ok(Self::identity(d));
        }
        if latent_dim == 0 {
            return Err(Error::InvalidInput("latent dimension must be positive".into()));
        }
        let (shift, scale) = standardization(log);
        let sizes = match arch {
            EncoderArch::Linear => vec![d, latent_dim],
            EncoderArch::Mlp { hidden } => vec![d, hidden, hidden, latent_dim],
            EncoderArch::Identity => unreachable!(),
        };
        Ok(Encoder {
            arch,
            in_dim: d,
            out_dim: latent_dim,
            shift,
            scale,
            net: Some(Mlp::new(&sizes, Activation::Tanh, rng)?),
        })
    }

    pub fn arch(&self) -> EncoderArch {
        self.arch
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.out_dim
    }

    pub fn num_params(&self) -> usize {
        self.net.as_ref().map_or(0, Mlp::num_params)
    }

    pub fn params(&self) -> &[f64] {
        self.net.as_ref().map_or(&[], Mlp::params)
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.as_mut().map_or(&mut [], Mlp::params_mut)
    }

    fn inputs(&self, rows: &[&[f32]]) -> Array2<f64> {
        Array2::from_shape_fn((rows.len(), self.in_dim), |(i, j)| {
            (rows[i][j] as f64 - self.shift[j]) * self.scale[j]
        })
    }

    pub fn embed(&self, obs: &[f32]) -> Vec<f64> {
        self.embed_batch(&[obs]).into_raw_vec_and_offset().0
    }

    pub fn embed_batch(&self, rows: &[&[f32]]) -> Array2<f64> {
        let x = self.inputs(rows);
        match &self.net {
            None => x,
            Some(net) => net.forward(x.view()),
        }
    }

    pub(crate) fn forward_tape(&self, rows: &[&[f32]]) -> (Array2<f64>, Option<Tape>) {
        let x = self.inputs(rows);
        match &self.net {
            None => (x, None),
            Some(net) => {
                let (z, tape) = net.forward_tape(x.view());
                (z, Some(tape))
            }
        }
    }

    pub(crate) fn backward(&self, tape: &Option<Tape>, dz: ArrayView2<f64>, grad: &mut [f64]) {
        if let (Some(net), Some(tape)) = (&self.net, tape) {
            net.backward(tape, dz, grad);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(ENCODER_MAGIC, VERSION);
        let (code, hidden) = match self.arch {
            EncoderArch::Identity => (0, 0),
            EncoderArch::Linear => (1, 0),
            EncoderArch::Mlp { hidden } => (2, hidden),
        };
        w.u32(code);
        w.u32(hidden as u32);
        w.u32(self.in_dim as u32);
        w.u32(self.out_dim as u32);
        w.f64s(&self.shift);
        w.f64s(&self.scale);
        if let Some(net) = &self.net {
            net.write(&mut w);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, ENCODER_MAGIC, VERSION)?;
        let code = r.u32()?;
        let hidden = r.u32()? as usize;
        let arch = match code {
            0 => EncoderArch::Identity,
            1 => EncoderArch::Linear,
            2 => EncoderArch::Mlp { hidden },
            _ => return Err(Error::CorruptHeader(format!("unknown encoder kind {code}"))),
        };
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let shift = r.f64s()?;
        let scale = r.f64s()?;
        let net = match arch {
            EncoderArch::Identity => None,
            _ => Some(Mlp::read(&mut r)?),
        };
        r.finish()?;
        let consistent = shift.len() == in_dim
            && scale.len() == in_dim
            && net
                .as_ref()
                .map_or(in_dim == out_dim, |n| n.in_dim() == in_dim && n.out_dim() == out_dim);
        if !consistent {
            return Err(Error::CorruptHeader("encoder dimensions are inconsistent".into()));
        }
        Ok(Encoder {
            arch,
            in_dim,
            out_dim,
            shift,
            scale,
            net,
        })
    }
}

fn standardization(log: &TrajectoryLog) -> (Vec<f64>, Vec<f64>) {
    let d = log.obs_dim();
    let n = log.num_states().max(1) as f64;
    let mut mean = vec![0.0; d];
    let mut sq = vec![0.0; d];
    for k in 0..log.num_states() {
        for (j, &x) in log.state(k).iter().enumerate() {
            mean[j] += x as f64;
            sq[j] += (x as f64) * (x as f64);
        }
    }
    let scale = (0..d)
        .map(|j| {
            mean[j] /= n;
            let var = sq[j] / n - mean[j] * mean[j];
            if var > 1e-12 {
                1.0 / var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

/// Auxiliary heads: forward model, inverse dynamics, and time-to-goal.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxHeads {
    pub(crate) fwd: Mlp,
    pub(crate) inv: Mlp,
    pub(crate) time: Mlp,
    num_actions: usize,
    t_max: usize,
}

impl AuxHeads {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        num_actions: usize,
        t_max: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AuxHeads {
            fwd: Mlp::new(&[latent_dim + num_actions, hidden, latent_dim], Activation::Tanh, rng)?,
            inv: Mlp::new(&[2 * latent_dim, hidden, num_actions], Activation::Tanh, rng)?,
            time: Mlp::new(&[2 * latent_dim, hidden, t_max + 1], Activation::Tanh, rng)?,
            num_actions,
            t_max,
        })
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn num_params(&self) -> usize {
        self.fwd.num_params() + self.inv.num_params() + self.time.num_params()
    }

    /// Predicted next embedding for `(z, a)`.
    pub fn predict_next(&self, z: &[f64], action: usize) -> Vec<f64> {
        let mut x = z.to_vec();
        x.extend((0..self.num_actions).map(|a| if a == action { 1.0 } else { 0.0 }));
        self.fwd.forward_one(&x)
    }

    /// Action distribution `π_inv(· | z, z_g)`.
    pub fn action_probs(&self, z: &[f64], zg: &[f64]) -> Vec<f64> {
        softmax(&self.inv.forward_one(&[z, zg].concat()))
    }

    /// Distribution over `{0..=t_max}` steps to the goal (last bin is
    /// "t_max or more").
    pub fn time_probs(&self, z: &[f64], zg: &[f64]) -> Vec<f64> {
        softmax(&self.time.forward_one(&[z, zg].concat()))
    }

    pub fn time_mode(&self, z: &[f64], zg: &[f64]) -> usize {
        crate::util::argmax(&self.time_probs(z, zg))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(HEADS_MAGIC, VERSION);
        w.u32(self.num_actions as u32);
        w.u32(self.t_max as u32);
        self.fwd.write(&mut w);
        self.inv.write(&mut w);
        self.time.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, HEADS_MAGIC, VERSION)?;
        let num_actions = r.u32()? as usize;
        let t_max = r.u32()? as usize;
        let fwd = Mlp::read(&mut r)?;
        let inv = Mlp::read(&mut r)?;
        let time = Mlp::read(&mut r)?;
        r.finish()?;
        if inv.out_dim() != num_actions || time.out_dim() != t_max + 1 {
            return Err(Error::CorruptHeader("head dimensions are inconsistent".into()));
        }
        Ok(AuxHeads {
            fwd,
            inv,
            time,
            num_actions,
            t_max,
        })
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
