//! Small dense networks in `f64` with hand-written backprop.
//!
//! Parameters live in one flat vector (per layer: weights row-major
//! `out × in`, then biases), which keeps optimizers and finite-difference
//! checks trivial.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation value.
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::CorruptHeader(format!("unknown activation code {c}"))),
        }
    }
}

/// Fully connected network; hidden layers use `act`, the output is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    act: Activation,
    params: Vec<f64>,
}

/// Intermediate values kept by [`Mlp::forward_tape`] for backprop.
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`. Weights are drawn with variance
    /// scaled to fan-in; biases start at zero.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], act: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {sizes:?}")));
        }
        let mut params = Vec::with_capacity(Self::count(sizes));
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let last = l + 2 == sizes.len();
            let gain = match (act, last) {
                (_, true) => 1.0,
                (Activation::Relu, false) => 2.0,
                (Activation::Tanh, false) => 1.0,
            };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            act,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.act
    }

    pub fn in_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let off = Self::count(&self.sizes[..=l]);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i]).expect("layer shape");
        let b = ArrayView1::from(&self.params[off + o * i..off + o * i + o]);
        (w, b)
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in 0..self.layers() {
            let (w, b) = self.layer(l);
            let mut z = h.dot(&w.t()) + b;
            if l + 1 < self.layers() {
                z.mapv_inplace(|v| self.act.apply(v));
            }
            h = z;
        }
        h
    }

    pub fn forward_one(&self, x: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        self.forward(x).into_raw_vec_and_offset().0
    }

    pub fn forward_tape(&self, x: ArrayView2<f64>) -> (Array2<f64>, Tape) {
        let mut inputs = Vec::with_capacity(self.layers());
        let mut pre = Vec::with_capacity(self.layers());
        let mut h = x.to_owned();
        for l in 0..self.layers() {
            let (w, b) = self.layer(l);
            let z = h.dot(&w.t()) + b;
            inputs.push(h);
            if l + 1 < self.layers() {
                h = z.mapv(|v| self.act.apply(v));
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, Tape { inputs, pre })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `dy = ∂L/∂output`; returns
    /// `∂L/∂input`.
    pub fn backward(&self, tape: &Tape, dy: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        assert_eq!(grad.len(), self.params.len(), "gradient buffer size");
        let mut d = dy.to_owned();
        for l in (0..self.layers()).rev() {
            if l + 1 < self.layers() {
                let act = self.act;
                d.zip_mut_with(&tape.pre[l], |g, &p| *g *= act.grad(p));
            }
            let (w, _) = self.layer(l);
            let x = &tape.inputs[l];
            let off = Self::count(&self.sizes[..=l]);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let dw = d.t().dot(x);
            for (g, v) in grad[off..off + o * i].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            let db: Array1<f64> = d.sum_axis(Axis(0));
            for (g, v) in grad[off + o * i..off + o * i + o].iter_mut().zip(db.iter()) {
                *g += v;
            }
            d = d.dot(&w);
        }
        d
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u32(self.sizes.len() as u32);
        for &s in &self.sizes {
            w.u32(s as u32);
        }
        w.u32(self.act.code());
        w.f64s(&self.params);
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let n = r.u32()? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::CorruptHeader(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let act = Activation::from_code(r.u32()?)?;
        let params = r.f64s()?;
        if sizes.contains(&0) || params.len() != Self::count(&sizes) {
            return Err(Error::CorruptHeader("parameter count does not match layer sizes".into()));
        }
        Ok(Mlp { sizes, act, params })
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub lr: f64,
    pub mu: f64,
    vel: Vec<f64>,
}

impl Momentum {
    pub fn new(n: usize, lr: f64, mu: f64) -> Self {
        Momentum { lr, mu, vel: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for k in 0..params.len() {
            self.vel[k] = self.mu * self.vel[k] - self.lr * grad[k];
            params[k] += self.vel[k];
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`.
pub fn clip_norm(grad: &mut [f64], max_norm: f64) {
    let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}
