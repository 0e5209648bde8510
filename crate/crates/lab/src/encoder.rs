use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use synthkit_core::{Embeddings, Error, Matrix, Result};

pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 1.0;

/// `d_out × d_in` weights applied as `y = normalize(W x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Vec<f64>,
}

/// Inputs and pre-normalization outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Matrix<f64>,
    raw_norms: Vec<f64>,
    output: Embeddings,
}

impl HeadCache {
    pub fn output(&self) -> &Embeddings {
        &self.output
    }
}

impl LinearHead {
    /// Identity (where square) plus seeded Gaussian jitter of scale `jitter/sqrt(d_in)`.
    pub fn near_identity(d_in: usize, d_out: usize, jitter: f64, rng: &mut ChaCha8Rng) -> Self {
        let scale = jitter / (d_in as f64).sqrt();
        let mut weights = vec![0.0; d_out * d_in];
        for r in 0..d_out {
            for c in 0..d_in {
                let eye = if r == c { 1.0 } else { 0.0 };
                let z: f64 = rng.sample(StandardNormal);
                weights[r * d_in + c] = eye + scale * z;
            }
        }
        Self { d_in, d_out, weights }
    }

    fn raw(&self, x: &[f64]) -> Vec<f64> {
        (0..self.d_out)
            .map(|r| self.weights[r * self.d_in..(r + 1) * self.d_in].iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    pub fn forward(&self, x: &Embeddings) -> Result<HeadCache> {
        if x.dim() != self.d_in {
            return Err(Error::DimensionMismatch(format!("head expects dim {}, got {}", self.d_in, x.dim())));
        }
        let mut out = Vec::with_capacity(x.rows() * self.d_out);
        let mut norms = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let u = self.raw(x.row(i));
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::NonNormalizable(i));
            }
            out.extend(u.iter().map(|v| v / n));
            norms.push(n);
        }
        Ok(HeadCache {
            input: x.matrix().clone(),
            raw_norms: norms,
            output: Embeddings::new(x.rows(), self.d_out, out)?,
        })
    }

    pub fn encode(&self, x: &Embeddings) -> Result<Embeddings> {
        Ok(self.forward(x)?.output)
    }

    /// Accumulates `dL/dW` into `grad` given `dL/dy` for every output row.
    pub fn backward(&self, cache: &HeadCache, d_out: &Matrix<f64>, grad: &mut [f64]) {
        for i in 0..cache.output.rows() {
            let y = cache.output.row(i);
            let g = d_out.row(i);
            let proj: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            let x = cache.input.row(i);
            let inv = 1.0 / cache.raw_norms[i];
            for r in 0..self.d_out {
                let du = (g[r] - y[r] * proj) * inv;
                if du == 0.0 {
                    continue;
                }
                let row = &mut grad[r * self.d_in..(r + 1) * self.d_in];
                row.iter_mut().zip(x).for_each(|(w, v)| *w += du * v);
            }
        }
    }
}

/// Image and text heads plus a learnable temperature stored as `ln τ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub image: LinearHead,
    pub text: LinearHead,
    pub log_temperature: f64,
}

impl ToyEncoder {
    pub fn new(dim: usize, temperature: f64, jitter: f64, seed: u64) -> Result<Self> {
        if !(MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&temperature) {
            return Err(Error::invalid(format!(
                "temperature must lie in [{MIN_TEMPERATURE}, {MAX_TEMPERATURE}], got {temperature}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            image: LinearHead::near_identity(dim, dim, jitter, &mut rng),
            text: LinearHead::near_identity(dim, dim, jitter, &mut rng),
            log_temperature: temperature.ln(),
        })
    }

    pub fn temperature(&self) -> f64 {
        self.log_temperature.exp()
    }

    pub fn parameter_count(&self) -> usize {
        self.image.weights.len() + self.text.weights.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.image.weights.iter().chain(&self.text.weights).all(|w| w.is_finite()) && self.log_temperature.is_finite()
    }
}

/// Gradients laid out like [`ToyEncoder`].
#[derive(Debug, Clone)]
pub struct EncoderGrad {
    pub image: Vec<f64>,
    pub text: Vec<f64>,
    pub log_temperature: f64,
}

impl EncoderGrad {
    pub fn zeros(enc: &ToyEncoder) -> Self {
        Self {
            image: vec![0.0; enc.image.weights.len()],
            text: vec![0.0; enc.text.weights.len()],
            log_temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(params: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; params], v: vec![0.0; params] }
    }

    /// One update; `ln τ` is clamped so the temperature stays in range.
    pub fn apply(&mut self, enc: &mut ToyEncoder, grad: &EncoderGrad, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let params = enc
            .image
            .weights
            .iter_mut()
            .chain(enc.text.weights.iter_mut())
            .chain(std::iter::once(&mut enc.log_temperature));
        let grads = grad.image.iter().chain(&grad.text).chain(std::iter::once(&grad.log_temperature));
        for (k, (p, &g)) in params.zip(grads).enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
        enc.log_temperature = enc.log_temperature.clamp(MIN_TEMPERATURE.ln(), MAX_TEMPERATURE.ln());
    }
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
pub fn learning_rate(base: f64, step: usize, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1);
    let t = (step - warmup) as f64 / span as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
}
