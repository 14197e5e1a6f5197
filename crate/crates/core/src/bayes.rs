//! Variational layers.
//!
//! Every trainable weight and bias is a factorized Gaussian `N(mu, sigma^2)`
//! with `sigma = softplus(rho)`. A forward pass draws one weight sample per
//! call through the reparameterization `w = mu + sigma * eps`, so gradients
//! reach both `mu` and `rho`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use seizure_tensor::{kernels::softplus, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Initial raw scale; `softplus(-3) ≈ 0.0486`.
pub const INITIAL_RHO: f64 = -3.0;

/// Gaussian weight prior `p(w) = N(mean, std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl PriorSpec {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::Contract(format!("prior std must be positive and finite, got {std}")));
        }
        Ok(Self { mean, std })
    }
}

/// Posterior mean and raw scale for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalParam {
    pub mu: Tensor,
    pub rho: Tensor,
}

impl VariationalParam {
    pub fn new(mu: Tensor, rho: Tensor) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(Error::Contract(format!(
                "mu shape {:?} differs from rho shape {:?}",
                mu.shape(),
                rho.shape()
            )));
        }
        Ok(Self {
            mu: mu.requiring_grad(),
            rho: rho.requiring_grad(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        self.mu.shape()
    }

    pub fn numel(&self) -> usize {
        self.mu.numel()
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.rho.data().iter().map(|&r| softplus(r)).collect()
    }

    /// `mu + softplus(rho) * eps` with `eps` supplied by the caller.
    pub fn sample_with_noise(&self, eps: &[f64]) -> Tensor {
        assert_eq!(eps.len(), self.numel(), "noise length mismatch");
        let data = self
            .mu
            .data()
            .iter()
            .zip(self.rho.data())
            .zip(eps)
            .map(|((&m, &r), &e)| m + softplus(r) * e)
            .collect();
        Tensor::new(self.shape().to_vec(), data).expect("same shape")
    }

    /// One reparameterized draw.
    pub fn sample(&self, rng: &mut Rng) -> Tensor {
        let eps = standard_normal(rng, self.numel());
        self.sample_with_noise(&eps)
    }

    /// Closed-form `KL(q || p)` summed over elements, without a tape.
    pub fn kl_value(&self, prior: &PriorSpec) -> f64 {
        self.mu
            .data()
            .iter()
            .zip(self.rho.data())
            .map(|(&m, &r)| gaussian_kl(m, softplus(r), prior.mean, prior.std))
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.mu.zero_grad();
        self.rho.zero_grad();
    }
}

/// `KL(N(mq, sq^2) || N(mp, sp^2))`.
pub fn gaussian_kl(mq: f64, sq: f64, mp: f64, sp: f64) -> f64 {
    (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
}

pub fn standard_normal(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Tape handles for one variational parameter.
#[derive(Debug, Clone, Copy)]
pub struct ParamVars {
    pub mu: Var,
    pub rho: Var,
}

impl ParamVars {
    /// Records `p` on the tape; `trainable` decides whether gradients flow.
    pub fn record(tape: &mut Tape, p: &VariationalParam, trainable: bool) -> Self {
        if trainable {
            Self {
                mu: tape.leaf(&p.mu),
                rho: tape.leaf(&p.rho),
            }
        } else {
            Self {
                mu: tape.constant(p.mu.detached()),
                rho: tape.constant(p.rho.detached()),
            }
        }
    }

    /// Reparameterized sample on the tape. `None` noise returns `mu` itself.
    pub fn sample(&self, tape: &mut Tape, noise: Option<&mut Rng>) -> Result<Var> {
        match noise {
            None => Ok(self.mu),
            Some(rng) => {
                let n = tape.value(self.mu).numel();
                let shape = tape.shape(self.mu).to_vec();
                let eps = tape.constant(Tensor::new(shape, standard_normal(rng, n))?);
                let sigma = tape.softplus(self.rho);
                let scaled = tape.mul(sigma, eps)?;
                Ok(tape.add(self.mu, scaled)?)
            }
        }
    }

    /// Differentiable `KL(q || p)` summed over elements.
    pub fn kl(&self, tape: &mut Tape, prior: &PriorSpec) -> Result<Var> {
        let n = tape.value(self.mu).numel() as f64;
        let sigma = tape.softplus(self.rho);
        let log_sigma = tape.log(sigma);
        let var_q = tape.square(sigma);
        let centered = tape.add_scalar(self.mu, -prior.mean);
        let sq_diff = tape.square(centered);
        let num = tape.add(var_q, sq_diff)?;
        let quad = tape.scale(num, 1.0 / (2.0 * prior.std * prior.std));
        let per = tape.sub(quad, log_sigma)?;
        let total = tape.sum(per);
        Ok(tape.add_scalar(total, n * (prior.std.ln() - 0.5)))
    }
}

/// Differentiable KL of a parameter to its prior on a fresh tape.
pub fn kl_to_prior(param: &VariationalParam, prior: &PriorSpec) -> Result<(Tape, Var, ParamVars)> {
    let mut tape = Tape::new();
    let vars = ParamVars::record(&mut tape, param, true);
    let kl = vars.kl(&mut tape, prior)?;
    Ok((tape, kl, vars))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    /// Convolution, then activation, then non-overlapping max-pool (`pool = 1` disables it).
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![out_channels, in_channels, kernel, kernel],
            LayerKind::Dense {
                in_features,
                out_features,
            } => vec![in_features, out_features],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Conv2d { out_channels, .. } => out_channels,
            LayerKind::Dense { out_features, .. } => out_features,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerKind::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerKind::Dense { in_features, .. } => in_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesLayer {
    pub kind: LayerKind,
    pub weight: VariationalParam,
    pub bias: VariationalParam,
    pub prior: PriorSpec,
    pub activation: Activation,
}

/// Tape handles for a layer's weight and bias.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: ParamVars,
    pub bias: ParamVars,
}

impl BayesLayer {
    /// He-uniform means, zero bias means, `rho = INITIAL_RHO`.
    pub fn init(kind: LayerKind, activation: Activation, prior: PriorSpec, rng: &mut Rng) -> Self {
        let bound = (6.0 / kind.fan_in() as f64).sqrt();
        let wshape = kind.weight_shape();
        let mu_w = Tensor::from_fn(&wshape, |_| rng.gen_range(-bound..bound));
        let rho_w = Tensor::filled(&wshape, INITIAL_RHO);
        let nb = kind.bias_len();
        Self {
            kind,
            weight: VariationalParam::new(mu_w, rho_w).expect("same shape"),
            bias: VariationalParam::new(Tensor::zeros(&[nb]), Tensor::filled(&[nb], INITIAL_RHO))
                .expect("same shape"),
            prior,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.shape() != self.kind.weight_shape().as_slice() || self.bias.shape() != [self.kind.bias_len()] {
            return Err(Error::Contract(format!(
                "layer parameters {:?}/{:?} inconsistent with {:?}",
                self.weight.shape(),
                self.bias.shape(),
                self.kind
            )));
        }
        Ok(())
    }

    /// Draws one weight and one bias sample.
    pub fn sample_weights(&self, rng: &mut Rng) -> (Tensor, Tensor) {
        (self.weight.sample(rng), self.bias.sample(rng))
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> LayerVars {
        LayerVars {
            weight: ParamVars::record(tape, &self.weight, trainable),
            bias: ParamVars::record(tape, &self.bias, trainable),
        }
    }

    pub fn kl_value(&self) -> f64 {
        self.weight.kl_value(&self.prior) + self.bias.kl_value(&self.prior)
    }

    pub fn kl(&self, tape: &mut Tape, vars: &LayerVars) -> Result<Var> {
        let kw = vars.weight.kl(tape, &self.prior)?;
        let kb = vars.bias.kl(tape, &self.prior)?;
        Ok(tape.add(kw, kb)?)
    }

    /// Applies the layer to `input` with freshly sampled weights (`noise`
    /// `None` uses the posterior means). Conv input is `[N,C,H,W]`, dense
    /// input is `[N,F]`.
    pub fn forward(&self, tape: &mut Tape, vars: &LayerVars, input: Var, mut noise: Option<&mut Rng>) -> Result<Var> {
        let w = vars.weight.sample(tape, noise.as_deref_mut())?;
        let b = vars.bias.sample(tape, noise)?;
        let out = match self.kind {
            LayerKind::Conv2d {
                in_channels,
                stride,
                padding,
                ..
            } => {
                let s = tape.shape(input);
                if s.len() != 4 || s[1] != in_channels {
                    return Err(Error::Tensor(seizure_tensor::TensorError::Dimension(format!(
                        "conv layer expects [N,{in_channels},H,W], got {s:?}"
                    ))));
                }
                tape.conv2d(input, w, Some(b), stride, padding)?
            }
            LayerKind::Dense { in_features, .. } => {
                let s = tape.shape(input);
                if s.len() != 2 || s[1] != in_features {
                    return Err(Error::Tensor(seizure_tensor::TensorError::Dimension(format!(
                        "dense layer expects [N,{in_features}], got {s:?}"
                    ))));
                }
                let z = tape.matmul(input, w)?;
                tape.bias_add(z, b)?
            }
        };
        let out = match self.activation {
            Activation::Identity => out,
            Activation::Relu => tape.relu(out),
        };
        match self.kind {
            LayerKind::Conv2d { pool, .. } if pool > 1 => Ok(tape.maxpool2d(out, pool)?),
            _ => Ok(out),
        }
    }

    /// Tape-free convenience wrapper around [`BayesLayer::forward`].
    pub fn forward_value(&self, input: &Tensor, noise: Option<&mut Rng>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, &vars, x, noise)?;
        Ok(tape.value(y).clone())
    }

    pub fn zero_grad(&mut self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }

    /// Sets every `rho` to `rho`; a very negative value collapses sigma to ~0.
    pub fn set_rho(&mut self, rho: f64) {
        for p in [&mut self.weight, &mut self.bias] {
            p.rho.data_mut().iter_mut().for_each(|r| *r = rho);
        }
    }
}
