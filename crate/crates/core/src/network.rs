//! Bayesian CNN assembled from [`BayesLayer`]s.

use serde::{Deserialize, Serialize};
use seizure_tensor::{Tape, Tensor, Var};

use crate::bayes::{Activation, BayesLayer, LayerKind, LayerVars, PriorSpec, VariationalParam};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Number of output classes: interictal (0) and preictal (1).
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        pool: usize,
    },
    Dense {
        out_features: usize,
    },
}

/// Layer stack description. Hidden layers use ReLU; the last layer must be
/// a dense layer with [`NUM_CLASSES`] outputs and produces the pre-softmax
/// output that prior fusion acts on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// Three conv blocks (16/32/64 channels, 3×3, stride 1, same padding,
    /// 2×2 max-pool) → dense 128 → dense 2. Inputs too small to pool three
    /// times get fewer blocks; flat inputs get dense 128 → dense 2.
    pub fn default_for(input_shape: &[usize]) -> Self {
        if input_shape.len() != 3 {
            return Self::dense(input_shape.iter().product(), &[128]);
        }
        // drop trailing blocks whose pooling would empty the feature map
        let mut side = input_shape[1].min(input_shape[2]);
        let mut blocks = 0;
        while blocks < 3 && side >= 2 {
            side /= 2;
            blocks += 1;
        }
        Self::conv(input_shape, &[16, 32, 64][..blocks], &[128])
    }

    /// Conv blocks as in [`Architecture::default_for`] with the given
    /// channel counts, then dense hidden layers, then the 2-unit output.
    pub fn conv(input_shape: &[usize], channels: &[usize], hidden: &[usize]) -> Self {
        let mut layers: Vec<LayerSpec> = channels
            .iter()
            .map(|&c| LayerSpec::Conv {
                out_channels: c,
                kernel: 3,
                stride: 1,
                padding: 1,
                pool: 2,
            })
            .collect();
        layers.extend(hidden.iter().map(|&h| LayerSpec::Dense { out_features: h }));
        layers.push(LayerSpec::Dense {
            out_features: NUM_CLASSES,
        });
        Self {
            input_shape: input_shape.to_vec(),
            layers,
        }
    }

    /// Fully connected network over flat feature vectors.
    pub fn dense(in_features: usize, hidden: &[usize]) -> Self {
        let mut layers: Vec<LayerSpec> = hidden.iter().map(|&h| LayerSpec::Dense { out_features: h }).collect();
        layers.push(LayerSpec::Dense {
            out_features: NUM_CLASSES,
        });
        Self {
            input_shape: vec![in_features],
            layers,
        }
    }

    /// Resolves concrete layer kinds by propagating the input shape.
    pub fn resolve(&self) -> Result<Vec<LayerKind>> {
        if self.layers.is_empty() {
            return Err(Error::Config("architecture has no layers".into()));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { out_features }) if *out_features == NUM_CLASSES) {
            return Err(Error::Config(format!(
                "last layer must be dense with {NUM_CLASSES} outputs"
            )));
        }
        let mut shape = self.input_shape.clone();
        let mut kinds = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    pool,
                } => {
                    let [c, h, w] = shape[..] else {
                        return Err(Error::Config(format!(
                            "layer {i}: conv needs a [C,H,W] input, got {shape:?}"
                        )));
                    };
                    if out_channels == 0 || kernel == 0 || stride == 0 || pool == 0 {
                        return Err(Error::Config(format!("layer {i}: zero-sized hyperparameter")));
                    }
                    if kernel > h + 2 * padding || kernel > w + 2 * padding {
                        return Err(Error::Config(format!(
                            "layer {i}: kernel {kernel} larger than padded input {h}x{w}"
                        )));
                    }
                    let oh = (h + 2 * padding - kernel) / stride + 1;
                    let ow = (w + 2 * padding - kernel) / stride + 1;
                    if oh / pool == 0 || ow / pool == 0 {
                        return Err(Error::Config(format!(
                            "layer {i}: pool {pool} larger than conv output {oh}x{ow}"
                        )));
                    }
                    kinds.push(LayerKind::Conv2d {
                        in_channels: c,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                        pool,
                    });
                    shape = vec![out_channels, oh / pool, ow / pool];
                }
                LayerSpec::Dense { out_features } => {
                    if out_features == 0 {
                        return Err(Error::Config(format!("layer {i}: zero output features")));
                    }
                    kinds.push(LayerKind::Dense {
                        in_features: shape.iter().product(),
                        out_features,
                    });
                    shape = vec![out_features];
                }
            }
        }
        Ok(kinds)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesNet {
    pub architecture: Architecture,
    pub layers: Vec<BayesLayer>,
    /// When set every sigma is treated as 0: forward passes use the posterior
    /// means and `rho` is neither trained nor sampled. This is the plain CNN.
    pub deterministic: bool,
}

impl BayesNet {
    pub fn new(architecture: Architecture, prior: PriorSpec, rng: &mut Rng) -> Result<Self> {
        let kinds = architecture.resolve()?;
        let n = kinds.len();
        let layers = kinds
            .into_iter()
            .enumerate()
            .map(|(i, kind)| {
                let act = if i + 1 == n { Activation::Identity } else { Activation::Relu };
                BayesLayer::init(kind, act, prior, rng)
            })
            .collect();
        Ok(Self {
            architecture,
            layers,
            deterministic: false,
        })
    }

    pub fn from_layers(architecture: Architecture, layers: Vec<BayesLayer>, deterministic: bool) -> Result<Self> {
        let kinds = architecture.resolve()?;
        if kinds.len() != layers.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} layers, got {}",
                kinds.len(),
                layers.len()
            )));
        }
        for (k, l) in kinds.iter().zip(&layers) {
            if *k != l.kind {
                return Err(Error::Checkpoint(format!("layer kind {:?} != {:?}", l.kind, k)));
            }
            l.validate()?;
        }
        Ok(Self {
            architecture,
            layers,
            deterministic,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.architecture.input_shape
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.numel()).sum()
    }

    /// Records all parameters; `rho` only receives gradients for stochastic nets.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Vec<LayerVars> {
        self.layers
            .iter()
            .map(|l| {
                let mut v = l.record(tape, trainable);
                if self.deterministic && trainable {
                    v.weight.rho = tape.constant(l.weight.rho.detached());
                    v.bias.rho = tape.constant(l.bias.rho.detached());
                }
                v
            })
            .collect()
    }

    /// Pre-softmax outputs `[N, 2]` for a batched input `[N, ...input_shape]`.
    pub fn logits(&self, tape: &mut Tape, vars: &[LayerVars], x: Var, mut noise: Option<&mut Rng>) -> Result<Var> {
        let in_shape = tape.shape(x).to_vec();
        if in_shape.len() != self.input_shape().len() + 1 || in_shape[1..] != *self.input_shape() {
            return Err(Error::Tensor(seizure_tensor::TensorError::Dimension(format!(
                "network expects [N, {:?}], got {in_shape:?}",
                self.input_shape()
            ))));
        }
        let batch = in_shape[0];
        let mut h = x;
        for (layer, v) in self.layers.iter().zip(vars) {
            if matches!(layer.kind, LayerKind::Dense { .. }) && tape.shape(h).len() != 2 {
                let flat: usize = tape.shape(h)[1..].iter().product();
                h = tape.reshape(h, &[batch, flat])?;
            }
            let n = if self.deterministic { None } else { noise.as_deref_mut() };
            h = layer.forward(tape, v, h, n)?;
        }
        Ok(h)
    }

    pub fn kl(&self, tape: &mut Tape, vars: &[LayerVars]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (layer, v) in self.layers.iter().zip(vars) {
            let k = layer.kl(tape, v)?;
            total = Some(match total {
                None => k,
                Some(t) => tape.add(t, k)?,
            });
        }
        Ok(total.expect("at least one layer"))
    }

    pub fn kl_value(&self) -> f64 {
        self.layers.iter().map(BayesLayer::kl_value).sum()
    }

    /// Stacks per-example inputs into `[N, ...input_shape]`.
    pub fn stack(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::Contract("cannot stack an empty batch".into()));
        }
        let mut data = Vec::with_capacity(inputs.len() * inputs[0].numel());
        for t in inputs {
            if t.shape() != self.input_shape() {
                return Err(Error::Tensor(seizure_tensor::TensorError::Dimension(format!(
                    "input {:?} does not match network input {:?}",
                    t.shape(),
                    self.input_shape()
                ))));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![inputs.len()];
        shape.extend_from_slice(self.input_shape());
        Ok(Tensor::new(shape, data)?)
    }

    /// Tape-free pre-softmax outputs for a batch, one weight draw for the batch.
    pub fn predict_logits(&self, batch: &Tensor, noise: Option<&mut Rng>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.record(&mut tape, false);
        let x = tape.constant(batch.clone());
        let y = self.logits(&mut tape, &vars, x, noise)?;
        Ok(tape.value(y).clone())
    }

    pub fn params(&self) -> impl Iterator<Item = (String, &VariationalParam)> {
        self.layers.iter().enumerate().flat_map(|(i, l)| {
            [
                (format!("layer{i}.weight"), &l.weight),
                (format!("layer{i}.bias"), &l.bias),
            ]
        })
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut VariationalParam> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(BayesLayer::zero_grad);
    }

    /// Pulls accumulated leaf gradients off `tape` into the parameter tensors.
    pub fn collect_grads(&mut self, tape: &Tape, vars: &[LayerVars]) {
        for (l, v) in self.layers.iter_mut().zip(vars) {
            tape.accumulate_into(v.weight.mu, &mut l.weight.mu);
            tape.accumulate_into(v.weight.rho, &mut l.weight.rho);
            tape.accumulate_into(v.bias.mu, &mut l.bias.mu);
            tape.accumulate_into(v.bias.rho, &mut l.bias.rho);
        }
    }
}
