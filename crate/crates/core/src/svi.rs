//! Stochastic variational inference.
//!
//! Minimizes the negative ELBO per minibatch:
//! mean cross-entropy under one weight sample plus `kl_weight * KL(q || p)`.
//! With `kl_weight = 1/num_batches` the KL terms of one epoch add up to the
//! full-dataset KL.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use seizure_tensor::{Tape, Tensor, Var};

use crate::bayes::{LayerVars, PriorSpec};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::{self, FusionMode};
use crate::network::{Architecture, BayesNet, NUM_CLASSES};
use crate::rng::{self, Rng};

pub const INTERICTAL: usize = 0;
pub const PREICTAL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KlSchedule {
    /// `scale / num_batches` on every minibatch.
    Constant { scale: f64 },
    /// Ramps from `scale / (num_batches * warmup_epochs)` up to
    /// `scale / num_batches` over the first `warmup_epochs` epochs.
    LinearAnneal { scale: f64, warmup_epochs: usize },
}

impl Default for KlSchedule {
    fn default() -> Self {
        KlSchedule::Constant { scale: 1.0 }
    }
}

impl KlSchedule {
    fn scale(&self) -> f64 {
        match *self {
            KlSchedule::Constant { scale } | KlSchedule::LinearAnneal { scale, .. } => scale,
        }
    }

    /// KL weight for a minibatch in `epoch` (0-based).
    pub fn weight(&self, epoch: usize, num_batches: usize) -> f64 {
        let base = self.scale() / num_batches as f64;
        match *self {
            KlSchedule::Constant { .. } => base,
            KlSchedule::LinearAnneal { warmup_epochs, .. } => {
                base * ((epoch + 1) as f64 / warmup_epochs.max(1) as f64).min(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_schedule: KlSchedule,
    pub seed: u64,
    /// `None` picks [`Architecture::default_for`] the input shape.
    pub architecture: Option<Architecture>,
    pub prior: PriorSpec,
    pub adam: AdamConfig,
    /// Plain CNN: sigma fixed at 0 and no KL term.
    pub deterministic: bool,
    /// Oversample the minority class up to this minority:majority ratio.
    pub balance_ratio: Option<f64>,
    pub fusion_mode: FusionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            kl_schedule: KlSchedule::default(),
            seed: 0,
            architecture: None,
            prior: PriorSpec::default(),
            adam: AdamConfig::default(),
            deterministic: false,
            balance_ratio: Some(1.0),
            fusion_mode: FusionMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        let scale = self.kl_schedule.scale();
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("KL scale must be finite and non-negative, got {scale}")));
        }
        if let Some(r) = self.balance_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("balance_ratio must be in (0, 1], got {r}")));
            }
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }
}

/// Borrowed training data: one input tensor and label per example, plus an
/// optional fusion factor per example.
#[derive(Debug, Clone)]
pub struct TrainSet<'a> {
    pub inputs: Vec<&'a Tensor>,
    pub labels: Vec<usize>,
    pub factors: Option<Vec<f64>>,
}

impl<'a> TrainSet<'a> {
    pub fn new(inputs: Vec<&'a Tensor>, labels: Vec<usize>) -> Self {
        Self {
            inputs,
            labels,
            factors: None,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Loss graph of one minibatch.
pub struct ElboGraph {
    pub tape: Tape,
    pub vars: Vec<LayerVars>,
    pub logits: Var,
    pub loss: Var,
    pub nll: Var,
    pub kl: Option<Var>,
}

/// Records the negative ELBO of a minibatch. `noise` drives the single
/// weight sample; `None` evaluates at the posterior means.
pub fn negative_elbo(
    net: &BayesNet,
    inputs: &[&Tensor],
    labels: &[usize],
    factors: Option<(&[f64], FusionMode)>,
    kl_weight: f64,
    noise: Option<&mut Rng>,
) -> Result<ElboGraph> {
    if inputs.is_empty() {
        return Err(Error::Contract("negative_elbo on an empty batch".into()));
    }
    if labels.len() != inputs.len() {
        return Err(Error::Contract(format!("{} labels for {} inputs", labels.len(), inputs.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
        return Err(Error::Contract(format!("label {bad} is not interictal (0) or preictal (1)")));
    }
    if !(kl_weight >= 0.0) {
        return Err(Error::Contract(format!("kl_weight must be non-negative, got {kl_weight}")));
    }
    let mut tape = Tape::new();
    let vars = net.record(&mut tape, true);
    let x = tape.constant(net.stack(inputs)?);
    let mut logits = net.logits(&mut tape, &vars, x, noise)?;
    if let Some((f, mode)) = factors {
        logits = fusion::apply_fusion_on_tape(&mut tape, logits, f, mode)?;
    }
    let nll = tape.cross_entropy(logits, labels)?;
    let (loss, kl) = if kl_weight > 0.0 && !net.deterministic {
        let kl = net.kl(&mut tape, &vars)?;
        let weighted = tape.scale(kl, kl_weight);
        (tape.add(nll, weighted)?, Some(kl))
    } else {
        (nll, None)
    };
    Ok(ElboGraph {
        tape,
        vars,
        logits,
        loss,
        nll,
        kl,
    })
}

/// Adam over every `mu` and `rho` of a network, in `params_mut` order.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    cfg: AdamConfig,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, cfg: AdamConfig) -> Self {
        Self {
            lr,
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, net: &mut BayesNet) {
        self.t += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.t);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t);
        let tensors = net.params_mut().flat_map(|p| [&mut p.mu, &mut p.rho]);
        for (i, t) in tensors.enumerate() {
            if self.m.len() <= i {
                self.m.push(vec![0.0; t.numel()]);
                self.v.push(vec![0.0; t.numel()]);
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g[j];
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g[j] * g[j];
                *w -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.cfg.eps);
            }
        }
    }
}

/// Indices of a class-balanced resample: every original example once, plus
/// minority draws with replacement until the minority count reaches
/// `ceil(ratio * majority)`.
pub fn balance_classes(labels: &[usize], ratio: f64, seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == PREICTAL).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != PREICTAL).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation("balancing needs both classes".into()));
    }
    let (minority, majority) = if pos.len() <= neg.len() { (&pos, &neg) } else { (&neg, &pos) };
    let target = (ratio * majority.len() as f64).ceil() as usize;
    let mut out: Vec<usize> = (0..labels.len()).collect();
    if minority.len() < target {
        let mut r = rng::seeded(seed);
        out.extend((0..target - minority.len()).map(|_| minority[r.gen_range(0..minority.len())]));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch negative ELBO.
    pub neg_elbo: f64,
    /// Mean minibatch cross-entropy.
    pub nll: f64,
    /// Mean minibatch `kl_weight * KL`.
    pub kl_term: f64,
    /// Full KL to the prior after the epoch.
    pub kl_total: f64,
    pub accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub num_examples: usize,
    pub num_batches: usize,
}

impl TrainReport {
    pub fn to_json_lines(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
}

/// Trains a network on `data`. Deterministic given `cfg.seed`.
pub fn train(data: &TrainSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Validation("empty training set".into()));
    }
    if data.labels.len() != data.len() || data.factors.as_ref().is_some_and(|f| f.len() != data.len()) {
        return Err(Error::Contract("inputs, labels and factors differ in length".into()));
    }
    if !data.labels.contains(&PREICTAL) || !data.labels.contains(&INTERICTAL) {
        return Err(Error::Validation("training set must contain both interictal and preictal examples".into()));
    }
    let input_shape = data.inputs[0].shape().to_vec();
    let arch = cfg
        .architecture
        .clone()
        .unwrap_or_else(|| Architecture::default_for(&input_shape));
    let mut net = BayesNet::new(arch, cfg.prior, &mut rng::seeded(rng::derive_seed(cfg.seed, 1)))?;
    net.deterministic = cfg.deterministic;

    let mut order = match cfg.balance_ratio {
        Some(r) => balance_classes(&data.labels, r, rng::derive_seed(cfg.seed, 2))?,
        None => (0..data.len()).collect(),
    };
    let mut shuffle_rng = rng::seeded(rng::derive_seed(cfg.seed, 3));
    let mut noise_rng = rng::seeded(rng::derive_seed(cfg.seed, 4));
    let num_batches = order.len().div_ceil(cfg.batch_size);
    let mut adam = Adam::new(cfg.learning_rate, cfg.adam);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let kl_weight = if cfg.deterministic { 0.0 } else { cfg.kl_schedule.weight(epoch, num_batches) };
        let (mut loss_sum, mut nll_sum, mut kl_sum, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Tensor> = batch.iter().map(|&i| data.inputs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let factors: Option<Vec<f64>> = data.factors.as_ref().map(|f| batch.iter().map(|&i| f[i]).collect());
            let mut g = negative_elbo(
                &net,
                &inputs,
                &labels,
                factors.as_deref().map(|f| (f, cfg.fusion_mode)),
                kl_weight,
                Some(&mut noise_rng),
            )?;
            let loss = g.tape.value(g.loss).item();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    detail: format!("minibatch loss is {loss}"),
                });
            }
            let nll = g.tape.value(g.nll).item();
            loss_sum += loss;
            nll_sum += nll;
            kl_sum += loss - nll;
            correct += g
                .tape
                .value(g.logits)
                .data()
                .chunks_exact(NUM_CLASSES)
                .zip(&labels)
                .filter(|(row, &l)| usize::from(row[1] > row[0]) == l)
                .count();
            g.tape.backward(g.loss)?;
            net.zero_grad();
            net.collect_grads(&g.tape, &g.vars);
            adam.step(&mut net);
        }
        let nb = num_batches as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            neg_elbo: loss_sum / nb,
            nll: nll_sum / nb,
            kl_term: kl_sum / nb,
            kl_total: if cfg.deterministic { 0.0 } else { net.kl_value() },
            accuracy: correct as f64 / order.len() as f64,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::debug!("epoch {} neg_elbo {:.5} nll {:.5} acc {:.4}", record.epoch, record.neg_elbo, record.nll, record.accuracy);
        epochs.push(record);
    }
    net.zero_grad();
    let mut checkpoint = Checkpoint::new(net, cfg.seed);
    checkpoint.metadata = serde_json::json!({ "train_config": cfg });
    Ok(TrainOutcome {
        report: TrainReport {
            epochs,
            num_examples: order.len(),
            num_batches,
        },
        checkpoint,
    })
}
