//! The training and testing loop.
//!
//! Prototypes (and optionally a linear feature adapter) are fitted by plain
//! SGD on the classification loss with Euclidean distances, plus the
//! intra-class and prototype-separation terms. Class centres and intra-loss
//! covariances are computed once before the first step and frozen. After the
//! last epoch the test-time class covariances are estimated from the adapted
//! training features.

use serde::{Deserialize, Serialize};

use crate::classifier::{ensemble_predict, DistanceMode, PrototypeBank};
use crate::data::{EmbeddingSet, FewShotTask};
use crate::error::{Error, Result};
use crate::feature::FeatureVector;
use crate::gaussian::{
    build_class_gaussian, build_unified_gaussians, estimate_mean, ClassGaussian, ShrinkageParams,
};
use crate::losses::{loss_cls, loss_intra, loss_text_sep, total_loss, LossBreakdown, LossWeights};
use crate::par;
use crate::presets;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub shots: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub shrinkage: ShrinkageParams,
    pub tau: f64,
    pub epsilon: f64,
    pub heads: usize,
    pub unified_cov_threshold: usize,
    pub seed: u64,
    pub adapter_enabled: bool,
    /// Expected norm of the per-head perturbation added to the class mean
    /// when prototypes are initialized.
    pub init_scale: f64,
    pub momentum: f64,
}

impl TrainConfig {
    /// Defaults for a K-shot run: epoch budget and shrinkage from the preset
    /// tables, five warm-up epochs at 1e-5.
    pub fn for_shots(shots: usize) -> Self {
        TrainConfig {
            shots,
            epochs: presets::epochs_for_shots(shots),
            warmup_epochs: presets::WARMUP_EPOCHS,
            warmup_lr: presets::WARMUP_LR,
            base_lr: presets::DEFAULT_BASE_LR,
            batch_size: presets::DEFAULT_BATCH_SIZE,
            weights: LossWeights::default(),
            shrinkage: presets::shrinkage_for_shots(shots),
            tau: 1.0,
            epsilon: 1e-6,
            heads: presets::DEFAULT_HEADS,
            unified_cov_threshold: 1,
            seed: 1,
            adapter_enabled: false,
            init_scale: 0.1,
            momentum: 0.0,
        }
    }

    /// `for_shots` with the lighter shrinkage used on the synthetic benchmark.
    pub fn synthetic_benchmark(shots: usize) -> Self {
        TrainConfig {
            shrinkage: presets::SYNTHETIC_SHRINKAGE,
            ..TrainConfig::for_shots(shots)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.epochs <= self.warmup_epochs {
            return bad(format!(
                "epochs ({}) must exceed warmup_epochs ({})",
                self.epochs, self.warmup_epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.heads == 0 {
            return bad("heads must be at least 1".into());
        }
        if !(self.tau > 0.0) || !(self.epsilon > 0.0) {
            return bad("tau and epsilon must be positive".into());
        }
        for (name, v) in [
            ("warmup_lr", self.warmup_lr),
            ("base_lr", self.base_lr),
            ("alpha", self.weights.alpha),
            ("beta", self.weights.beta),
            ("init_scale", self.init_scale),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        self.shrinkage.validate()
    }
}

/// Constant `warmup_lr` during warm-up, then a half-cosine from `base_lr`.
pub fn cosine_lr(epoch: usize, config: &TrainConfig) -> f64 {
    if epoch < config.warmup_epochs {
        return config.warmup_lr;
    }
    let t = (epoch - config.warmup_epochs) as f64 / (config.epochs - config.warmup_epochs) as f64;
    config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Identity-initialized linear map applied to input features. When the
/// geometry is normalized the output is rescaled to unit length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualAdapter {
    dim: usize,
    weight: Vec<f64>,
    pub enabled: bool,
    pub renormalize: bool,
}

impl VisualAdapter {
    pub fn identity(dim: usize, enabled: bool, renormalize: bool) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        VisualAdapter {
            dim,
            weight,
            enabled,
            renormalize,
        }
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    fn linear(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                self.weight[i * self.dim..(i + 1) * self.dim]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect()
    }

    pub fn apply(&self, x: &FeatureVector) -> Result<FeatureVector> {
        x.check_dim(self.dim)?;
        if !self.enabled {
            return Ok(x.clone());
        }
        let mut out = FeatureVector::new(self.linear(x.as_slice()));
        if self.renormalize {
            out.normalize();
        }
        Ok(out)
    }

    pub fn apply_all(&self, xs: &[FeatureVector]) -> Result<Vec<FeatureVector>> {
        par::map_slice(xs, |x| self.apply(x)).into_iter().collect()
    }

    /// Gradient with respect to the weight given gradients with respect to
    /// the adapter outputs.
    fn weight_grad(&self, inputs: &[&FeatureVector], output_grads: &[Vec<f64>]) -> Vec<f64> {
        let d = self.dim;
        let mut grad = vec![0.0; d * d];
        for (x, g) in inputs.iter().zip(output_grads) {
            let x = x.as_slice();
            let g_pre: Vec<f64> = if self.renormalize {
                let v = self.linear(x);
                let len = crate::feature::norm(&v);
                if len == 0.0 {
                    continue;
                }
                let radial: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / len;
                g.iter()
                    .zip(&v)
                    .map(|(gk, vk)| (gk - radial * vk / len) / len)
                    .collect()
            } else {
                g.clone()
            };
            for i in 0..d {
                let row = &mut grad[i * d..(i + 1) * d];
                row.iter_mut()
                    .zip(x)
                    .for_each(|(r, xv)| *r += g_pre[i] * xv);
            }
        }
        grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: TrainConfig,
    pub bank: PrototypeBank,
    pub adapter: VisualAdapter,
    pub test_gaussians: Vec<ClassGaussian>,
    pub frozen_intra_gaussians: Vec<ClassGaussian>,
    pub centers: Vec<FeatureVector>,
    pub loss_trace: Vec<LossBreakdown>,
}

/// Prototypes start at the class mean of the training features plus a
/// Gaussian perturbation of expected norm `init_scale`, one stream per class.
pub fn init_model(
    task: &FewShotTask,
    config: &TrainConfig,
) -> Result<(PrototypeBank, VisualAdapter)> {
    let train = &task.train;
    let dim = train.dim();
    let unit = train.is_normalized();
    let adapter = VisualAdapter::identity(dim, config.adapter_enabled, unit);
    let adapted = adapter.apply_all(train.features())?;
    let per_class = group(&adapted, train.labels(), train.class_count());
    let noise_sd = config.init_scale / (dim as f64).sqrt();
    let mut rows = Vec::with_capacity(per_class.len());
    for (c, samples) in per_class.iter().enumerate() {
        if samples.is_empty() {
            return Err(Error::EmptyClass { class: c });
        }
        let mean = estimate_mean(samples)?;
        let mut rng = rng::stream(config.seed, Purpose::PrototypeInit, c as u64);
        let heads = (0..config.heads)
            .map(|_| {
                let mut p: Vec<f64> = mean.as_slice().to_vec();
                for v in p.iter_mut() {
                    let z: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
                    *v += noise_sd * z;
                }
                let mut p = FeatureVector::new(p);
                if unit {
                    p.normalize();
                }
                p
            })
            .collect();
        rows.push(heads);
    }
    Ok((PrototypeBank::new(rows)?, adapter))
}

fn group(features: &[FeatureVector], labels: &[usize], classes: usize) -> Vec<Vec<FeatureVector>> {
    let mut out = vec![Vec::new(); classes];
    for (f, &l) in features.iter().zip(labels) {
        out[l].push(f.clone());
    }
    out
}

fn class_gaussians(
    per_class: &[Vec<FeatureVector>],
    params: &ShrinkageParams,
) -> Result<Vec<ClassGaussian>> {
    par::map_range(per_class.len(), |c| {
        build_class_gaussian(c, &per_class[c], params)
    })
    .into_iter()
    .collect()
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len() as f64;
    let mut acc = LossBreakdown {
        cls: 0.0,
        intra: 0.0,
        text_sep: 0.0,
        total: 0.0,
    };
    for p in parts {
        acc.cls += p.cls;
        acc.intra += p.intra;
        acc.text_sep += p.text_sep;
        acc.total += p.total;
    }
    acc.cls /= n;
    acc.intra /= n;
    acc.text_sep /= n;
    acc.total /= n;
    acc
}

pub fn train(task: &FewShotTask, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let train_set = &task.train;
    let classes = train_set.class_count();
    let dim = train_set.dim();
    let unit = train_set.is_normalized();
    let (mut bank, mut adapter) = init_model(task, config)?;

    let adapted0 = adapter.apply_all(train_set.features())?;
    let grouped0 = group(&adapted0, train_set.labels(), classes);
    let centers = grouped0
        .iter()
        .map(|s| estimate_mean(s))
        .collect::<Result<Vec<_>>>()?;
    let frozen = class_gaussians(&grouped0, &config.shrinkage)?;

    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut order_rng = rng::stream(config.seed, Purpose::BatchOrder, 0);
    let mut proto_velocity = vec![vec![0.0; dim]; bank.flat().len()];
    let mut adapter_velocity = vec![0.0; dim * dim];
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let use_sep = bank.flat().len() >= 2;

    for epoch in 0..config.epochs {
        let lr = cosine_lr(epoch, config);
        rng::shuffle(&mut order_rng, &mut order);
        let mut step_losses = Vec::with_capacity(n.div_ceil(config.batch_size));
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&FeatureVector> =
                batch.iter().map(|&i| &train_set.features()[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels()[i]).collect();
            let feats = par::map_slice(&inputs, |x| adapter.apply(x))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;

            let cls = loss_cls(&feats, &labels, &bank, config.tau, config.epsilon)?;
            let intra = loss_intra(&feats, &labels, &centers, &frozen)?;
            let (sep_value, sep_grad) = if use_sep {
                let s = loss_text_sep(&bank)?;
                (s.value, Some(s.prototype_grad))
            } else {
                (0.0, None)
            };
            let breakdown = total_loss(cls.value, intra.value, sep_value, &config.weights)
                .map_err(|_| Error::NonFiniteLoss { epoch, step })?;
            step_losses.push(breakdown);

            let beta = config.weights.beta;
            for (k, p) in bank.flat_mut().iter_mut().enumerate() {
                let vel = &mut proto_velocity[k];
                let g_cls = &cls.prototype_grad[k];
                for j in 0..dim {
                    let mut g = g_cls[j];
                    if let (Some(sg), true) = (&sep_grad, beta != 0.0) {
                        g += beta * sg[k][j];
                    }
                    vel[j] = config.momentum * vel[j] + g;
                }
                p.as_mut_slice()
                    .iter_mut()
                    .zip(vel.iter())
                    .for_each(|(w, v)| *w -= lr * v);
            }
            if unit {
                bank.normalize_all();
            }

            if adapter.enabled {
                let alpha = config.weights.alpha;
                let out_grads: Vec<Vec<f64>> = cls
                    .feature_grad
                    .iter()
                    .zip(&intra.feature_grad)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + alpha * y).collect())
                    .collect();
                let g = adapter.weight_grad(&inputs, &out_grads);
                for ((w, v), gk) in adapter
                    .weight
                    .iter_mut()
                    .zip(adapter_velocity.iter_mut())
                    .zip(&g)
                {
                    *v = config.momentum * *v + gk;
                    *w -= lr * *v;
                }
                if adapter.weight.iter().any(|w| !w.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
            }
        }
        loss_trace.push(mean_breakdown(&step_losses));
    }

    let adapted = adapter.apply_all(train_set.features())?;
    let grouped = group(&adapted, train_set.labels(), classes);
    let test_gaussians = if task.shots <= config.unified_cov_threshold {
        build_unified_gaussians(&grouped, &config.shrinkage)?
    } else {
        class_gaussians(&grouped, &config.shrinkage)?
    };

    Ok(TrainedModel {
        config: config.clone(),
        bank,
        adapter,
        test_gaussians,
        frozen_intra_gaussians: frozen,
        centers,
        loss_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Top-1 accuracy of the head-averaged prediction.
pub fn evaluate(
    model: &TrainedModel,
    test: &EmbeddingSet,
    mode: DistanceMode,
) -> Result<Evaluation> {
    test.features()
        .first()
        .map_or(Ok(()), |f| f.check_dim(model.bank.dim()))?;
    let gaussians = (mode == DistanceMode::Mahalanobis).then_some(model.test_gaussians.as_slice());
    let preds = par::map_slice(test.features(), |x| -> Result<usize> {
        let f = model.adapter.apply(x)?;
        Ok(ensemble_predict(
            &f,
            &model.bank,
            mode,
            gaussians,
            model.config.tau,
            model.config.epsilon,
        )?
        .chosen_class)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let classes = model.bank.class_count();
    let mut hits = vec![0usize; classes];
    let mut totals = vec![0usize; classes];
    for (&p, &y) in preds.iter().zip(test.labels()) {
        totals[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        per_class_accuracy: hits
            .iter()
            .zip(&totals)
            .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
            .collect(),
        predictions: preds,
    })
}
