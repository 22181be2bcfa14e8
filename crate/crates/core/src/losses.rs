//! Training objectives and their analytic gradients.
//!
//! * classification: per-head softmax cross-entropy over logits
//!   `τ / (‖f − u‖² + ε)`, averaged over the batch and summed over heads;
//! * intra-class: squared Mahalanobis distance of each feature to its class
//!   centre under frozen class covariances;
//! * prototype separation: negative sum of pairwise squared distances between
//!   all L2-normalized prototypes.

use serde::{Deserialize, Serialize};

use crate::classifier::PrototypeBank;
use crate::error::{Error, Result};
use crate::feature::{sq_dist, FeatureVector};
use crate::gaussian::ClassGaussian;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBreakdown {
    pub cls: f64,
    pub intra: f64,
    pub text_sep: f64,
    pub total: f64,
}

/// Classification loss with gradients for every prototype (class-major,
/// matching [`PrototypeBank::flat`]) and every input feature.
#[derive(Debug, Clone)]
pub struct ClsLoss {
    pub value: f64,
    pub prototype_grad: Vec<Vec<f64>>,
    pub feature_grad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct IntraLoss {
    pub value: f64,
    pub feature_grad: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct TextSepLoss {
    pub value: f64,
    pub prototype_grad: Vec<Vec<f64>>,
}

struct SampleTerm {
    loss: f64,
    feature_grad: Vec<f64>,
    proto_grad: Vec<Vec<f64>>,
}

fn check_batch(features: &[FeatureVector], labels: &[usize], dim: usize) -> Result<()> {
    if features.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::DimMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    for f in features {
        f.check_dim(dim)?;
    }
    Ok(())
}

pub fn loss_cls(
    features: &[FeatureVector],
    labels: &[usize],
    bank: &PrototypeBank,
    tau: f64,
    epsilon: f64,
) -> Result<ClsLoss> {
    let dim = bank.dim();
    let classes = bank.class_count();
    let heads = bank.heads();
    check_batch(features, labels, dim)?;
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let n = features.len() as f64;

    let terms = par::map_range(features.len(), |i| {
        let f = features[i].as_slice();
        let y = labels[i];
        let mut term = SampleTerm {
            loss: 0.0,
            feature_grad: vec![0.0; dim],
            proto_grad: vec![vec![0.0; dim]; classes * heads],
        };
        for m in 0..heads {
            let dists: Vec<f64> = (0..classes)
                .map(|c| sq_dist(f, bank.get(c, m).as_slice()))
                .collect();
            let logits: Vec<f64> = dists.iter().map(|d| tau / (d + epsilon)).collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            term.loss += z.ln() + max - logits[y];
            for c in 0..classes {
                let p = exps[c] / z;
                let g_logit = (p - if c == y { 1.0 } else { 0.0 }) / n;
                let denom = dists[c] + epsilon;
                let g_dist = -g_logit * tau / (denom * denom);
                let u = bank.get(c, m).as_slice();
                let pg = &mut term.proto_grad[c * heads + m];
                for k in 0..dim {
                    let diff = f[k] - u[k];
                    term.feature_grad[k] += 2.0 * g_dist * diff;
                    pg[k] -= 2.0 * g_dist * diff;
                }
            }
        }
        term
    });

    let mut value = 0.0;
    let mut prototype_grad = vec![vec![0.0; dim]; classes * heads];
    let mut feature_grad = Vec::with_capacity(terms.len());
    for t in terms {
        value += t.loss;
        for (acc, g) in prototype_grad.iter_mut().zip(&t.proto_grad) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        feature_grad.push(t.feature_grad);
    }
    Ok(ClsLoss {
        value: value / n,
        prototype_grad,
        feature_grad,
    })
}

pub fn loss_intra(
    features: &[FeatureVector],
    labels: &[usize],
    centers: &[FeatureVector],
    frozen: &[ClassGaussian],
) -> Result<IntraLoss> {
    let dim = features.first().map_or(0, |f| f.dim());
    check_batch(features, labels, dim)?;
    if let Some(&label) = labels
        .iter()
        .find(|&&l| l >= frozen.len() || l >= centers.len())
    {
        return Err(Error::MissingGaussian { label });
    }
    let terms = par::map_range(features.len(), |i| -> Result<(f64, Vec<f64>)> {
        let y = labels[i];
        let f = features[i].as_slice();
        let c = centers[y].as_slice();
        let g = &frozen[y];
        Ok((g.mahalanobis_sq_from(f, c)?, g.mahalanobis_grad_from(f, c)?))
    });
    let mut value = 0.0;
    let mut feature_grad = Vec::with_capacity(terms.len());
    for t in terms {
        let (v, g) = t?;
        value += v;
        feature_grad.push(g);
    }
    Ok(IntraLoss {
        value,
        feature_grad,
    })
}

pub fn loss_text_sep(bank: &PrototypeBank) -> Result<TextSepLoss> {
    let protos = bank.flat();
    let count = protos.len();
    if count < 2 {
        return Err(Error::TooFewPrototypes { count });
    }
    let dim = bank.dim();
    let norms: Vec<f64> = protos.iter().map(|p| p.norm()).collect();
    let units: Vec<FeatureVector> = protos.iter().map(|p| p.normalized()).collect();

    let mut value = 0.0;
    for i in 0..count {
        for j in i + 1..count {
            value -= sq_dist(units[i].as_slice(), units[j].as_slice());
        }
    }

    // d/dn_k of −Σ_{i<j}‖n_i − n_j‖² is −2(P n_k − S), projected through the
    // normalization Jacobian (I − n nᵀ)/‖u‖.
    let mut total = vec![0.0; dim];
    for u in &units {
        total
            .iter_mut()
            .zip(u.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    let p = count as f64;
    let prototype_grad = units
        .iter()
        .zip(&norms)
        .map(|(n, &len)| {
            if len == 0.0 {
                return vec![0.0; dim];
            }
            let n = n.as_slice();
            let g: Vec<f64> = n
                .iter()
                .zip(&total)
                .map(|(nk, s)| -2.0 * (p * nk - s))
                .collect();
            let radial: f64 = g.iter().zip(n).map(|(a, b)| a * b).sum();
            g.iter()
                .zip(n)
                .map(|(gk, nk)| (gk - radial * nk) / len)
                .collect()
        })
        .collect();
    Ok(TextSepLoss {
        value,
        prototype_grad,
    })
}

/// `total = cls + α·intra + β·text_sep`.
pub fn total_loss(
    cls: f64,
    intra: f64,
    text_sep: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let total = cls + weights.alpha * intra + weights.beta * text_sep;
    if !cls.is_finite() || !intra.is_finite() || !text_sep.is_finite() || !total.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, step: 0 });
    }
    Ok(LossBreakdown {
        cls,
        intra,
        text_sep,
        total,
    })
}
