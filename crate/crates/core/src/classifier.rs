//! Distance-based class probabilities, single- and multi-prototype.
//!
//! For Euclidean and Mahalanobis modes the logit of class `y` is
//! `τ / (d(f, u_y) + ε)` with `d` a squared distance; the cosine mode uses
//! `cos(f, u_y) / τ`. Softmax always subtracts the maximum logit first.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::{dot, norm, sq_dist, FeatureVector};
use crate::gaussian::ClassGaussian;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMode {
    Cosine,
    Euclidean,
    Mahalanobis,
}

impl DistanceMode {
    pub const ALL: [DistanceMode; 3] = [
        DistanceMode::Cosine,
        DistanceMode::Euclidean,
        DistanceMode::Mahalanobis,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceMode::Cosine => "cosine",
            DistanceMode::Euclidean => "euclidean",
            DistanceMode::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for DistanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(DistanceMode::Cosine),
            "euclidean" | "euclid" => Ok(DistanceMode::Euclidean),
            "mahalanobis" | "maha" => Ok(DistanceMode::Mahalanobis),
            other => Err(Error::InvalidConfig(format!(
                "unknown distance mode '{other}'"
            ))),
        }
    }
}

/// `heads` learnable prototypes per class, stored class-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    dim: usize,
    classes: usize,
    heads: usize,
    prototypes: Vec<FeatureVector>,
}

impl PrototypeBank {
    /// `prototypes[c][m]` is head `m` of class `c`.
    pub fn new(prototypes: Vec<Vec<FeatureVector>>) -> Result<Self> {
        let classes = prototypes.len();
        let heads = prototypes.first().map_or(0, |p| p.len());
        if classes == 0 || heads == 0 {
            return Err(Error::InvalidConfig(
                "prototype bank needs at least one class and one head".into(),
            ));
        }
        let dim = prototypes[0][0].dim();
        let mut flat = Vec::with_capacity(classes * heads);
        for row in prototypes {
            if row.len() != heads {
                return Err(Error::InvalidConfig(format!(
                    "every class needs {heads} heads, found {}",
                    row.len()
                )));
            }
            for p in row {
                p.check_dim(dim)?;
                flat.push(p);
            }
        }
        Ok(PrototypeBank {
            dim,
            classes,
            heads,
            prototypes: flat,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn get(&self, class: usize, head: usize) -> &FeatureVector {
        &self.prototypes[class * self.heads + head]
    }

    pub fn get_mut(&mut self, class: usize, head: usize) -> &mut FeatureVector {
        &mut self.prototypes[class * self.heads + head]
    }

    /// All prototypes, class-major (`class * heads + head`).
    pub fn flat(&self) -> &[FeatureVector] {
        &self.prototypes
    }

    pub fn flat_mut(&mut self) -> &mut [FeatureVector] {
        &mut self.prototypes
    }

    pub fn normalize_all(&mut self) {
        self.prototypes
            .iter_mut()
            .for_each(FeatureVector::normalize);
    }

    /// Bank holding only head `head`.
    pub fn single_head(&self, head: usize) -> PrototypeBank {
        PrototypeBank {
            dim: self.dim,
            classes: self.classes,
            heads: 1,
            prototypes: (0..self.classes)
                .map(|c| self.get(c, head).clone())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub chosen_class: usize,
    pub per_head_probabilities: Vec<Vec<f64>>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Max-subtracted softmax. Infinite logits share the mass evenly.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let infinite = logits.iter().filter(|v| **v == f64::INFINITY).count();
    if infinite > 0 {
        let share = 1.0 / infinite as f64;
        return logits
            .iter()
            .map(|&v| if v == f64::INFINITY { share } else { 0.0 })
            .collect();
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

fn check_scoring(tau: f64, epsilon: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    Ok(())
}

fn check_gaussians<'a>(
    bank: &PrototypeBank,
    mode: DistanceMode,
    gaussians: Option<&'a [ClassGaussian]>,
) -> Result<Option<&'a [ClassGaussian]>> {
    if mode != DistanceMode::Mahalanobis {
        return Ok(gaussians);
    }
    match gaussians {
        Some(g) if g.len() == bank.class_count() => Ok(Some(g)),
        Some(g) => Err(Error::MissingGaussians {
            classes: bank.class_count(),
            found: g.len(),
        }),
        None => Err(Error::MissingGaussians {
            classes: bank.class_count(),
            found: 0,
        }),
    }
}

/// Per-class dissimilarity for one head. Squared distances for Euclidean
/// and Mahalanobis; negated cosine similarity for Cosine, so that smaller is
/// always closer.
pub fn head_distances(
    f: &FeatureVector,
    bank: &PrototypeBank,
    head: usize,
    mode: DistanceMode,
    gaussians: Option<&[ClassGaussian]>,
) -> Result<Vec<f64>> {
    f.check_dim(bank.dim())?;
    if head >= bank.heads() {
        return Err(Error::InvalidConfig(format!(
            "head {head} out of range for {} heads",
            bank.heads()
        )));
    }
    let gaussians = check_gaussians(bank, mode, gaussians)?;
    (0..bank.class_count())
        .map(|c| {
            let u = bank.get(c, head).as_slice();
            match mode {
                DistanceMode::Cosine => Ok(-cosine(f.as_slice(), u)),
                DistanceMode::Euclidean => Ok(sq_dist(f.as_slice(), u)),
                DistanceMode::Mahalanobis => {
                    let g = &gaussians.expect("checked above")[c];
                    g.mahalanobis_sq_from(f.as_slice(), u)
                }
            }
        })
        .collect()
}

fn logits_from_distances(
    distances: &[f64],
    mode: DistanceMode,
    tau: f64,
    epsilon: f64,
) -> Vec<f64> {
    match mode {
        DistanceMode::Cosine => distances.iter().map(|d| -d / tau).collect(),
        _ => distances.iter().map(|d| tau / (d + epsilon)).collect(),
    }
}

/// Class probabilities from one head.
pub fn predict_proba(
    f: &FeatureVector,
    bank: &PrototypeBank,
    head: usize,
    mode: DistanceMode,
    gaussians: Option<&[ClassGaussian]>,
    tau: f64,
    epsilon: f64,
) -> Result<Vec<f64>> {
    check_scoring(tau, epsilon)?;
    let d = head_distances(f, bank, head, mode, gaussians)?;
    Ok(softmax(&logits_from_distances(&d, mode, tau, epsilon)))
}

/// Mean of the per-head probability vectors.
pub fn ensemble_predict(
    f: &FeatureVector,
    bank: &PrototypeBank,
    mode: DistanceMode,
    gaussians: Option<&[ClassGaussian]>,
    tau: f64,
    epsilon: f64,
) -> Result<Prediction> {
    let per_head = (0..bank.heads())
        .map(|m| predict_proba(f, bank, m, mode, gaussians, tau, epsilon))
        .collect::<Result<Vec<_>>>()?;
    let heads = per_head.len() as f64;
    let mut probabilities = vec![0.0; bank.class_count()];
    for p in &per_head {
        probabilities.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    probabilities.iter_mut().for_each(|v| *v /= heads);
    debug_assert!((probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(Prediction {
        chosen_class: argmax(&probabilities),
        probabilities,
        per_head_probabilities: per_head,
    })
}

/// Predicted class. A single head decides by the smallest distance, which
/// is what the probabilities rank for every `tau`/`epsilon`; with several
/// heads the averaged probabilities decide, since averaging distances would
/// not agree with them.
pub fn classify(
    f: &FeatureVector,
    bank: &PrototypeBank,
    mode: DistanceMode,
    gaussians: Option<&[ClassGaussian]>,
    tau: f64,
    epsilon: f64,
) -> Result<usize> {
    if bank.heads() == 1 {
        check_scoring(tau, epsilon)?;
        let d = head_distances(f, bank, 0, mode, gaussians)?;
        return Ok(argmin(&d));
    }
    Ok(ensemble_predict(f, bank, mode, gaussians, tau, epsilon)?.chosen_class)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    fn bank(rows: &[&[&[f64]]]) -> PrototypeBank {
        PrototypeBank::new(
            rows.iter()
                .map(|heads| heads.iter().map(|p| fv(p)).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn equal_distances_give_uniform() {
        let b = bank(&[&[&[1.0, 0.0]], &[&[-1.0, 0.0]]]);
        for mode in [DistanceMode::Euclidean, DistanceMode::Cosine] {
            let p = predict_proba(&fv(&[0.0, 1.0]), &b, 0, mode, None, 1.0, 1e-6).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_softmax_hand_value() {
        // distances 1 and 2 with τ=1, ε=0: logits 1 and 0.5.
        let b = bank(&[&[&[1.0]], &[&[2f64.sqrt()]]]);
        let f = fv(&[0.0]);
        let d = head_distances(&f, &b, 0, DistanceMode::Euclidean, None).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
        assert!((d[1] - 2.0).abs() < 1e-12);
        let p = predict_proba(&f, &b, 0, DistanceMode::Euclidean, None, 1.0, 0.0).unwrap();
        let expected = 1.0 / (1.0 + (-0.5f64).exp());
        assert!((p[0] - expected).abs() < 1e-12);
        assert!((p[0] - 0.62246).abs() < 1e-5);
    }

    #[test]
    fn zero_distance_does_not_overflow() {
        let b = bank(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
        let p = predict_proba(
            &fv(&[1.0, 0.0]),
            &b,
            0,
            DistanceMode::Euclidean,
            None,
            1.0,
            1e-6,
        )
        .unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12);
        let p = predict_proba(
            &fv(&[1.0, 0.0]),
            &b,
            0,
            DistanceMode::Euclidean,
            None,
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn mahalanobis_needs_gaussians() {
        let b = bank(&[&[&[1.0]], &[&[0.0]]]);
        let err = predict_proba(
            &fv(&[0.5]),
            &b,
            0,
            DistanceMode::Mahalanobis,
            None,
            1.0,
            1e-6,
        );
        assert_eq!(
            err,
            Err(Error::MissingGaussians {
                classes: 2,
                found: 0
            })
        );
    }

    #[test]
    fn classify_at_class_mean() {
        let means = [fv(&[0.0, 0.0]), fv(&[3.0, 0.0]), fv(&[0.0, 3.0])];
        let cov = SymMatrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let gs: Vec<_> = means
            .iter()
            .enumerate()
            .map(|(c, m)| {
                ClassGaussian::from_parts(c, m.clone(), cov.clone(), cov.clone(), 4).unwrap()
            })
            .collect();
        let b = PrototypeBank::new(means.iter().map(|m| vec![m.clone()]).collect()).unwrap();
        let c = classify(
            &means[2],
            &b,
            DistanceMode::Mahalanobis,
            Some(&gs),
            1.0,
            1e-6,
        )
        .unwrap();
        assert_eq!(c, 2);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        let b = bank(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]], &[&[-1.0, 0.0]]]);
        let f = fv(&[0.5, 0.5]);
        assert_eq!(
            classify(&f, &b, DistanceMode::Euclidean, None, 1.0, 1e-6).unwrap(),
            0
        );
    }

    #[test]
    fn single_head_ensemble_matches_predict_proba() {
        let b = bank(&[&[&[1.0, 0.2]], &[&[0.1, 1.0]], &[&[-0.7, 0.3]]]);
        let f = fv(&[0.3, 0.4]);
        for mode in [DistanceMode::Cosine, DistanceMode::Euclidean] {
            let p = predict_proba(&f, &b, 0, mode, None, 0.5, 1e-6).unwrap();
            let e = ensemble_predict(&f, &b, mode, None, 0.5, 1e-6).unwrap();
            assert_eq!(e.probabilities, p);
        }
    }

    #[test]
    fn duplicated_heads_match_single_head() {
        let two = bank(&[&[&[1.0, 0.2], &[1.0, 0.2]], &[&[0.1, 1.0], &[0.1, 1.0]]]);
        let one = two.single_head(0);
        let f = fv(&[0.3, 0.4]);
        let a = ensemble_predict(&f, &two, DistanceMode::Euclidean, None, 1.0, 1e-6).unwrap();
        let b = ensemble_predict(&f, &one, DistanceMode::Euclidean, None, 1.0, 1e-6).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!(
            "Mahalanobis".parse::<DistanceMode>().unwrap(),
            DistanceMode::Mahalanobis
        );
        assert!("manhattan".parse::<DistanceMode>().is_err());
    }

    #[test]
    fn invalid_tau_rejected() {
        let b = bank(&[&[&[1.0]], &[&[0.0]]]);
        assert!(
            predict_proba(&fv(&[0.5]), &b, 0, DistanceMode::Euclidean, None, 0.0, 1e-6).is_err()
        );
    }
}
