//! Per-class Gaussian estimation: means, covariances, shrinkage,
//! correlation normalization, and Mahalanobis distance through a cached
//! Cholesky factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::FeatureVector;
use crate::linalg::{Cholesky, SymMatrix};

/// Which average scales which mask in the shrinkage update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageConvention {
    /// `Σ + γ1·mean(diag)·I + γ2·mean(offdiag)·(1−I)`.
    #[default]
    Matched,
    /// `Σ + γ1·mean(offdiag)·I + γ2·mean(diag)·(1−I)`. Can produce
    /// indefinite matrices; kept for comparison.
    Swapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShrinkageParams {
    pub gamma1: f64,
    pub gamma2: f64,
    #[serde(default)]
    pub convention: ShrinkageConvention,
}

impl ShrinkageParams {
    pub fn new(gamma1: f64, gamma2: f64) -> Self {
        ShrinkageParams {
            gamma1,
            gamma2,
            convention: ShrinkageConvention::Matched,
        }
    }

    pub fn with_convention(mut self, convention: ShrinkageConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 >= 0.0 && self.gamma2 >= 0.0)
            || !self.gamma1.is_finite()
            || !self.gamma2.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "shrinkage gammas must be finite and non-negative (gamma1={}, gamma2={})",
                self.gamma1, self.gamma2
            )));
        }
        Ok(())
    }
}

fn check_samples(samples: &[FeatureVector]) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptyClass { class: 0 })?;
    let dim = first.dim();
    for s in samples {
        s.check_dim(dim)?;
    }
    Ok(dim)
}

fn pairwise_sum(samples: &[FeatureVector], dim: usize) -> Vec<f64> {
    match samples.len() {
        0 => vec![0.0; dim],
        1 => samples[0].as_slice().to_vec(),
        n => {
            let (left, right) = samples.split_at(n / 2);
            let mut acc = pairwise_sum(left, dim);
            let r = pairwise_sum(right, dim);
            acc.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
            acc
        }
    }
}

/// Arithmetic mean with a fixed pairwise reduction order.
pub fn estimate_mean(samples: &[FeatureVector]) -> Result<FeatureVector> {
    let dim = check_samples(samples)?;
    let n = samples.len() as f64;
    let mut sum = pairwise_sum(samples, dim);
    sum.iter_mut().for_each(|v| *v /= n);
    Ok(FeatureVector::new(sum))
}

/// Biased (1/N) covariance of the samples around `mean`.
pub fn estimate_covariance(samples: &[FeatureVector], mean: &FeatureVector) -> Result<SymMatrix> {
    let dim = check_samples(samples)?;
    mean.check_dim(dim)?;
    let n = samples.len() as f64;
    let centered: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| {
            s.as_slice()
                .iter()
                .zip(mean.as_slice())
                .map(|(x, m)| x - m)
                .collect()
        })
        .collect();
    let mut cov = SymMatrix::zeros(dim);
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = centered.iter().map(|c| c[i] * c[j]).sum();
            let v = s / n;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(cov)
}

/// Mean of the diagonal and mean of the off-diagonal entries.
pub fn diag_offdiag_means(cov: &SymMatrix) -> (f64, f64) {
    let d = cov.dim();
    if d == 0 {
        return (0.0, 0.0);
    }
    let trace = cov.trace();
    let total: f64 = cov.entries().iter().sum();
    let v_diag = trace / d as f64;
    let v_off = if d > 1 {
        (total - trace) / (d * d - d) as f64
    } else {
        0.0
    };
    (v_diag, v_off)
}

/// Covariance shrinkage toward a structured target.
pub fn shrink(cov: &SymMatrix, params: &ShrinkageParams) -> Result<SymMatrix> {
    params.validate()?;
    let (v_diag, v_off) = diag_offdiag_means(cov);
    let (on_diag, off_diag) = match params.convention {
        ShrinkageConvention::Matched => (params.gamma1 * v_diag, params.gamma2 * v_off),
        ShrinkageConvention::Swapped => (params.gamma1 * v_off, params.gamma2 * v_diag),
    };
    let d = cov.dim();
    let mut out = cov.clone();
    for i in 0..d {
        for j in 0..d {
            let add = if i == j { on_diag } else { off_diag };
            out.set(i, j, cov.get(i, j) + add);
        }
    }
    Ok(out)
}

/// Correlation normalization: `Σ(i,j) / (σ_i σ_j)`, unit diagonal.
pub fn normalize_cov(cov: &SymMatrix) -> Result<SymMatrix> {
    let d = cov.dim();
    let mut sd = Vec::with_capacity(d);
    for i in 0..d {
        let v = cov.get(i, i);
        if !(v > 0.0) {
            return Err(Error::NonPositiveDiagonal { index: i, value: v });
        }
        sd.push(v.sqrt());
    }
    let mut out = SymMatrix::zeros(d);
    for i in 0..d {
        out.set(i, i, 1.0);
        for j in 0..i {
            let v = cov.get(i, j) / (sd[i] * sd[j]);
            out.set(i, j, v);
            out.set(j, i, v);
        }
    }
    Ok(out)
}

/// A class-conditional Gaussian with the shrunk, normalized covariance and
/// its Cholesky factor. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGaussian {
    pub class_id: usize,
    pub mean: FeatureVector,
    pub raw_cov: SymMatrix,
    pub shrunk_cov: SymMatrix,
    #[serde(skip)]
    factorization: Option<Cholesky>,
    pub sample_count: usize,
}

impl ClassGaussian {
    /// Wraps an already shrunk and normalized covariance.
    pub fn from_parts(
        class_id: usize,
        mean: FeatureVector,
        raw_cov: SymMatrix,
        shrunk_cov: SymMatrix,
        sample_count: usize,
    ) -> Result<Self> {
        mean.check_dim(shrunk_cov.dim())?;
        let factorization = Some(shrunk_cov.cholesky()?);
        Ok(ClassGaussian {
            class_id,
            mean,
            raw_cov,
            shrunk_cov,
            factorization,
            sample_count,
        })
    }

    /// Unit-covariance model centred at `mean`; reduces Mahalanobis distance
    /// to squared Euclidean distance.
    pub fn identity(class_id: usize, mean: FeatureVector) -> Self {
        let d = mean.dim();
        let eye = SymMatrix::identity(d);
        ClassGaussian {
            class_id,
            mean,
            raw_cov: eye.clone(),
            factorization: Some(eye.cholesky().expect("identity is positive definite")),
            shrunk_cov: eye,
            sample_count: 0,
        }
    }

    /// Same covariance model, different centre and id.
    pub fn recentred(&self, class_id: usize, mean: FeatureVector) -> Result<Self> {
        mean.check_dim(self.dim())?;
        Ok(ClassGaussian {
            class_id,
            mean,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn factorization(&self) -> Result<&Cholesky> {
        self.factorization
            .as_ref()
            .ok_or(Error::FactorizationMissing)
    }

    /// Restores the cached factor, e.g. after deserialization.
    pub fn refactor(&mut self) -> Result<()> {
        self.factorization = Some(self.shrunk_cov.cholesky()?);
        Ok(())
    }

    pub fn without_factorization(mut self) -> Self {
        self.factorization = None;
        self
    }

    /// Squared Mahalanobis distance from `x` to an arbitrary `center` under
    /// this class's covariance.
    pub fn mahalanobis_sq_from(&self, x: &[f64], center: &[f64]) -> Result<f64> {
        let l = self.factorization()?;
        if x.len() != l.dim() {
            return Err(Error::DimMismatch {
                expected: l.dim(),
                found: x.len(),
            });
        }
        if center.len() != l.dim() {
            return Err(Error::DimMismatch {
                expected: l.dim(),
                found: center.len(),
            });
        }
        let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
        Ok(l.quadratic_form_inv(&diff))
    }

    /// `2 Σ̂⁻¹ (x − center)`, the gradient of the squared distance in `x`.
    pub fn mahalanobis_grad_from(&self, x: &[f64], center: &[f64]) -> Result<Vec<f64>> {
        let l = self.factorization()?;
        let diff: Vec<f64> = x.iter().zip(center).map(|(a, b)| a - b).collect();
        Ok(l.solve(&diff).into_iter().map(|v| 2.0 * v).collect())
    }
}

/// `(x − μ)ᵀ Σ̂⁻¹ (x − μ)` through triangular solves.
pub fn mahalanobis_sq(x: &FeatureVector, g: &ClassGaussian) -> Result<f64> {
    g.mahalanobis_sq_from(x.as_slice(), g.mean.as_slice())
}

/// Shrinks and normalizes a raw covariance. An all-zero covariance (one
/// sample, or identical samples) has no scale to shrink toward; with
/// `gamma1 > 0` under the default convention its limit is the identity.
pub fn regularize(raw: &SymMatrix, params: &ShrinkageParams) -> Result<SymMatrix> {
    let shrunk = shrink(raw, params)?;
    let degenerate = raw.entries().iter().all(|&v| v == 0.0);
    if degenerate && params.convention == ShrinkageConvention::Matched && params.gamma1 > 0.0 {
        return Ok(SymMatrix::identity(raw.dim()));
    }
    normalize_cov(&shrunk)
}

/// mean → covariance → shrink → normalize → Cholesky.
pub fn build_class_gaussian(
    class_id: usize,
    samples: &[FeatureVector],
    params: &ShrinkageParams,
) -> Result<ClassGaussian> {
    if samples.is_empty() {
        return Err(Error::EmptyClass { class: class_id });
    }
    let mean = estimate_mean(samples)?;
    let raw_cov = estimate_covariance(samples, &mean)?;
    let shrunk_cov = regularize(&raw_cov, params)?;
    ClassGaussian::from_parts(class_id, mean, raw_cov, shrunk_cov, samples.len())
}

/// One Gaussian per class, all sharing a covariance estimated from the
/// pooled samples treated as a single class. Each model keeps its own
/// class mean.
pub fn build_unified_gaussians(
    per_class: &[Vec<FeatureVector>],
    params: &ShrinkageParams,
) -> Result<Vec<ClassGaussian>> {
    for (c, s) in per_class.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::EmptyClass { class: c });
        }
    }
    let pooled: Vec<FeatureVector> = per_class.iter().flatten().cloned().collect();
    let shared = build_class_gaussian(usize::MAX, &pooled, params)?;
    per_class
        .iter()
        .enumerate()
        .map(|(c, s)| {
            let mut g = shared.recentred(c, estimate_mean(s)?)?;
            g.sample_count = s.len();
            Ok(g)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec())
    }

    fn m(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn mean_examples() {
        assert_eq!(
            estimate_mean(&[fv(&[1.0, 0.0]), fv(&[-1.0, 0.0])]).unwrap(),
            fv(&[0.0, 0.0])
        );
        assert_eq!(estimate_mean(&[fv(&[2.0, 4.0])]).unwrap(), fv(&[2.0, 4.0]));
    }

    #[test]
    fn mean_errors() {
        assert!(matches!(estimate_mean(&[]), Err(Error::EmptyClass { .. })));
        assert!(matches!(
            estimate_mean(&[fv(&[1.0]), fv(&[1.0, 2.0])]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn covariance_examples() {
        let s = [fv(&[1.0, 0.0]), fv(&[-1.0, 0.0])];
        let c = estimate_covariance(&s, &fv(&[0.0, 0.0])).unwrap();
        assert_eq!(c, m(&[&[1.0, 0.0], &[0.0, 0.0]]));
        let one = [fv(&[3.0, -2.0])];
        let c = estimate_covariance(&one, &estimate_mean(&one).unwrap()).unwrap();
        assert_eq!(c, SymMatrix::zeros(2));
    }

    #[test]
    fn shrink_examples() {
        let p = ShrinkageParams::new(1.0, 1.0);
        let out = shrink(&m(&[&[1.0, 0.0], &[0.0, 0.0]]), &p).unwrap();
        assert_eq!(out, m(&[&[1.5, 0.0], &[0.0, 0.5]]));
        let out = shrink(&m(&[&[2.0, 1.0], &[1.0, 2.0]]), &p).unwrap();
        assert_eq!(out, m(&[&[4.0, 2.0], &[2.0, 4.0]]));
        for conv in [ShrinkageConvention::Matched, ShrinkageConvention::Swapped] {
            let out = shrink(&SymMatrix::zeros(3), &p.with_convention(conv)).unwrap();
            assert_eq!(out, SymMatrix::zeros(3));
        }
    }

    #[test]
    fn swapped_convention_can_be_indefinite() {
        let p = ShrinkageParams::new(1.0, 1.0).with_convention(ShrinkageConvention::Swapped);
        let out = shrink(&m(&[&[1.0, 0.0], &[0.0, 0.0]]), &p).unwrap();
        assert_eq!(out, m(&[&[1.0, 0.5], &[0.5, 0.0]]));
        assert!(out.cholesky().is_err());
    }

    #[test]
    fn negative_gamma_rejected() {
        let p = ShrinkageParams::new(-1.0, 0.0);
        assert!(matches!(
            shrink(&SymMatrix::identity(2), &p),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_cov(&m(&[&[4.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert_eq!(out, m(&[&[1.0, 0.5], &[0.5, 1.0]]));
        assert_eq!(
            normalize_cov(&SymMatrix::identity(3)).unwrap(),
            SymMatrix::identity(3)
        );
        assert!(matches!(
            normalize_cov(&m(&[&[1.0, 0.0], &[0.0, 0.0]])),
            Err(Error::NonPositiveDiagonal { index: 1, .. })
        ));
    }

    #[test]
    fn mahalanobis_examples() {
        let g = ClassGaussian::identity(0, fv(&[0.0, 0.0]));
        assert_eq!(mahalanobis_sq(&fv(&[3.0, 4.0]), &g).unwrap(), 25.0);
        let d = SymMatrix::diagonal(&[4.0, 1.0]);
        let g = ClassGaussian::from_parts(0, fv(&[0.0, 0.0]), d.clone(), d, 0).unwrap();
        assert!((mahalanobis_sq(&fv(&[2.0, 1.0]), &g).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn missing_factorization() {
        let g = ClassGaussian::identity(0, fv(&[0.0])).without_factorization();
        assert_eq!(
            mahalanobis_sq(&fv(&[1.0]), &g),
            Err(Error::FactorizationMissing)
        );
    }

    #[test]
    fn single_sample_large_gammas() {
        let s = [fv(&[0.3, -0.1, 0.2, 0.9, -0.4, 0.05, 0.0, 0.7])];
        let g = build_class_gaussian(0, &s, &ShrinkageParams::new(500.0, 300.0)).unwrap();
        assert!(g.factorization().is_ok());
        assert_eq!(g.sample_count, 1);
    }

    #[test]
    fn identical_points_rescued() {
        let s = vec![fv(&[1.0, 2.0]); 16];
        let g = build_class_gaussian(3, &s, &ShrinkageParams::new(600.0, 100.0)).unwrap();
        assert_eq!(g.shrunk_cov, SymMatrix::identity(2));
        assert_eq!(g.class_id, 3);
    }

    #[test]
    fn unified_gaussians_share_covariance() {
        let per_class = vec![
            vec![fv(&[1.0, 0.0])],
            vec![fv(&[0.0, 1.0])],
            vec![fv(&[-1.0, 0.5])],
        ];
        let gs = build_unified_gaussians(&per_class, &ShrinkageParams::new(1.0, 0.5)).unwrap();
        assert_eq!(gs.len(), 3);
        assert_eq!(gs[0].shrunk_cov, gs[1].shrunk_cov);
        assert_eq!(gs[1].shrunk_cov, gs[2].shrunk_cov);
        assert_eq!(gs[2].mean, fv(&[-1.0, 0.5]));
        assert_eq!(gs[2].class_id, 2);
    }
}
