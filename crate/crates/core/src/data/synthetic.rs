//! Anisotropic Gaussian class benchmark with known generative parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::argmin;
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::feature::{norm, FeatureVector};
use crate::linalg::{Cholesky, SymMatrix};
use crate::rng::{self, Purpose, StreamRng};

/// Eigenvalue profile of each class covariance before scaling to unit
/// average variance. `κ` is the class's condition number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Spectrum {
    /// `rank` leading eigenvalues equal `κ`, the rest equal 1.
    Spiked { rank: usize },
    /// Eigenvalues decay geometrically from `κ` to 1.
    Geometric,
}

impl Default for Spectrum {
    fn default() -> Self {
        Spectrum::Spiked { rank: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    /// Radius of the sphere the class means are drawn on.
    pub mean_scale: f64,
    pub cond_min: f64,
    pub cond_max: f64,
    pub per_class: usize,
    #[serde(default)]
    pub spectrum: Spectrum,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Ten 64-dimensional classes with condition numbers in `[5, 50]`.
    pub fn heterogeneous(seed: u64) -> Self {
        SyntheticSpec {
            classes: 10,
            dim: 64,
            mean_scale: 3.0,
            cond_min: 5.0,
            cond_max: 50.0,
            per_class: 100,
            spectrum: Spectrum::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.classes < 2 {
            return bad("synthetic data needs at least 2 classes");
        }
        if self.dim == 0 || self.per_class == 0 {
            return bad("dimension and samples per class must be positive");
        }
        if !(self.cond_min >= 1.0)
            || !(self.cond_max >= self.cond_min)
            || !self.cond_max.is_finite()
        {
            return bad("condition numbers need 1 <= min <= max < inf");
        }
        if !(self.mean_scale >= 0.0) || !self.mean_scale.is_finite() {
            return bad("mean scale must be finite and non-negative");
        }
        if let Spectrum::Spiked { rank } = self.spectrum {
            if rank == 0 || rank > self.dim {
                return bad("spike rank must be in 1..=dim");
            }
        }
        Ok(())
    }
}

/// True generative parameters of a synthetic set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub means: Vec<FeatureVector>,
    pub covariances: Vec<SymMatrix>,
    pub condition_numbers: Vec<f64>,
    #[serde(skip)]
    factors: Vec<Cholesky>,
}

impl OracleParams {
    pub fn new(means: Vec<FeatureVector>, covariances: Vec<SymMatrix>) -> Result<Self> {
        let factors = covariances
            .iter()
            .map(SymMatrix::cholesky)
            .collect::<Result<Vec<_>>>()?;
        Ok(OracleParams {
            condition_numbers: Vec::new(),
            means,
            covariances,
            factors,
        })
    }

    pub fn class_count(&self) -> usize {
        self.means.len()
    }
}

fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Rows form a random orthonormal basis (modified Gram–Schmidt on a
/// Gaussian matrix).
fn random_orthonormal(rng: &mut StreamRng, dim: usize) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v = normal_vec(rng, dim);
        for q in &rows {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|a| *a /= n);
            rows.push(v);
        }
    }
    rows
}

fn eigenvalues(spectrum: Spectrum, dim: usize, kappa: f64) -> Vec<f64> {
    let raw: Vec<f64> = match spectrum {
        Spectrum::Spiked { rank } => (0..dim)
            .map(|i| if i < rank { kappa } else { 1.0 })
            .collect(),
        Spectrum::Geometric if dim == 1 => vec![1.0],
        Spectrum::Geometric => (0..dim)
            .map(|i| kappa.powf(1.0 - i as f64 / (dim - 1) as f64))
            .collect(),
    };
    let mean = raw.iter().sum::<f64>() / dim as f64;
    raw.into_iter().map(|l| l / mean).collect()
}

/// Draws class means on a sphere of radius `mean_scale`, a random rotated
/// covariance per class with a log-uniform condition number, and samples
/// through the Cholesky factor. Features are rounded to f32 precision so the
/// set survives a CAMF round trip unchanged.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(EmbeddingSet, OracleParams)> {
    spec.validate()?;
    let d = spec.dim;
    let mut means = Vec::with_capacity(spec.classes);
    let mut covariances = Vec::with_capacity(spec.classes);
    let mut conds = Vec::with_capacity(spec.classes);
    let mut features = Vec::with_capacity(spec.classes * spec.per_class);
    let mut labels = Vec::with_capacity(spec.classes * spec.per_class);

    for c in 0..spec.classes {
        let mut rng = rng::stream(spec.seed, Purpose::Synthetic, c as u64);
        let dir = normal_vec(&mut rng, d);
        let n = norm(&dir);
        let mean: Vec<f64> = dir.iter().map(|v| v / n * spec.mean_scale).collect();

        let u: f64 = rng.random();
        let kappa = (spec.cond_min.ln() + u * (spec.cond_max.ln() - spec.cond_min.ln())).exp();
        let lambda = eigenvalues(spec.spectrum, d, kappa);
        let basis = random_orthonormal(&mut rng, d);
        let mut cov = SymMatrix::zeros(d);
        for i in 0..d {
            for j in 0..=i {
                let v: f64 = (0..d).map(|k| lambda[k] * basis[k][i] * basis[k][j]).sum();
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
        let chol = cov.cholesky()?;
        for _ in 0..spec.per_class {
            let z = normal_vec(&mut rng, d);
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    let s: f64 = (0..=i).map(|k| chol.get(i, k) * z[k]).sum();
                    (mean[i] + s) as f32 as f64
                })
                .collect();
            features.push(FeatureVector::new(x));
            labels.push(c);
        }
        means.push(FeatureVector::new(mean));
        covariances.push(cov);
        conds.push(kappa);
    }
    let set = EmbeddingSet::new(
        features,
        labels,
        EmbeddingSet::default_class_names(spec.classes),
        false,
    )?;
    let mut oracle = OracleParams::new(means, covariances)?;
    oracle.condition_numbers = conds;
    Ok((set, oracle))
}

/// Maximum-likelihood class under the true Gaussians, log-determinant
/// included.
pub fn bayes_oracle(x: &FeatureVector, oracle: &OracleParams) -> usize {
    let factors: Vec<Cholesky>;
    let factors = if oracle.factors.len() == oracle.class_count() {
        &oracle.factors
    } else {
        factors = oracle
            .covariances
            .iter()
            .map(|c| {
                c.cholesky()
                    .expect("oracle covariance is positive definite")
            })
            .collect();
        &factors
    };
    let scores: Vec<f64> = oracle
        .means
        .iter()
        .zip(factors)
        .map(|(mu, l)| {
            let diff: Vec<f64> = x
                .as_slice()
                .iter()
                .zip(mu.as_slice())
                .map(|(a, b)| a - b)
                .collect();
            l.quadratic_form_inv(&diff) + l.log_det()
        })
        .collect();
    argmin(&scores)
}
