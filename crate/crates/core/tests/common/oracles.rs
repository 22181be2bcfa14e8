//! Brute-force reference implementations. Nothing here calls into the
//! library's linear algebra, statistics or softmax.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{FromPrimitive, ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    NonFiniteEvaluation { coordinate: usize },
    SingularCovariance { class: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub h: f64,
    pub tolerance: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec {
            h: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Central differences, one coordinate at a time.
pub fn fd_gradient(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    spec: FiniteDiffSpec,
) -> Result<Vec<f64>, OracleError> {
    assert!(spec.h > 0.0);
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + spec.h;
        let up = f(&point);
        point[i] = orig - spec.h;
        let down = f(&point);
        point[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(OracleError::NonFiniteEvaluation { coordinate: i });
        }
        grad.push((up - down) / (2.0 * spec.h));
    }
    Ok(grad)
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), with a floor so two zero vectors compare equal.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    n(&diff) / n(a).max(n(b)).max(1e-12)
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn explicit_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut aug: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))?;
        if aug[pivot][col].abs() < 1e-300 {
            return None;
        }
        aug.swap(col, pivot);
        let p = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let factor = aug[r][col];
                if factor != 0.0 {
                    for c in 0..2 * n {
                        aug[r][c] -= factor * aug[col][c];
                    }
                }
            }
        }
    }
    Some(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// (x − μ)ᵀ A⁻¹ (x − μ) with an explicitly formed inverse.
pub fn mahalanobis_explicit(x: &[f64], mu: &[f64], cov: &[Vec<f64>]) -> f64 {
    let inv = explicit_inverse(cov).expect("invertible covariance");
    let d: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut total = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            total += d[i] * inv[i][j] * d[j];
        }
    }
    total
}

/// Biased (1/N) covariance by direct double summation.
pub fn direct_covariance(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for k in 0..d {
            mean[k] += s[k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for s in samples {
                acc += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
            cov[i][j] = acc / n;
        }
    }
    cov
}

/// Per-coordinate mean in exact rational arithmetic, rounded once.
pub fn exact_mean(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples[0].len();
    let n = BigRational::from_integer(BigInt::from(samples.len()));
    (0..d)
        .map(|k| {
            let mut acc = BigRational::zero();
            for s in samples {
                acc += BigRational::from_f64(s[k]).expect("finite sample");
            }
            (acc / &n).to_f64().expect("representable mean")
        })
        .collect()
}

/// p_i = 1 / Σ_j exp(l_j − l_i).
pub fn scalar_softmax(logits: &[f64]) -> Vec<f64> {
    logits
        .iter()
        .map(|&li| 1.0 / logits.iter().map(|&lj| (lj - li).exp()).sum::<f64>())
        .collect()
}

/// −log p_y = log Σ_j exp(l_j − l_y).
pub fn scalar_cross_entropy(logits: &[f64], y: usize) -> f64 {
    logits
        .iter()
        .map(|&l| (l - logits[y]).exp())
        .sum::<f64>()
        .ln()
}

/// Mean over samples of the per-head cross-entropy, summed over heads, with
/// logits τ / (‖f − u‖² + ε). `protos[c][m]` is head `m` of class `c`.
pub fn cls_loss_reference(
    features: &[Vec<f64>],
    labels: &[usize],
    protos: &[Vec<Vec<f64>>],
    tau: f64,
    epsilon: f64,
) -> f64 {
    let heads = protos[0].len();
    let mut total = 0.0;
    for (f, &y) in features.iter().zip(labels) {
        for m in 0..heads {
            let logits: Vec<f64> = protos
                .iter()
                .map(|c| {
                    let d: f64 = f.iter().zip(&c[m]).map(|(a, b)| (a - b) * (a - b)).sum();
                    tau / (d + epsilon)
                })
                .collect();
            total += scalar_cross_entropy(&logits, y);
        }
    }
    total / features.len() as f64
}

/// LU with partial pivoting; returns (log|det|, solver) or `None` when
/// singular.
pub struct Lu {
    lu: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(a: &[Vec<f64>]) -> Option<Lu> {
        let n = a.len();
        let mut lu = a.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&x, &y| lu[x][k].abs().total_cmp(&lu[y][k].abs()))?;
            if lu[p][k].abs() < 1e-300 {
                return None;
            }
            lu.swap(k, p);
            perm.swap(k, p);
            for i in k + 1..n {
                lu[i][k] /= lu[k][k];
                for j in k + 1..n {
                    lu[i][j] -= lu[i][k] * lu[k][j];
                }
            }
        }
        Some(Lu { lu, perm })
    }

    pub fn log_abs_det(&self) -> f64 {
        (0..self.lu.len()).map(|i| self.lu[i][i].abs().ln()).sum()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu[i][j] * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu[i][j] * y[j];
            }
            y[i] /= self.lu[i][i];
        }
        y
    }
}

/// Class maximizing the full Gaussian log-likelihood
/// −½[(x−μ)ᵀΣ⁻¹(x−μ) + log|Σ| + D log 2π]. Ties go to the lowest index.
pub fn likelihood_bayes(
    x: &[f64],
    means: &[Vec<f64>],
    covs: &[Vec<Vec<f64>>],
) -> Result<usize, OracleError> {
    let d = x.len() as f64;
    let mut best = (0, f64::NEG_INFINITY);
    for (c, (mu, cov)) in means.iter().zip(covs).enumerate() {
        let lu = Lu::new(cov).ok_or(OracleError::SingularCovariance { class: c })?;
        let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
        let sol = lu.solve(&diff);
        let q: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
        let ll = -0.5 * (q + lu.log_abs_det() + d * (2.0 * std::f64::consts::PI).ln());
        if ll > best.1 {
            best = (c, ll);
        }
    }
    Ok(best.0)
}
