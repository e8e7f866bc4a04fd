//! Rescaled Gaussian series priors, simulated white-noise data, the
//! conjugate posterior of `f` given `theta`, and the grid posterior of
//! `theta`.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::deconv::{adjoint_K, tail_mass, ShiftedConvOperator};
use crate::error::{Error, Result};
use crate::model::ModelFamily;
use crate::quad::{cumulative_trapezoid, trapezoid};
use crate::spectral::{CoefficientFunction, Subspace};
use crate::xray::realify;

/// Seeded stream `stream` of the master seed.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `f = tau * sum_j sigma_j Z_j h_j` over the frame `h_j` of a subspace.
#[derive(Clone, Debug)]
pub struct GaussianSeriesPrior {
    subspace: Subspace,
    sigma: Vec<f64>,
    alpha: f64,
    tau: f64,
}

impl GaussianSeriesPrior {
    pub fn new(subspace: Subspace, sigma: Vec<f64>, alpha: f64, tau: f64) -> Result<Self> {
        if sigma.len() != subspace.dim() {
            return Err(Error::DimensionMismatch {
                expected: subspace.dim(),
                got: sigma.len(),
            });
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "prior scales must be finite and nonnegative".into(),
            ));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {tau}"
            )));
        }
        Ok(GaussianSeriesPrior {
            subspace,
            sigma,
            alpha,
            tau,
        })
    }

    /// `sigma_j = (1 + k_j)^{-alpha}` with `k_j` the frequency label.
    pub fn power_law(subspace: Subspace, alpha: f64, tau: f64) -> Self {
        let sigma = subspace
            .labels()
            .iter()
            .map(|&k| (1.0 + k as f64).powf(-alpha))
            .collect();
        Self::new(subspace, sigma, alpha, tau).expect("power-law scales are positive")
    }

    pub fn subspace(&self) -> &Subspace {
        &self.subspace
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.subspace.clone(), self.sigma.clone(), self.alpha, tau)
    }

    pub fn scaled_sigma(&self, factor: f64) -> Result<Self> {
        let sigma = self.sigma.iter().map(|s| s * factor).collect();
        Self::new(self.subspace.clone(), sigma, self.alpha, self.tau)
    }

    /// `sigma_j^{-2}`, times `tau^{-2}` when rescaled.
    pub fn rkhs_weights(&self, rescaled: bool) -> Vec<f64> {
        let t2 = if rescaled { self.tau * self.tau } else { 1.0 };
        self.sigma.iter().map(|s| 1.0 / (s * s * t2)).collect()
    }

    /// Ambient covariance factor `F diag(tau sigma)`.
    pub fn factor(&self) -> DMatrix<f64> {
        let mut f = self.subspace.frame().clone();
        for (j, s) in self.sigma.iter().enumerate() {
            f.column_mut(j).scale_mut(self.tau * s);
        }
        f
    }
}

pub fn prior_draw<R: Rng + ?Sized>(
    prior: &GaussianSeriesPrior,
    rng: &mut R,
) -> CoefficientFunction {
    let z = DVector::from_iterator(
        prior.dim(),
        prior
            .sigma
            .iter()
            .map(|s| prior.tau * s * rng.sample::<f64, _>(StandardNormal)),
    );
    CoefficientFunction::from_vector(prior.subspace.ambient(), &prior.subspace.embed(&z))
        .expect("frame matches ambient")
}

/// One prior draw in ambient coordinates.
pub fn prior_sample(prior: &GaussianSeriesPrior, seed: u64) -> CoefficientFunction {
    prior_draw(prior, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Infinite when `f` leaves the prior's subspace or loads a zero scale.
pub fn rkhs_norm(f: &CoefficientFunction, prior: &GaussianSeriesPrior, rescaled: bool) -> f64 {
    let amb = f.to_ambient();
    if amb.basis() != prior.subspace.ambient() {
        return f64::INFINITY;
    }
    let v = amb.to_vector();
    let c = prior.subspace.coordinates(&v);
    if (prior.subspace.embed(&c) - &v).norm() > 1e-10 * v.norm().max(1.0) {
        return f64::INFINITY;
    }
    let w = prior.rkhs_weights(rescaled);
    let mut s = 0.0;
    for (cj, wj) in c.iter().zip(&w) {
        if *cj != 0.0 {
            s += wj * cj * cj;
        }
    }
    s.sqrt()
}

fn rkhs_inner(
    f: &CoefficientFunction,
    g: &CoefficientFunction,
    prior: &GaussianSeriesPrior,
) -> f64 {
    let cf = prior.subspace.coordinates(&f.to_ambient().to_vector());
    let cg = prior.subspace.coordinates(&g.to_ambient().to_vector());
    let w = prior.rkhs_weights(true);
    (0..cf.len())
        .filter(|&j| cg[j] != 0.0)
        .map(|j| w[j] * cf[j] * cg[j])
        .sum()
}

/// `log d pi_{f + t gamma} / d pi_f (f) = t <gamma, f>_H - t^2 ||gamma||_H^2 / 2`
/// in the rescaled RKHS, read as the density of the prior shifted by
/// `t gamma` relative to the prior, evaluated at `f`.
pub fn cameron_martin_logratio(
    f: &CoefficientFunction,
    gamma: &CoefficientFunction,
    t: f64,
    prior: &GaussianSeriesPrior,
) -> Result<f64> {
    let g = rkhs_norm(gamma, prior, true);
    if !g.is_finite() {
        return Err(Error::InvalidArgument(
            "gamma is not in the RKHS of the prior".into(),
        ));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(t * rkhs_inner(f, gamma, prior) - 0.5 * t * t * g * g)
}

/// Tail (squared) below which truncation bias is ignored: 1% of one
/// coefficient's noise variance.
pub const TAIL_FLOOR_FRACTION: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct Observation {
    pub n: f64,
    pub x: DVector<f64>,
    /// Raw standard-normal draw; `x = K f0 + noise / sqrt(n)`.
    pub noise: DVector<f64>,
    pub theta0: f64,
    /// Truth in ambient coordinates of the model family.
    pub f0: CoefficientFunction,
}

fn truncate_truth(
    f0: &CoefficientFunction,
    family: &ModelFamily,
    n: f64,
) -> Result<CoefficientFunction> {
    let amb = f0.to_ambient();
    let target = family.basis();
    if amb.basis() == target {
        return Ok(amb);
    }
    if amb.basis().kind() != target.kind() || amb.basis().truncation() < target.truncation() {
        return amb.retruncate(target.truncation());
    }
    let floor = TAIL_FLOOR_FRACTION / n;
    let (tail, required) = match family {
        ModelFamily::Convolution(kernel) => {
            let big = kernel.retruncate(amb.basis().truncation())?;
            let tail = tail_mass(&big, &amb, target.truncation())?;
            (tail, crate::deconv::required_truncation(&big, &amb, floor)?)
        }
        ModelFamily::Xray(_) => {
            let short = amb
                .retruncate(target.truncation())?
                .retruncate(amb.basis().truncation())?;
            let tail = amb.axpy(-1.0, &short)?.norm().powi(2);
            let mut required = target.truncation();
            while required < amb.basis().truncation() {
                let s = amb
                    .retruncate(required)?
                    .retruncate(amb.basis().truncation())?;
                if amb.axpy(-1.0, &s)?.norm().powi(2) < floor {
                    break;
                }
                required += 1;
            }
            (tail, required)
        }
    };
    if tail >= floor {
        return Err(Error::TruncationTail {
            tail,
            floor,
            required,
        });
    }
    amb.retruncate(target.truncation())
}

/// `X = K_{theta0} f0 + n^{-1/2} W`; deterministic in `seed`.
pub fn simulate(
    theta0: f64,
    f0: &CoefficientFunction,
    family: &ModelFamily,
    n: f64,
    seed: u64,
) -> Result<Observation> {
    simulate_with(theta0, f0, family, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn simulate_with<R: Rng + ?Sized>(
    theta0: f64,
    f0: &CoefficientFunction,
    family: &ModelFamily,
    n: f64,
    rng: &mut R,
) -> Result<Observation> {
    let noise = DVector::from_fn(family.output_dim(), |_, _| rng.sample(StandardNormal));
    observe(theta0, f0, family, n, noise)
}

/// The noise-free surrogate `X = K_{theta0} f0`.
pub fn simulate_noiseless(
    theta0: f64,
    f0: &CoefficientFunction,
    family: &ModelFamily,
    n: f64,
) -> Result<Observation> {
    observe(theta0, f0, family, n, DVector::zeros(family.output_dim()))
}

fn observe(
    theta0: f64,
    f0: &CoefficientFunction,
    family: &ModelFamily,
    n: f64,
    noise: DVector<f64>,
) -> Result<Observation> {
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "n must be positive, got {n}"
        )));
    }
    let f0 = truncate_truth(f0, family, n)?;
    let signal = family.at(theta0).apply(&f0)?;
    let x = &signal + &noise / n.sqrt();
    Ok(Observation {
        n,
        x,
        noise,
        theta0,
        f0,
    })
}

/// Precomputed pieces of the Gaussian marginal `X ~ N(0, B B^T + I/n)` with
/// `B = K_theta F diag(tau sigma)`.
pub struct MarginalLikelihood<'a> {
    family: &'a ModelFamily,
    obs: &'a Observation,
    factor: DMatrix<f64>,
    /// Cholesky factor of `M = I + n B^T B` when it does not depend on `theta`.
    fixed: Option<Cholesky<f64, Dyn>>,
}

fn cholesky(m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let diag_min = m.diagonal().min();
    Cholesky::new(m).ok_or_else(|| {
        Error::NotPositiveDefinite(format!("smallest diagonal entry {diag_min:.3e}"))
    })
}

impl<'a> MarginalLikelihood<'a> {
    pub fn new(
        family: &'a ModelFamily,
        obs: &'a Observation,
        prior: &GaussianSeriesPrior,
    ) -> Result<Self> {
        if prior.subspace().ambient() != family.basis() {
            return Err(Error::BasisMismatch {
                left: family.basis().to_string(),
                right: prior.subspace().basis().to_string(),
            });
        }
        if obs.x.len() != family.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: family.output_dim(),
                got: obs.x.len(),
            });
        }
        let factor = prior.factor();
        let fixed = match family {
            // K_theta^T K_theta = diag(g_k^2) does not depend on theta
            ModelFamily::Convolution(_) => {
                let b = family.matrix_at(0.0) * &factor;
                Some(cholesky(precision(&b, obs.n))?)
            }
            ModelFamily::Xray(_) => None,
        };
        Ok(MarginalLikelihood {
            family,
            obs,
            factor,
            fixed,
        })
    }

    /// `B^T X` and the Cholesky factor of `M` at `theta`.
    fn pieces(&self, theta: f64) -> Result<(DVector<f64>, Option<Cholesky<f64, Dyn>>)> {
        match self.family {
            ModelFamily::Convolution(kernel) => {
                let op = ShiftedConvOperator::new(kernel.clone(), theta);
                let xf = CoefficientFunction::from_vector(self.family.basis(), &self.obs.x)?;
                let kt_x = adjoint_K(&op, &xf)?.to_vector();
                Ok((self.factor.tr_mul(&kt_x), None))
            }
            ModelFamily::Xray(table) => {
                let a = table.matrix(theta, 0);
                let gram = realify(&a.ad_mul(&a));
                let ftgf = self.factor.tr_mul(&(gram * &self.factor));
                let (b, chol) = xray_pieces(&a, &ftgf, &self.factor, self.obs)?;
                Ok((b, Some(chol)))
            }
        }
    }

    pub fn log_likelihood(&self, theta: f64) -> Result<f64> {
        let (b, chol) = self.pieces(theta)?;
        let chol = chol
            .as_ref()
            .or(self.fixed.as_ref())
            .expect("one factorization is present");
        Ok(woodbury_value(self.obs, &b, chol))
    }

    /// Conjugate posterior of `f` at `theta`.
    pub fn conditional(&self, theta: f64) -> Result<GaussianPosterior> {
        let n = self.obs.n;
        let (b, chol) = self.pieces(theta)?;
        let chol = chol
            .as_ref()
            .or(self.fixed.as_ref())
            .expect("one factorization is present");
        let z_mean = chol.solve(&(b * n));
        // Cov_z = M^{-1} = L^{-T} L^{-1}
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(z_mean.len(), z_mean.len()))
            .ok_or_else(|| Error::NotPositiveDefinite("singular Cholesky factor".into()))?;
        let mean = CoefficientFunction::from_vector(self.family.basis(), &(&self.factor * z_mean))?;
        Ok(GaussianPosterior {
            mean,
            cov_factor: &self.factor * l_inv.transpose(),
        })
    }
}

/// `B^T X` and the Cholesky factor of `M = I + n F^T G F` for an X-ray
/// model with complex matrix `a` and `ftgf = F^T realify(a^H a) F`.
///
/// `realify(a)^T realify(a) = realify(a^H a)` and `realify(a)^T x`
/// interleaves `a^H x`, so the work stays complex and small.
fn xray_pieces(
    a: &DMatrix<Complex64>,
    ftgf: &DMatrix<f64>,
    factor: &DMatrix<f64>,
    obs: &Observation,
) -> Result<(DVector<f64>, Cholesky<f64, Dyn>)> {
    let xc = DVector::from_fn(a.nrows(), |i, _| {
        Complex64::new(obs.x[2 * i], obs.x[2 * i + 1])
    });
    let v = a.ad_mul(&xc);
    let atx = DVector::from_fn(2 * v.len(), |i, _| {
        if i % 2 == 0 {
            v[i / 2].re
        } else {
            v[i / 2].im
        }
    });
    let mut m = ftgf * obs.n;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    Ok((factor.tr_mul(&atx), cholesky(m)?))
}

/// `log p(X)` from `b = B^T X` and the Cholesky factor of `M = I + n B^T B`.
fn woodbury_value(obs: &Observation, b: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = obs.n;
    let logdet: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let quad = n * obs.x.norm_squared() - n * n * b.dot(&chol.solve(b));
    let dim = obs.x.len() as f64;
    -0.5 * (dim * (2.0 * PI).ln() - dim * n.ln() + logdet + quad)
}

fn precision(b: &DMatrix<f64>, n: f64) -> DMatrix<f64> {
    let mut m = b.tr_mul(b) * n;
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    m
}

/// `log p(X | theta)` with `f` integrated against the prior.
pub fn log_marginal_likelihood(
    theta: f64,
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
) -> Result<f64> {
    MarginalLikelihood::new(family, obs, prior)?.log_likelihood(theta)
}

/// `log p(X_i | grid[j])` for several observations sharing one family, as
/// rows indexed by observation. The `theta`-dependent operator work is done
/// once per node.
pub fn log_likelihood_table(
    family: &ModelFamily,
    observations: &[Observation],
    priors: &[GaussianSeriesPrior],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    if observations.len() != priors.len() {
        return Err(Error::DimensionMismatch {
            expected: observations.len(),
            got: priors.len(),
        });
    }
    let likelihoods = observations
        .iter()
        .zip(priors)
        .map(|(o, p)| MarginalLikelihood::new(family, o, p))
        .collect::<Result<Vec<_>>>()?;
    let ModelFamily::Xray(table) = family else {
        return likelihoods
            .iter()
            .map(|ml| grid.iter().map(|&t| ml.log_likelihood(t)).collect())
            .collect();
    };
    // observations usually share a handful of prior factors
    let mut factors: Vec<&DMatrix<f64>> = Vec::new();
    let owner: Vec<usize> = likelihoods
        .iter()
        .map(|ml| match factors.iter().position(|f| **f == ml.factor) {
            Some(i) => i,
            None => {
                factors.push(&ml.factor);
                factors.len() - 1
            }
        })
        .collect();
    let columns = grid
        .par_iter()
        .map(|&t| {
            let a = table.matrix(t, 0);
            let gram = realify(&a.ad_mul(&a));
            let projected: Vec<DMatrix<f64>> =
                factors.iter().map(|f| f.tr_mul(&(&gram * *f))).collect();
            observations
                .iter()
                .zip(&owner)
                .map(|(obs, &i)| {
                    let (b, chol) = xray_pieces(&a, &projected[i], factors[i], obs)?;
                    Ok(woodbury_value(obs, &b, &chol))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..observations.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect())
}

/// Per-frequency closed form for convolution families whose prior
/// covariance is block diagonal in `(cos, sin)` pairs.
pub fn log_marginal_likelihood_blocks(
    theta: f64,
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
) -> Result<f64> {
    let ModelFamily::Convolution(kernel) = family else {
        return Err(Error::InvalidArgument(
            "block path needs a convolution family".into(),
        ));
    };
    let f = prior.factor();
    let cov = &f * f.transpose();
    let k_max = kernel.k_max();
    let block = |k: usize| {
        if k == 0 {
            vec![0]
        } else {
            vec![2 * k - 1, 2 * k]
        }
    };
    for i in 0..cov.nrows() {
        for j in 0..cov.ncols() {
            let (ki, kj) = ((i + 1) / 2, (j + 1) / 2);
            if ki != kj && cov[(i, j)].abs() > 1e-14 {
                return Err(Error::InvalidArgument(
                    "prior covariance is not block diagonal by frequency".into(),
                ));
            }
        }
    }
    let n = obs.n;
    let mut total = 0.0;
    for k in 0..=k_max {
        let idx = block(k);
        let sym = crate::deconv::symbol_block(kernel, theta, k, 0);
        let x = DVector::from_iterator(idx.len(), idx.iter().map(|&i| obs.x[i]));
        let c = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])]);
        let s = if k == 0 {
            DMatrix::from_element(1, 1, sym[(0, 0)])
        } else {
            DMatrix::from_fn(2, 2, |a, b| sym[(a, b)])
        };
        let mut sigma = &s * c * s.transpose();
        for i in 0..idx.len() {
            sigma[(i, i)] += 1.0 / n;
        }
        let (det, inv) = if idx.len() == 1 {
            let v = sigma[(0, 0)];
            (v, DMatrix::from_element(1, 1, 1.0 / v))
        } else {
            let det = sigma[(0, 0)] * sigma[(1, 1)] - sigma[(0, 1)] * sigma[(1, 0)];
            let inv = DMatrix::from_row_slice(
                2,
                2,
                &[sigma[(1, 1)], -sigma[(0, 1)], -sigma[(1, 0)], sigma[(0, 0)]],
            ) / det;
            (det, inv)
        };
        if !(det > 0.0) {
            return Err(Error::NotPositiveDefinite(format!(
                "frequency {k} block determinant {det:.3e}"
            )));
        }
        let q = x.dot(&(inv * &x));
        total += -0.5 * (idx.len() as f64 * (2.0 * PI).ln() + det.ln() + q);
    }
    Ok(total)
}

#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mean: CoefficientFunction,
    /// Ambient covariance is `cov_factor * cov_factor^T`.
    pub cov_factor: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.cov_factor * self.cov_factor.transpose()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CoefficientFunction {
        let z = DVector::from_fn(self.cov_factor.ncols(), |_, _| rng.sample(StandardNormal));
        let v = self.mean.to_vector() + &self.cov_factor * z;
        CoefficientFunction::from_vector(self.mean.basis(), &v).expect("same basis")
    }
}

pub fn conditional_posterior_f(
    theta: f64,
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
) -> Result<GaussianPosterior> {
    MarginalLikelihood::new(family, obs, prior)?.conditional(theta)
}

/// Prior density for `theta` on `Theta = [lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaPrior {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Normal restricted to `[lo, hi]`.
    TruncatedNormal {
        mean: f64,
        sd: f64,
        lo: f64,
        hi: f64,
    },
}

impl ThetaPrior {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            ThetaPrior::Uniform { lo, hi } | ThetaPrior::TruncatedNormal { lo, hi, .. } => (lo, hi),
        }
    }

    /// Unnormalized log density; `-inf` outside the support.
    pub fn log_density(&self, theta: f64) -> f64 {
        let (lo, hi) = self.support();
        if theta < lo || theta > hi {
            return f64::NEG_INFINITY;
        }
        match *self {
            ThetaPrior::Uniform { .. } => 0.0,
            ThetaPrior::TruncatedNormal { mean, sd, .. } => -0.5 * ((theta - mean) / sd).powi(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.support();
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Theta = [{lo}, {hi}] is not a bounded interval"
            )));
        }
        if let ThetaPrior::TruncatedNormal { sd, .. } = *self {
            if !(sd > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "prior sd must be positive, got {sd}"
                )));
            }
        }
        Ok(())
    }
}

pub fn uniform_grid(lo: f64, hi: f64, nodes: usize) -> Vec<f64> {
    let nodes = nodes.max(2);
    // endpoints are exact so the grid never leaves [lo, hi]
    (0..nodes)
        .map(|i| {
            if i == nodes - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (nodes - 1) as f64
            }
        })
        .collect()
}

pub const DEFAULT_GRID_NODES: usize = 4001;
pub const EDGE_MASS_TOL: f64 = 1e-3;
pub const REFINE_TOL: f64 = 1e-3;
pub const MAX_REFINEMENTS: usize = 12;

#[derive(Clone, Debug)]
pub struct ThetaPosterior {
    pub grid: Vec<f64>,
    /// Unnormalized `log pi(theta) + log p(X | theta)`.
    pub log_weights: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    cdf: Vec<f64>,
}

impl ThetaPosterior {
    pub fn from_log_weights(grid: Vec<f64>, log_weights: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != log_weights.len() {
            return Err(Error::InvalidArgument(
                "grid and weights must have equal length >= 2".into(),
            ));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "theta grid must be strictly increasing".into(),
            ));
        }
        let top = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !top.is_finite() {
            return Err(Error::InvalidArgument(
                "posterior has no finite weight on the grid".into(),
            ));
        }
        let raw: Vec<f64> = log_weights.iter().map(|l| (l - top).exp()).collect();
        let z = trapezoid(&grid, &raw);
        let density: Vec<f64> = raw.iter().map(|r| r / z).collect();
        let moment = |p: u32, c: f64| -> f64 {
            let v: Vec<f64> = grid
                .iter()
                .zip(&density)
                .map(|(t, d)| (t - c).powi(p as i32) * d)
                .collect();
            trapezoid(&grid, &v)
        };
        let mean = moment(1, 0.0);
        let variance = moment(2, mean);
        let mut cdf = cumulative_trapezoid(&grid, &density);
        let last = *cdf.last().expect("nonempty");
        cdf.iter_mut().for_each(|c| *c /= last);
        Ok(ThetaPosterior {
            grid,
            log_weights,
            density,
            mean,
            variance,
            cdf,
        })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn mode(&self) -> f64 {
        let i = (0..self.density.len())
            .max_by(|&a, &b| self.density[a].total_cmp(&self.density[b]))
            .expect("nonempty");
        self.grid[i]
    }

    /// Trapezoid integral of the density.
    pub fn total_mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Inverse of the piecewise-linear CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < p);
        if i == 0 {
            return self.grid[0];
        }
        if i >= self.grid.len() {
            return *self.grid.last().expect("nonempty");
        }
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + w * (self.grid[i] - self.grid[i - 1])
    }

    /// Central credible interval at `level`.
    pub fn credible_interval(&self, level: f64) -> (f64, f64) {
        let a = 0.5 * (1.0 - level);
        (self.quantile(a), self.quantile(1.0 - a))
    }

    /// Density at `theta` by linear interpolation (0 off the grid).
    pub fn density_at(&self, theta: f64) -> f64 {
        let g = &self.grid;
        if theta < g[0] || theta > g[g.len() - 1] {
            return 0.0;
        }
        let i = g.partition_point(|&t| t < theta).max(1);
        let w = (theta - g[i - 1]) / (g[i] - g[i - 1]);
        self.density[i - 1] * (1.0 - w) + self.density[i] * w
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Mass within three spacings of each end of the grid.
    fn edge_masses(&self) -> (f64, f64) {
        let m = self.grid.len();
        let k = 3.min(m - 1);
        (self.cdf[k], 1.0 - self.cdf[m - 1 - k])
    }
}

/// Evaluates the posterior on a fixed sorted grid.
pub fn theta_grid_posterior(
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
    theta_prior: &ThetaPrior,
    grid: &[f64],
) -> Result<ThetaPosterior> {
    let ml = MarginalLikelihood::new(family, obs, prior)?;
    grid_posterior_cached(&ml, theta_prior, grid, &mut HashMap::new())
}

fn grid_posterior_cached(
    ml: &MarginalLikelihood<'_>,
    theta_prior: &ThetaPrior,
    grid: &[f64],
    cache: &mut HashMap<u64, f64>,
) -> Result<ThetaPosterior> {
    check_grid(theta_prior, grid)?;
    let missing: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|t| !cache.contains_key(&t.to_bits()))
        .collect();
    let fresh = missing
        .par_iter()
        .map(|&t| ml.log_likelihood(t))
        .collect::<Result<Vec<f64>>>()?;
    cache.extend(missing.iter().map(|t| t.to_bits()).zip(fresh));
    let log_lik = grid.iter().map(|&t| cache[&t.to_bits()]).collect();
    posterior_from_log_likelihood(theta_prior, grid, log_lik)
}

/// Grid posteriors of several observations sharing one family.
pub fn theta_posteriors_on_grid(
    family: &ModelFamily,
    observations: &[Observation],
    priors: &[GaussianSeriesPrior],
    theta_prior: &ThetaPrior,
    grid: &[f64],
) -> Result<Vec<ThetaPosterior>> {
    check_grid(theta_prior, grid)?;
    log_likelihood_table(family, observations, priors, grid)?
        .into_iter()
        .map(|ll| posterior_from_log_likelihood(theta_prior, grid, ll))
        .collect()
}

fn check_grid(theta_prior: &ThetaPrior, grid: &[f64]) -> Result<()> {
    theta_prior.validate()?;
    let (lo, hi) = theta_prior.support();
    if grid.iter().any(|&t| t < lo || t > hi) {
        return Err(Error::InvalidArgument(
            "theta grid leaves the prior support".into(),
        ));
    }
    Ok(())
}

fn posterior_from_log_likelihood(
    theta_prior: &ThetaPrior,
    grid: &[f64],
    log_lik: Vec<f64>,
) -> Result<ThetaPosterior> {
    let (lo, hi) = theta_prior.support();
    let log_weights = grid
        .iter()
        .zip(log_lik)
        .map(|(&t, l)| theta_prior.log_density(t) + l)
        .collect();
    let post = ThetaPosterior::from_log_weights(grid.to_vec(), log_weights)?;
    let span = hi - lo;
    let (left, right) = post.edge_masses();
    let open_left = grid[0] > lo + 1e-12 * span;
    let open_right = grid[grid.len() - 1] < hi - 1e-12 * span;
    if (open_left && left > EDGE_MASS_TOL) || (open_right && right > EDGE_MASS_TOL) {
        return Err(Error::CoarseThetaGrid(format!(
            "posterior mass {:.3e} / {:.3e} near the grid edges while Theta = [{lo}, {hi}] extends further; widen or refine the grid",
            left, right
        )));
    }
    Ok(post)
}

/// Uniform grid over `Theta` plus a window of +-12 posterior sd around the
/// mode that is densified until mean and variance move by less than 0.1%.
pub fn theta_posterior_adaptive(
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
    theta_prior: &ThetaPrior,
    base_nodes: usize,
) -> Result<ThetaPosterior> {
    let ml = MarginalLikelihood::new(family, obs, prior)?;
    let mut cache = HashMap::new();
    let (lo, hi) = theta_prior.support();
    let base = uniform_grid(lo, hi, base_nodes);
    let mut post = grid_posterior_cached(&ml, theta_prior, &base, &mut cache)?;
    let mut window_nodes = 201;
    for _ in 0..MAX_REFINEMENTS {
        let centre = post.mode();
        let half = 12.0 * post.sd().max(1e-12);
        let (a, b) = ((centre - half).max(lo), (centre + half).min(hi));
        let mut grid: Vec<f64> = base.iter().copied().filter(|&t| t < a || t > b).collect();
        grid.extend(uniform_grid(a, b, window_nodes));
        grid.sort_by(f64::total_cmp);
        grid.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (hi - lo));
        let next = grid_posterior_cached(&ml, theta_prior, &grid, &mut cache)?;
        let dm = (next.mean - post.mean).abs() / next.sd().max(f64::MIN_POSITIVE);
        let dv = (next.variance - post.variance).abs() / next.variance.max(f64::MIN_POSITIVE);
        post = next;
        if dm < REFINE_TOL && dv < REFINE_TOL {
            return Ok(post);
        }
        window_nodes = 2 * window_nodes - 1;
    }
    Err(Error::CoarseThetaGrid(format!(
        "adaptive refinement did not settle after {MAX_REFINEMENTS} doublings"
    )))
}

/// Monte Carlo prior probability of `||K_theta f - K_theta0 f0|| <= eps`
/// under `theta ~ pi_theta`, `f ~ prior`.
pub fn small_ball_probability(
    family: &ModelFamily,
    obs_truth: (f64, &CoefficientFunction),
    prior: &GaussianSeriesPrior,
    theta_prior: &ThetaPrior,
    eps: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let (theta0, f0) = obs_truth;
    let target = family.at(theta0).apply(f0)?;
    let (lo, hi) = theta_prior.support();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let theta = loop {
            let t = lo + (hi - lo) * rng.gen::<f64>();
            let accept = theta_prior.log_density(t).exp();
            if rng.gen::<f64>() <= accept {
                break t;
            }
        };
        let f = prior_draw(prior, &mut rng);
        if (family.at(theta).apply(&f)? - &target).norm() <= eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples as f64)
}

/// Draws from the joint posterior: `theta` from the grid marginal, then `f`
/// from the conditional.
pub fn joint_posterior_draws(
    post: &ThetaPosterior,
    obs: &Observation,
    prior: &GaussianSeriesPrior,
    family: &ModelFamily,
    draws: usize,
    seed: u64,
) -> Result<Vec<(f64, CoefficientFunction)>> {
    let ml = MarginalLikelihood::new(family, obs, prior)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            let theta = post.draw(&mut rng);
            Ok((theta, ml.conditional(theta)?.draw(&mut rng)))
        })
        .collect()
}
