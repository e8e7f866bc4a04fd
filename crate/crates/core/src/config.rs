//! Experiment configuration: flat `key = value` files with section headers.
//!
//! ```ini
//! [model]
//! example = deconvolution
//! h_space = cosine
//! alpha = 1
//! kappa_or_beta = 3
//! truncation = 32
//!
//! [truth]
//! theta0 = 0.1
//! f0 = trig
//! cos = 1, 1
//!
//! [theta]
//! lo = -0.3
//! hi = 0.3
//!
//! [run]
//! n = 1e4, 1e5, 1e6
//! seed = 1
//! ```

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ini::Ini;

use crate::bayes::{GaussianSeriesPrior, ThetaPrior, DEFAULT_GRID_NODES};
use crate::deconv::ConvolutionKernel;
use crate::efficiency::{rate_bundle_with_beta, Example, RateBundle};
use crate::error::{Error, Result};
use crate::model::ModelFamily;
use crate::spectral::{Basis, CoefficientFunction, Subspace};
use crate::xray::{
    zernike_project, ChiProfile, ChordTable, LineGrid, DEFAULT_CHORD_ORDER, DEFAULT_NALPHA,
    DEFAULT_NBETA,
};

/// How the least favourable direction is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfdMethod {
    Solver,
    /// The location-zero closed form with `g^{(m)}`.
    Closed {
        m: u32,
    },
}

/// A fully resolved experiment.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub example: Example,
    pub family: ModelFamily,
    /// Nuisance space `H`; also the support of the prior.
    pub h_space: Subspace,
    pub alpha: f64,
    pub kappa_or_beta: f64,
    pub bundle: RateBundle,
    pub theta0: f64,
    pub f0: CoefficientFunction,
    pub theta_prior: ThetaPrior,
    pub grid_nodes: usize,
    pub n_list: Vec<f64>,
    pub seed: u64,
    pub replicates: usize,
    pub coverage_n: f64,
    /// Accepted coverage band for the configured replicate count.
    pub coverage_band: (f64, f64),
    pub lfd: LfdMethod,
}

impl Experiment {
    /// Rescaled series prior on `H` for sample size `n`.
    pub fn prior(&self, n: f64) -> GaussianSeriesPrior {
        GaussianSeriesPrior::power_law(self.h_space.clone(), self.alpha, self.bundle.tau_n(n))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    /// `base` resolves relative file references.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::config("<file>", e.to_string()))?;
        let cfg = Fields { ini: &ini };

        let example = match cfg.string("model", "example")?.as_str() {
            "deconvolution" | "deconv" => Example::Deconvolution,
            "xray" | "x-ray" => Example::Xray,
            other => {
                return Err(Error::config(
                    "model.example",
                    format!("expected 'deconvolution' or 'xray', got '{other}'"),
                ))
            }
        };
        let alpha: f64 = cfg.parse("model", "alpha")?;
        let kappa_or_beta: f64 = cfg.parse("model", "kappa_or_beta")?;
        let beta: f64 = cfg.parse_or("model", "beta", 0.0)?;
        let truncation: usize = cfg.parse("model", "truncation")?;
        if truncation == 0 {
            return Err(Error::config("model.truncation", "must be positive"));
        }
        let bundle = rate_bundle_with_beta(example, alpha, kappa_or_beta, beta)?;

        let (family, h_space) = match example {
            Example::Deconvolution => {
                let kernel = ConvolutionKernel::power_law(kappa_or_beta, truncation)
                    .map_err(|e| Error::config("model.kappa_or_beta", e.to_string()))?;
                let h = match cfg.string_or("model", "h_space", "cosine")?.as_str() {
                    "cosine" | "cosine_symmetric" => Basis::cosine(truncation),
                    "zero_location" | "zero_location_fourier" => Basis::zero_location(truncation),
                    "fourier" | "fourier_periodic" => Basis::fourier(truncation),
                    other => {
                        return Err(Error::config(
                            "model.h_space",
                            format!("unknown space '{other}'"),
                        ))
                    }
                };
                (ModelFamily::Convolution(kernel), h.subspace())
            }
            Example::Xray => {
                let grid = LineGrid::new(
                    cfg.parse_or("xray", "nbeta", DEFAULT_NBETA)?,
                    cfg.parse_or("xray", "nalpha", DEFAULT_NALPHA)?,
                )
                .map_err(|e| Error::config("xray.nbeta", e.to_string()))?;
                grid.check()
                    .map_err(|e| Error::config("xray.nalpha", e.to_string()))?;
                let chi = match cfg.string_or("xray", "chi", "smooth")?.as_str() {
                    "smooth" => ChiProfile::Smooth {
                        inner: cfg.parse_or("xray", "chi_inner", 0.5)?,
                        outer: cfg.parse_or("xray", "chi_outer", 0.8)?,
                    },
                    "sharp" => ChiProfile::Sharp {
                        radius: cfg.parse_or("xray", "chi_radius", 0.8)?,
                    },
                    "zero" => ChiProfile::Zero,
                    other => {
                        return Err(Error::config(
                            "xray.chi",
                            format!("unknown profile '{other}'"),
                        ))
                    }
                };
                chi.validate()
                    .map_err(|e| Error::config("xray.chi", e.to_string()))?;
                let order = cfg.parse_or("xray", "chord_order", DEFAULT_CHORD_ORDER)?;
                let table = ChordTable::new(chi, Basis::zernike(truncation), &grid, order)?;
                (
                    ModelFamily::Xray(Arc::new(table)),
                    Basis::zernike(truncation).subspace(),
                )
            }
        };

        let theta0: f64 = cfg.parse("truth", "theta0")?;
        let f0 = match cfg.string("truth", "f0")?.as_str() {
            "trig" => {
                if example != Example::Deconvolution {
                    return Err(Error::config(
                        "truth.f0",
                        "'trig' needs the deconvolution example",
                    ));
                }
                let cos: Vec<f64> = cfg.list_or("truth", "cos")?;
                let sin: Vec<f64> = cfg.list_or("truth", "sin")?;
                CoefficientFunction::from_trig(truncation, &cos, &sin)
                    .map_err(|e| Error::config("truth.cos", e.to_string()))?
            }
            "bump" => {
                if example != Example::Xray {
                    return Err(Error::config("truth.f0", "'bump' needs the xray example"));
                }
                let degree: usize = cfg.parse_or("truth", "f0_degree", 3)?;
                if degree > truncation {
                    return Err(Error::config("truth.f0_degree", "exceeds model.truncation"));
                }
                xray_bump(truncation, degree)?
            }
            "file" => {
                let rel = cfg.string("truth", "f0_file")?;
                let path = base
                    .map(|b| b.join(&rel))
                    .unwrap_or_else(|| rel.clone().into());
                let file = std::fs::File::open(&path).map_err(|e| {
                    Error::config("truth.f0_file", format!("{}: {e}", path.display()))
                })?;
                CoefficientFunction::read_from(file)
                    .map_err(|e| Error::config("truth.f0_file", e.to_string()))?
            }
            other => {
                return Err(Error::config(
                    "truth.f0",
                    format!("unknown truth '{other}'"),
                ))
            }
        };

        let lo: f64 = cfg.parse("theta", "lo")?;
        let hi: f64 = cfg.parse("theta", "hi")?;
        let theta_prior = match cfg.string_or("theta", "prior", "uniform")?.as_str() {
            "uniform" => ThetaPrior::Uniform { lo, hi },
            "normal" => ThetaPrior::TruncatedNormal {
                mean: cfg.parse("theta", "prior_mean")?,
                sd: cfg.parse("theta", "prior_sd")?,
                lo,
                hi,
            },
            other => {
                return Err(Error::config(
                    "theta.prior",
                    format!("unknown prior '{other}'"),
                ))
            }
        };
        theta_prior
            .validate()
            .map_err(|e| Error::config("theta.lo", e.to_string()))?;
        if !(lo..=hi).contains(&theta0) {
            return Err(Error::config(
                "truth.theta0",
                format!("{theta0} lies outside [{lo}, {hi}]"),
            ));
        }
        let grid_nodes: usize = cfg.parse_or("theta", "nodes", DEFAULT_GRID_NODES)?;
        if grid_nodes < 3 {
            return Err(Error::config("theta.nodes", "need at least 3 nodes"));
        }

        let mut n_list: Vec<f64> = cfg.list("run", "n")?;
        if n_list.is_empty() || n_list.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(Error::config(
                "run.n",
                "expected a nonempty list of positive sample sizes",
            ));
        }
        n_list.sort_by(f64::total_cmp);
        let seed: u64 = cfg.parse("run", "seed")?;
        let replicates: usize = cfg.parse_or("run", "replicates", 200)?;
        let coverage_n: f64 =
            cfg.parse_or("run", "coverage_n", *n_list.last().expect("nonempty"))?;
        let coverage_band = (
            cfg.parse_or("run", "coverage_lo", 0.90)?,
            cfg.parse_or("run", "coverage_hi", 0.99)?,
        );
        let lfd = match cfg.string_or("run", "lfd", "solver")?.as_str() {
            "solver" => LfdMethod::Solver,
            "closed" => {
                if h_space.basis() != Basis::zero_location(truncation) {
                    return Err(Error::config(
                        "run.lfd",
                        "the closed form needs h_space = zero_location",
                    ));
                }
                LfdMethod::Closed {
                    m: cfg.parse_or("run", "closed_m", 0)?,
                }
            }
            other => {
                return Err(Error::config(
                    "run.lfd",
                    format!("unknown method '{other}'"),
                ))
            }
        };

        Ok(Experiment {
            example,
            family,
            h_space,
            alpha,
            kappa_or_beta,
            bundle,
            theta0,
            f0,
            theta_prior,
            grid_nodes,
            n_list,
            seed,
            replicates,
            coverage_n,
            coverage_band,
            lfd,
        })
    }
}

/// Zernike projection, kept up to `degree`, of the off-centre bump
/// `(1 - |x - c|^2 / 0.09)_+^3` with `c = (0.15, 0.1)`, supported in `r <= 0.5`.
///
/// A centred bump is nearly radial, which leaves `theta` almost unidentified;
/// the degree cap keeps the truth inside the bulk of the prior.
pub fn xray_bump(k_max: usize, degree: usize) -> Result<CoefficientFunction> {
    let bump = |x: f64, y: f64| {
        let r2 = (x - 0.15).powi(2) + (y - 0.1).powi(2);
        num_complex::Complex64::new((1.0 - r2 / 0.09).max(0.0).powi(3), 0.0)
    };
    let full = zernike_project(bump, k_max, 64, 128)?;
    let labels = full.basis().frequency_labels();
    let coeffs = full
        .coeffs()
        .iter()
        .zip(labels)
        .map(|(c, l)| if l <= degree { *c } else { 0.0 })
        .collect();
    CoefficientFunction::new(full.basis(), coeffs)
}

struct Fields<'a> {
    ini: &'a Ini,
}

impl Fields<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini
            .section(Some(section))
            .and_then(|s| s.get(key))
            .map(str::trim)
            .filter(|v| !v.is_empty())
    }

    fn string(&self, section: &str, key: &str) -> Result<String> {
        self.raw(section, key)
            .map(str::to_string)
            .ok_or_else(|| Error::config(format!("{section}.{key}"), "missing"))
    }

    fn string_or(&self, section: &str, key: &str, default: &str) -> Result<String> {
        Ok(self.raw(section, key).unwrap_or(default).to_string())
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self.string(section, key)?;
        parse_value(&raw).ok_or_else(|| {
            Error::config(format!("{section}.{key}"), format!("cannot parse '{raw}'"))
        })
    }

    fn parse_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(_) => self.parse(section, key),
        }
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>> {
        let raw = self.string(section, key)?;
        raw.split(',')
            .map(|item| {
                parse_value(item.trim()).ok_or_else(|| {
                    Error::config(
                        format!("{section}.{key}"),
                        format!("cannot parse '{}'", item.trim()),
                    )
                })
            })
            .collect()
    }

    fn list_or<T: FromStr>(&self, section: &str, key: &str) -> Result<Vec<T>> {
        match self.raw(section, key) {
            None => Ok(Vec::new()),
            Some(_) => self.list(section, key),
        }
    }
}

/// Parses `T`, also accepting integral floats such as `1e6` for integers.
fn parse_value<T: FromStr>(raw: &str) -> Option<T> {
    raw.parse().ok().or_else(|| {
        let x: f64 = raw.parse().ok()?;
        (x.fract() == 0.0 && x.abs() < 9.0e15)
            .then(|| format!("{}", x as i64).parse().ok())
            .flatten()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MODEL1: &str = "
[model]
example = deconvolution
h_space = cosine
alpha = 1
kappa_or_beta = 3
truncation = 16

[truth]
theta0 = 0.1
f0 = trig
cos = 1, 1

[theta]
lo = -0.3
hi = 0.3
nodes = 801

[run]
n = 1e6, 1e4, 1e5
seed = 7
";

    #[test]
    fn parses_model1() {
        let e = Experiment::parse(MODEL1, None).unwrap();
        assert_eq!(e.n_list, vec![1e4, 1e5, 1e6]);
        assert_eq!(e.h_space.basis(), Basis::cosine(16));
        assert!((e.f0.coeffs()[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(e.grid_nodes, 801);
        assert_eq!(e.lfd, LfdMethod::Solver);
        assert!((e.prior(1e6).tau() - 1e6f64.powf(1.0 / 18.0)).abs() < 1e-12);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MODEL1.replace("alpha = 1", "alpha = one");
        match Experiment::parse(&bad, None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.alpha"),
            other => panic!("{other:?}"),
        }
        let missing = MODEL1.replace("seed = 7", "");
        match Experiment::parse(&missing, None) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "run.seed"),
            other => panic!("{other:?}"),
        }
        let hyp = MODEL1.replace("kappa_or_beta = 3", "kappa_or_beta = 2");
        assert!(matches!(
            Experiment::parse(&hyp, None),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn integer_fields_accept_exponent_notation() {
        assert_eq!(parse_value::<usize>("1e3"), Some(1000));
        assert_eq!(parse_value::<usize>("1.5"), None);
        assert_eq!(parse_value::<u64>("42"), Some(42));
    }

    #[test]
    fn bump_is_concentrated() {
        let f = xray_bump(8, 8).unwrap();
        let inside = f.evaluate_disk(0.15, 0.1).unwrap().re;
        let outside = f.evaluate_disk(-0.9, 0.0).unwrap().re;
        assert!(inside > 0.3 && outside.abs() < 0.1 * inside);
        let low = xray_bump(8, 3).unwrap();
        let labels = low.basis().frequency_labels();
        assert!(low
            .coeffs()
            .iter()
            .zip(labels)
            .all(|(c, l)| l <= 3 || *c == 0.0));
        assert!(low.norm() > 0.0);
    }
}
