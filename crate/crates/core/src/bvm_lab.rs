//! Limiting-normal reference laws, total variation against the grid
//! posterior, per-n experiment reports, and coverage studies.
//!
//! Total variation follows `||P - Q|| = 2 sup_F |P(F) - Q(F)| = int |p - q|`,
//! so it ranges over `[0, 2]`.

use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bayes::{
    rng_for, simulate_with, theta_posterior_adaptive, theta_posteriors_on_grid, uniform_grid,
    Observation, ThetaPosterior,
};
use crate::config::{Experiment, LfdMethod};
use crate::efficiency::{
    efficient_info, lfd_model2_closed, lfd_solve, recentering_delta, scenario_check, LfdSolution,
};
use crate::error::{Error, Result, StageExt};
use crate::model::ForwardModel;
use crate::quad::trapezoid;
use crate::spectral::CoefficientFunction;

/// Largest reference mass allowed outside the grid.
pub const SUPPORT_TOL: f64 = 1e-6;
pub const CREDIBLE_LEVEL: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BvMReference {
    pub center: f64,
    pub variance: f64,
}

impl BvMReference {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }

    fn normal(&self) -> Normal {
        Normal::new(self.center, self.sd()).expect("positive variance")
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.center) / self.sd();
        (-0.5 * z * z).exp() / (self.sd() * (2.0 * std::f64::consts::PI).sqrt())
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.normal().cdf(x)
    }

    pub fn interval(&self, level: f64) -> (f64, f64) {
        let n = self.normal();
        let a = 0.5 * (1.0 - level);
        (n.inverse_cdf(a), n.inverse_cdf(1.0 - a))
    }
}

/// `N(theta0 + delta / sqrt(n), 1 / (n info))`.
pub fn bvm_reference(theta0: f64, delta: f64, info: f64, n: f64) -> Result<BvMReference> {
    if !(info > 0.0) {
        return Err(Error::NonPositiveInfo(info));
    }
    if !(n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "n must be positive, got {n}"
        )));
    }
    Ok(BvMReference {
        center: theta0 + delta / n.sqrt(),
        variance: 1.0 / (n * info),
    })
}

/// `int |p - q|` by trapezoid quadrature on the posterior grid plus the
/// reference mass off the grid.
pub fn tv_distance(post: &ThetaPosterior, reference: &BvMReference) -> Result<f64> {
    let (a, b) = (post.grid[0], post.grid[post.grid.len() - 1]);
    let outside = reference.cdf(a) + (1.0 - reference.cdf(b));
    if outside > SUPPORT_TOL {
        return Err(Error::ReferenceSupport { mass: outside });
    }
    let diff: Vec<f64> = post
        .grid
        .iter()
        .zip(&post.density)
        .map(|(&t, &p)| (p - reference.density(t)).abs())
        .collect();
    Ok((trapezoid(&post.grid, &diff) + outside).clamp(0.0, 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvMReport {
    pub n: f64,
    pub tv: f64,
    pub post_mean: f64,
    pub post_var: f64,
    pub delta: f64,
    pub info: f64,
    pub ci: (f64, f64),
    pub ref_ci: (f64, f64),
    pub seconds: f64,
}

pub const REPORT_COLUMNS: [&str; 11] = [
    "n",
    "tv",
    "post_mean",
    "post_var",
    "delta",
    "info",
    "ci_lo",
    "ci_hi",
    "ref_lo",
    "ref_hi",
    "seconds",
];

pub const TV_NOTE: &str = "# tv = int |p - q| = 2 sup_F |P(F) - Q(F)|, range [0, 2]";

pub fn write_reports<W: Write>(mut out: W, reports: &[BvMReport]) -> Result<()> {
    writeln!(out, "{TV_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in reports {
        w.write_record(
            [
                r.n,
                r.tv,
                r.post_mean,
                r.post_var,
                r.delta,
                r.info,
                r.ci.0,
                r.ci.1,
                r.ref_ci.0,
                r.ref_ci.1,
                r.seconds,
            ]
            .map(|v| format!("{v:e}")),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_posterior<W: Write>(out: W, post: &ThetaPosterior) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta", "log_weight", "density"])?;
    for ((t, l), d) in post.grid.iter().zip(&post.log_weights).zip(&post.density) {
        w.write_record([format!("{t:e}"), format!("{l:e}"), format!("{d:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// The LFD at the truth, the model there, and the information used by the
/// reference law.
#[derive(Clone, Debug)]
pub struct Efficiency {
    pub model: ForwardModel,
    pub gamma: CoefficientFunction,
    pub info: f64,
    pub solution: Option<LfdSolution>,
}

pub fn efficiency_at_truth(exp: &Experiment) -> Result<Efficiency> {
    let model = exp.family.at(exp.theta0);
    let f0 = exp.f0.to_ambient().retruncate(model.basis().truncation())?;
    match exp.lfd {
        LfdMethod::Solver => {
            let sol = lfd_solve(&model, &f0, &exp.h_space)?;
            Ok(Efficiency {
                model,
                gamma: sol.gamma.clone(),
                info: sol.info,
                solution: Some(sol),
            })
        }
        LfdMethod::Closed { m } => {
            let crate::model::ModelFamily::Convolution(kernel) = &exp.family else {
                return Err(Error::InvalidArgument(
                    "the closed-form direction needs a convolution model".into(),
                ));
            };
            let gamma = lfd_model2_closed(&f0, m, kernel)?;
            let (info, _) = efficient_info(&model, &f0, &gamma)?;
            Ok(Efficiency {
                model,
                gamma,
                info,
                solution: None,
            })
        }
    }
}

/// One replicate at one `n`.
pub fn report_for(
    exp: &Experiment,
    eff: &Efficiency,
    obs: &Observation,
) -> Result<(BvMReport, ThetaPosterior)> {
    let start = Instant::now();
    let prior = exp.prior(obs.n);
    let post = theta_posterior_adaptive(obs, &prior, &exp.family, &exp.theta_prior, exp.grid_nodes)
        .stage("posterior")?;
    let delta = recentering_delta(&eff.model, &obs.f0, &eff.gamma, eff.info, &obs.noise)
        .stage("recentering")?;
    let reference = bvm_reference(exp.theta0, delta, eff.info, obs.n).stage("reference")?;
    let tv = tv_distance(&post, &reference).stage("tv")?;
    let report = BvMReport {
        n: obs.n,
        tv,
        post_mean: post.mean,
        post_var: post.variance,
        delta,
        info: eff.info,
        ci: post.credible_interval(CREDIBLE_LEVEL),
        ref_ci: reference.interval(CREDIBLE_LEVEL),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, post))
}

/// Seed stream of an experiment run. Every `n` of the ladder reuses the same
/// white-noise draw, so reports differ only through `n`.
const RUN_STREAM: u64 = 0;

/// Seed stream of the `r`-th coverage replicate.
fn coverage_stream(r: usize) -> u64 {
    (1 << 32) + r as u64
}

/// Seed stream of the `r`-th ladder replicate.
fn ladder_stream(r: usize) -> u64 {
    (1 << 33) + r as u64
}

/// Half-width of the ladder windows in reference standard deviations.
pub const LADDER_WINDOW_SD: f64 = 12.0;

/// TV distances over the `n`-ladder for independent noise realizations.
#[derive(Clone, Debug)]
pub struct TvLadder {
    pub n: Vec<f64>,
    /// `tv[r][j]`: replicate `r` at `n[j]`.
    pub tv: Vec<Vec<f64>>,
    /// `n Var(theta | X) info`, laid out like `tv`; tends to 1.
    pub scaled_var: Vec<Vec<f64>>,
}

impl TvLadder {
    /// Median TV over replicates at each `n`.
    pub fn median(&self) -> Vec<f64> {
        column_medians(&self.tv)
    }

    pub fn median_scaled_var(&self) -> Vec<f64> {
        column_medians(&self.scaled_var)
    }

    pub fn median_decreasing(&self) -> bool {
        self.median().windows(2).all(|w| w[1] < w[0])
    }

    /// Fraction of replicates whose own ladder is strictly decreasing.
    pub fn monotone_fraction(&self) -> f64 {
        let hits = self
            .tv
            .iter()
            .filter(|row| row.windows(2).all(|w| w[1] < w[0]))
            .count();
        hits as f64 / self.tv.len().max(1) as f64
    }
}

fn column_medians(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            let mut col: Vec<f64> = rows.iter().map(|row| row[j]).collect();
            col.sort_by(f64::total_cmp);
            let m = col.len();
            if m % 2 == 1 {
                col[m / 2]
            } else {
                0.5 * (col[m / 2 - 1] + col[m / 2])
            }
        })
        .collect()
}

/// TV to the reference for `replicates` noise draws, each shared across the
/// ladder. Every `n` uses one grid of `nodes` points spanning
/// `LADDER_WINDOW_SD` reference sds around `theta0`, clipped to `Theta`.
pub fn tv_ladder(exp: &Experiment, replicates: usize, nodes: usize) -> Result<TvLadder> {
    if replicates == 0 {
        return Err(Error::InvalidArgument(
            "tv ladder needs at least one replicate".into(),
        ));
    }
    let eff = efficiency_at_truth(exp).stage("lfd")?;
    let (lo, hi) = exp.theta_prior.support();
    let mut columns = Vec::with_capacity(exp.n_list.len());
    for &n in &exp.n_list {
        let observations = (0..replicates)
            .map(|r| {
                simulate_with(
                    exp.theta0,
                    &exp.f0,
                    &exp.family,
                    n,
                    &mut rng_for(exp.seed, ladder_stream(r)),
                )
            })
            .collect::<Result<Vec<_>>>()
            .stage("simulate")?;
        let half = LADDER_WINDOW_SD / (n * eff.info).sqrt();
        let grid = uniform_grid(
            (exp.theta0 - half).max(lo),
            (exp.theta0 + half).min(hi),
            nodes,
        );
        let priors = vec![exp.prior(n); replicates];
        let posts =
            theta_posteriors_on_grid(&exp.family, &observations, &priors, &exp.theta_prior, &grid)
                .stage("posterior")?;
        let tv = observations
            .iter()
            .zip(&posts)
            .map(|(obs, post)| {
                let delta =
                    recentering_delta(&eff.model, &obs.f0, &eff.gamma, eff.info, &obs.noise)
                        .stage("recentering")?;
                let reference = bvm_reference(exp.theta0, delta, eff.info, n).stage("reference")?;
                Ok((
                    tv_distance(post, &reference).stage("tv")?,
                    n * post.variance * eff.info,
                ))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        columns.push(tv);
    }
    let pick = |f: fn(&(f64, f64)) -> f64| {
        (0..replicates)
            .map(|r| columns.iter().map(|c| f(&c[r])).collect())
            .collect()
    };
    Ok(TvLadder {
        n: exp.n_list.clone(),
        tv: pick(|p| p.0),
        scaled_var: pick(|p| p.1),
    })
}

/// simulate, grid posterior, LFD, recentering, reference, TV for every `n`.
pub fn run_experiment(exp: &Experiment) -> Result<Vec<BvMReport>> {
    Ok(run_experiment_with_posteriors(exp)?
        .into_iter()
        .map(|(r, _)| r)
        .collect())
}

pub fn run_experiment_with_posteriors(
    exp: &Experiment,
) -> Result<Vec<(BvMReport, ThetaPosterior)>> {
    let scenario = scenario_check(
        &exp.bundle,
        exp.family.norm_constant_in_theta(),
        gamma_in_rkhs(exp),
    )
    .stage("scenario")?;
    if !scenario.pass {
        return Err(Error::Stage {
            stage: "scenario",
            source: Box::new(Error::Hypothesis(format!(
                "scenario ({}) limit conditions fail",
                scenario.scenario
            ))),
        });
    }
    let eff = efficiency_at_truth(exp).stage("lfd")?;
    let mut out = Vec::with_capacity(exp.n_list.len());
    for &n in &exp.n_list {
        let mut rng = rng_for(exp.seed, RUN_STREAM);
        let obs = simulate_with(exp.theta0, &exp.f0, &exp.family, n, &mut rng).stage("simulate")?;
        out.push(report_for(exp, &eff, &obs)?);
    }
    out.sort_by(|a, b| a.0.n.total_cmp(&b.0.n));
    Ok(out)
}

/// Whether the LFD lies in the (finite-dimensional) RKHS. On a truncation
/// every element of `H` does, except for the location-zero model, where the
/// untruncated direction carries the sawtooth and has infinite norm.
pub fn gamma_in_rkhs(exp: &Experiment) -> bool {
    exp.h_space.basis().kind() != crate::spectral::BasisKind::ZeroLocationFourier
}

#[derive(Clone, Debug)]
pub struct CoverageReport {
    pub n: f64,
    pub replicates: usize,
    pub info: f64,
    pub coverage: f64,
    /// `sqrt(n info) (mean - theta0)`.
    pub z: Vec<f64>,
    /// `sqrt(n info) (mean - theta0 - delta / sqrt(n))`.
    pub recentred: Vec<f64>,
    pub z_variance: f64,
    /// Kolmogorov-Smirnov distance of `z` to the standard normal.
    pub ks: f64,
    pub band: (f64, f64),
}

impl CoverageReport {
    pub fn coverage_ok(&self) -> bool {
        self.band.0 <= self.coverage && self.coverage <= self.band.1
    }
}

pub fn sample_variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn ks_standard_normal(x: &[f64]) -> f64 {
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = n.cdf(v);
            (c - i as f64 / m).abs().max(((i + 1) as f64 / m - c).abs())
        })
        .fold(0.0, f64::max)
}

/// `R` replicates at `exp.coverage_n`; replicates run in parallel.
pub fn coverage_study(exp: &Experiment, replicates: usize) -> Result<CoverageReport> {
    if replicates < 100 {
        return Err(Error::InvalidArgument(format!(
            "coverage needs R >= 100, got {replicates}"
        )));
    }
    let eff = efficiency_at_truth(exp).stage("lfd")?;
    let n = exp.coverage_n;
    let rows = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(exp.seed, coverage_stream(r));
            let obs =
                simulate_with(exp.theta0, &exp.f0, &exp.family, n, &mut rng).stage("simulate")?;
            let (rep, _) = report_for(exp, &eff, &obs)?;
            Ok((
                rep.ci.0 <= exp.theta0 && exp.theta0 <= rep.ci.1,
                rep.post_mean,
                rep.delta,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let scale = (n * eff.info).sqrt();
    let z: Vec<f64> = rows.iter().map(|r| scale * (r.1 - exp.theta0)).collect();
    let recentred: Vec<f64> = rows
        .iter()
        .map(|r| scale * (r.1 - exp.theta0 - r.2 / n.sqrt()))
        .collect();
    Ok(CoverageReport {
        n,
        replicates,
        info: eff.info,
        coverage: rows.iter().filter(|r| r.0).count() as f64 / replicates as f64,
        z_variance: sample_variance(&z),
        ks: ks_standard_normal(&z),
        z,
        recentred,
        band: exp.coverage_band,
    })
}

pub fn write_coverage<W: Write>(mut out: W, c: &CoverageReport) -> Result<()> {
    writeln!(
        out,
        "# z = sqrt(n info) (post_mean - theta0); recentred subtracts delta / sqrt(n)"
    )?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "replicates",
        "info",
        "coverage",
        "band_lo",
        "band_hi",
        "z_variance",
        "ks",
    ])?;
    w.write_record(
        [
            c.n,
            c.replicates as f64,
            c.info,
            c.coverage,
            c.band.0,
            c.band.1,
            c.z_variance,
            c.ks,
        ]
        .map(|v| format!("{v:e}")),
    )?;
    w.flush()?;
    Ok(())
}

pub fn write_z_scores<W: Write>(out: W, c: &CoverageReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replicate", "z", "recentred"])?;
    for (i, (z, r)) in c.z.iter().zip(&c.recentred).enumerate() {
        w.write_record([i.to_string(), format!("{z:e}"), format!("{r:e}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Binomial band holding the number of covering intervals with probability
/// at least `confidence`, as fractions of `r`.
pub fn binomial_band(r: usize, p: f64, confidence: f64) -> (f64, f64) {
    use statrs::distribution::{Binomial, DiscreteCDF};
    let b = Binomial::new(p, r as u64).expect("valid binomial");
    let a = 0.5 * (1.0 - confidence);
    (
        b.inverse_cdf(a) as f64 / r as f64,
        b.inverse_cdf(1.0 - a) as f64 / r as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::uniform_grid;
    use statrs::distribution::Normal;

    fn posterior_from(grid: Vec<f64>, pdf: impl Fn(f64) -> f64) -> ThetaPosterior {
        let lw = grid.iter().map(|&t| pdf(t).ln()).collect();
        ThetaPosterior::from_log_weights(grid, lw).unwrap()
    }

    #[test]
    fn tv_examples() {
        let r = BvMReference {
            center: 0.0,
            variance: 1.0,
        };
        let grid = uniform_grid(-10.0, 10.0, 20_001);
        let same = posterior_from(grid.clone(), |t| r.density(t));
        assert!(tv_distance(&same, &r).unwrap() < 1e-9);

        let shifted = posterior_from(grid.clone(), |t| r.density(t - 0.1));
        let exact = 2.0 * (2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.05) - 1.0);
        assert!((tv_distance(&shifted, &r).unwrap() - exact).abs() < 1e-6);

        let far = posterior_from(grid, |t| (-(t - 9.0).powi(2) / 0.02).exp());
        assert!((tv_distance(&far, &r).unwrap() - 2.0).abs() < 1e-9);

        let narrow = posterior_from(uniform_grid(-1.0, 1.0, 101), |t| r.density(t));
        assert!(matches!(
            tv_distance(&narrow, &r),
            Err(Error::ReferenceSupport { .. })
        ));
    }

    #[test]
    fn reference_examples() {
        let r = bvm_reference(0.1, 0.0, 12.0, 1e6).unwrap();
        assert_eq!(r.center, 0.1);
        assert!((r.sd() - 2.89e-4).abs() < 1e-6);
        let q = bvm_reference(0.1, 0.5, 12.0, 4e6).unwrap();
        assert!((q.sd() / r.sd() - 0.5).abs() < 1e-14);
        assert!(matches!(
            bvm_reference(0.1, 0.0, 0.0, 1e6),
            Err(Error::NonPositiveInfo(_))
        ));
    }

    #[test]
    fn band_at_two_hundred() {
        let (lo, hi) = binomial_band(200, 0.95, 0.99);
        assert!(lo >= 0.90 && hi <= 0.99, "{lo} {hi}");
    }

    #[test]
    fn ks_detects_shift() {
        let n = Normal::new(0.0, 1.0).unwrap();
        let q: Vec<f64> = (1..1000)
            .map(|i| n.inverse_cdf(i as f64 / 1000.0))
            .collect();
        assert!(ks_standard_normal(&q) < 0.002);
        let s: Vec<f64> = q.iter().map(|v| v + 0.5).collect();
        assert!(ks_standard_normal(&s) > 0.15);
    }
}
