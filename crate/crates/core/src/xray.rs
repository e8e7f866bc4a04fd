//! Attenuated X-ray transforms on the Euclidean unit disk.
//!
//! Lines are parametrized by the entry angle `beta` and the angle `alpha`
//! between the direction and the inner normal. Data live in
//! `L^2(cos(alpha) d alpha d beta)`; assembled matrices carry the square
//! roots of the grid weights so that the Euclidean structure of the rows
//! approximates that space.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::quad::{adaptive_gauss, gauss_legendre};
use crate::spectral::{
    write_table, zernike_values, Basis, BasisKind, CoefficientFunction, TableHeader,
};

pub const DEFAULT_NBETA: usize = 64;
pub const DEFAULT_NALPHA: usize = 32;
pub const DEFAULT_CHORD_ORDER: usize = 32;

const CHORD_SLACK: f64 = 1e-12;
const A_CHI_TOL: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryLine {
    pub beta: f64,
    pub alpha: f64,
}

impl BoundaryLine {
    pub fn new(beta: f64, alpha: f64) -> Result<Self> {
        if !(alpha.abs() < FRAC_PI_2) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {alpha} outside (-pi/2, pi/2)"
            )));
        }
        Ok(BoundaryLine { beta, alpha })
    }

    /// Exit time (chord length).
    pub fn tau(&self) -> f64 {
        2.0 * self.alpha.cos()
    }

    pub fn entry(&self) -> (f64, f64) {
        (self.beta.cos(), self.beta.sin())
    }

    pub fn direction(&self) -> (f64, f64) {
        let a = self.beta + PI + self.alpha;
        (a.cos(), a.sin())
    }

    /// Distance of the line from the origin.
    pub fn impact(&self) -> f64 {
        self.alpha.sin().abs()
    }

    fn point(&self, t: f64) -> (f64, f64) {
        let (x, y) = self.entry();
        let (vx, vy) = self.direction();
        (x + t * vx, y + t * vy)
    }
}

pub fn chord_point(line: &BoundaryLine, t: f64) -> Result<(f64, f64)> {
    let tau = line.tau();
    if !(t >= -CHORD_SLACK && t <= tau + CHORD_SLACK) {
        return Err(Error::ChordParameter { t, tau });
    }
    Ok(line.point(t.clamp(0.0, tau)))
}

/// Radial cutoff `chi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChiProfile {
    /// 1 on `r <= inner`, order-3 smoothstep down to 0 at `r = outer`.
    Smooth {
        inner: f64,
        outer: f64,
    },
    /// Indicator of `r <= radius`.
    Sharp {
        radius: f64,
    },
    Zero,
}

impl Default for ChiProfile {
    fn default() -> Self {
        ChiProfile::Smooth {
            inner: 0.5,
            outer: 0.8,
        }
    }
}

impl ChiProfile {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            ChiProfile::Smooth { inner, outer } => {
                if r <= inner {
                    1.0
                } else if r >= outer {
                    0.0
                } else {
                    let x = (r - inner) / (outer - inner);
                    let x4 = x.powi(4);
                    1.0 - x4 * (35.0 + x * (-84.0 + x * (70.0 - 20.0 * x)))
                }
            }
            ChiProfile::Sharp { radius } => {
                if r <= radius {
                    1.0
                } else {
                    0.0
                }
            }
            ChiProfile::Zero => 0.0,
        }
    }

    /// Radii at which `chi` is not smooth.
    fn break_radii(&self) -> Vec<f64> {
        match *self {
            ChiProfile::Smooth { inner, outer } => vec![inner, outer],
            ChiProfile::Sharp { radius } => vec![radius],
            ChiProfile::Zero => vec![],
        }
    }

    pub fn support_radius(&self) -> f64 {
        match *self {
            ChiProfile::Smooth { outer, .. } => outer,
            ChiProfile::Sharp { radius } => radius,
            ChiProfile::Zero => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ChiProfile::Smooth { inner, outer }
                if !(0.0 < inner && inner < outer && outer < 1.0) =>
            {
                Err(Error::InvalidArgument(format!(
                    "chi profile needs 0 < inner < outer < 1, got {inner}, {outer}"
                )))
            }
            ChiProfile::Sharp { radius } if !(0.0 < radius && radius < 1.0) => Err(
                Error::InvalidArgument(format!("chi radius must lie in (0, 1), got {radius}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attenuation {
    pub theta: f64,
    pub chi: ChiProfile,
}

impl Attenuation {
    pub fn new(theta: f64, chi: ChiProfile) -> Self {
        Attenuation { theta, chi }
    }
}

/// Chord parameters at which the line crosses a break radius, sorted.
fn chord_breaks(chi: &ChiProfile, line: &BoundaryLine) -> Vec<f64> {
    let (c, p) = (line.alpha.cos(), line.impact());
    let mut out = Vec::new();
    for r in chi.break_radii() {
        if r > p {
            let h = (r * r - p * p).sqrt();
            out.push(c - h);
            out.push(c + h);
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

fn chi_integral(chi: &ChiProfile, line: &BoundaryLine, breaks: &[f64], a: f64, b: f64) -> f64 {
    let (c, p2) = (line.alpha.cos(), line.impact().powi(2));
    let integrand = |s: f64| chi.value(((s - c).powi(2) + p2).sqrt());
    let mut acc = 0.0;
    let mut lo = a;
    for &bp in breaks.iter().filter(|&&bp| bp > a && bp < b) {
        acc += adaptive_gauss(&integrand, lo, bp, A_CHI_TOL);
        lo = bp;
    }
    acc + adaptive_gauss(&integrand, lo, b, A_CHI_TOL)
}

/// `A_chi` along the chord at the sorted parameters `ts`.
pub fn a_chi_cumulative(chi: &ChiProfile, line: &BoundaryLine, ts: &[f64]) -> Vec<f64> {
    if matches!(chi, ChiProfile::Zero) || line.impact() >= chi.support_radius() {
        return vec![0.0; ts.len()];
    }
    let breaks = chord_breaks(chi, line);
    let mut out = Vec::with_capacity(ts.len());
    let (mut prev, mut acc) = (0.0, 0.0);
    for &t in ts {
        acc += chi_integral(chi, line, &breaks, prev, t);
        prev = t;
        out.push(acc);
    }
    out
}

pub fn a_chi(att: &Attenuation, line: &BoundaryLine, t: f64) -> Result<f64> {
    let tau = line.tau();
    if !(t >= -CHORD_SLACK && t <= tau + CHORD_SLACK) {
        return Err(Error::ChordParameter { t, tau });
    }
    Ok(a_chi_cumulative(&att.chi, line, &[t.clamp(0.0, tau)])[0])
}

/// Tensor grid: uniform in `beta`, Gauss-Legendre in `alpha`, weights
/// including `cos(alpha)`. Lines are stored `beta`-major.
#[derive(Clone, Debug)]
pub struct LineGrid {
    nbeta: usize,
    nalpha: usize,
    lines: Vec<BoundaryLine>,
    weights: Vec<f64>,
}

impl LineGrid {
    pub fn new(nbeta: usize, nalpha: usize) -> Result<Self> {
        if nbeta < 1 || nalpha < 2 {
            return Err(Error::InvalidArgument(format!(
                "line grid needs nbeta >= 1 and nalpha >= 2, got {nbeta} x {nalpha}"
            )));
        }
        let alphas = gauss_legendre(nalpha, -FRAC_PI_2, FRAC_PI_2);
        let db = 2.0 * PI / nbeta as f64;
        let mut lines = Vec::with_capacity(nbeta * nalpha);
        let mut weights = Vec::with_capacity(nbeta * nalpha);
        for i in 0..nbeta {
            let beta = db * i as f64;
            for &(alpha, w) in &alphas {
                lines.push(BoundaryLine { beta, alpha });
                weights.push(db * w * alpha.cos());
            }
        }
        Ok(LineGrid {
            nbeta,
            nalpha,
            lines,
            weights,
        })
    }

    pub fn nbeta(&self) -> usize {
        self.nbeta
    }

    pub fn nalpha(&self) -> usize {
        self.nalpha
    }

    pub fn lines(&self) -> &[BoundaryLine] {
        &self.lines
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Measure of the influx boundary under `cos(alpha) d alpha d beta`.
    pub const EXACT_MEASURE: f64 = 4.0 * PI;

    pub fn check(&self) -> Result<()> {
        let s = self.weight_sum();
        if ((s - Self::EXACT_MEASURE) / Self::EXACT_MEASURE).abs() > 0.01 {
            return Err(Error::CoarseLineGrid {
                weight_sum: s,
                exact: Self::EXACT_MEASURE,
            });
        }
        Ok(())
    }

    /// `L^2` inner product `sum_l w_l a_l conj(b_l)`.
    pub fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| x * y.conj() * w)
            .sum()
    }
}

/// Gauss nodes along one chord with the accumulated attenuation there.
struct ChordNodes {
    points: Vec<(f64, f64)>,
    weights: Vec<f64>,
    achi: Vec<f64>,
}

fn chord_nodes(chi: &ChiProfile, line: &BoundaryLine, rule: &[(f64, f64)]) -> ChordNodes {
    let tau = line.tau();
    let ts: Vec<f64> = rule.iter().map(|&(x, _)| 0.5 * tau * (1.0 + x)).collect();
    ChordNodes {
        points: ts.iter().map(|&t| line.point(t)).collect(),
        weights: rule.iter().map(|&(_, w)| 0.5 * tau * w).collect(),
        achi: a_chi_cumulative(chi, line, &ts),
    }
}

fn zernike_input(f: &CoefficientFunction) -> Result<Vec<Complex64>> {
    if f.basis().kind() != BasisKind::ZernikeDisk {
        return Err(Error::InvalidArgument(format!(
            "X-ray operators need a Zernike basis, got {}",
            f.basis()
        )));
    }
    f.complex_coeffs()
}

fn line_transform(
    att: &Attenuation,
    f: &CoefficientFunction,
    grid: &LineGrid,
    order: u32,
) -> Result<Vec<Complex64>> {
    let c = zernike_input(f)?;
    let k_max = f.basis().truncation();
    let rule = gauss_legendre(DEFAULT_CHORD_ORDER, -1.0, 1.0);
    grid.lines()
        .par_iter()
        .map(|line| {
            let nodes = chord_nodes(&att.chi, line, &rule);
            let mut acc = Complex64::new(0.0, 0.0);
            for ((&(x, y), &w), &a) in nodes.points.iter().zip(&nodes.weights).zip(&nodes.achi) {
                let z = zernike_values(k_max, x, y)?;
                let fv: Complex64 = c.iter().zip(&z).map(|(a, b)| a * b).sum();
                let phase = Complex64::from_polar(1.0, -att.theta * a);
                acc += w * fv * phase * (Complex64::new(0.0, -a)).powu(order);
            }
            Ok(acc)
        })
        .collect()
}

/// Classical transform `int_0^tau f(x + t v) dt` per line.
#[allow(non_snake_case)]
pub fn apply_K0(f: &CoefficientFunction, grid: &LineGrid) -> Result<Vec<Complex64>> {
    line_transform(&Attenuation::new(0.0, ChiProfile::Zero), f, grid, 0)
}

#[allow(non_snake_case)]
pub fn apply_Ktheta(
    att: &Attenuation,
    f: &CoefficientFunction,
    grid: &LineGrid,
) -> Result<Vec<Complex64>> {
    line_transform(att, f, grid, 0)
}

#[allow(non_snake_case)]
pub fn apply_Ktheta_dot(
    att: &Attenuation,
    f: &CoefficientFunction,
    grid: &LineGrid,
) -> Result<Vec<Complex64>> {
    line_transform(att, f, grid, 1)
}

/// Per-line, per-node quantities independent of `theta`: weighted Zernike
/// values `sqrt(w_l) omega_q Z_j(x_q)` and `A_chi(x_q)`.
#[derive(Clone, Debug)]
pub struct ChordTable {
    chi: ChiProfile,
    k_max: usize,
    nbeta: usize,
    nalpha: usize,
    nodes: usize,
    dim: usize,
    sqrt_w: Vec<f64>,
    weighted_zernike: Vec<Complex64>,
    achi: Vec<f64>,
}

impl ChordTable {
    pub fn new(chi: ChiProfile, basis: Basis, grid: &LineGrid, chord_order: usize) -> Result<Self> {
        if basis.kind() != BasisKind::ZernikeDisk {
            return Err(Error::InvalidArgument(format!(
                "X-ray matrices need a Zernike basis, got {basis}"
            )));
        }
        grid.check()?;
        chi.validate()?;
        let k_max = basis.truncation();
        let dim = basis.dim() / 2;
        let rule = gauss_legendre(chord_order, -1.0, 1.0);
        let per_line: Vec<(Vec<Complex64>, Vec<f64>)> = grid
            .lines()
            .par_iter()
            .zip(grid.weights().par_iter())
            .map(|(line, &w)| {
                let nodes = chord_nodes(&chi, line, &rule);
                let sw = w.sqrt();
                let mut zs = Vec::with_capacity(nodes.points.len() * dim);
                for (&(x, y), &om) in nodes.points.iter().zip(&nodes.weights) {
                    let z = zernike_values(k_max, x, y)?;
                    zs.extend(z.into_iter().map(|v| v * (sw * om)));
                }
                Ok((zs, nodes.achi))
            })
            .collect::<Result<_>>()?;
        let mut weighted_zernike = Vec::with_capacity(grid.len() * chord_order * dim);
        let mut achi = Vec::with_capacity(grid.len() * chord_order);
        for (z, a) in per_line {
            weighted_zernike.extend(z);
            achi.extend(a);
        }
        Ok(ChordTable {
            chi,
            k_max,
            nbeta: grid.nbeta(),
            nalpha: grid.nalpha(),
            nodes: chord_order,
            dim,
            sqrt_w: grid.weights().iter().map(|w| w.sqrt()).collect(),
            weighted_zernike,
            achi,
        })
    }

    pub fn chi(&self) -> ChiProfile {
        self.chi
    }

    pub fn basis(&self) -> Basis {
        Basis::zernike(self.k_max)
    }

    pub fn n_lines(&self) -> usize {
        self.sqrt_w.len()
    }

    /// Complex matrix of the `order`-th theta-derivative of `K_theta`
    /// (rows: lines, columns: Zernike modes).
    pub fn matrix(&self, theta: f64, order: u32) -> DMatrix<Complex64> {
        let (l, d, q) = (self.n_lines(), self.dim, self.nodes);
        let rows: Vec<Vec<Complex64>> = (0..l)
            .into_par_iter()
            .map(|li| {
                let mut row = vec![Complex64::new(0.0, 0.0); d];
                for qi in 0..q {
                    let a = self.achi[li * q + qi];
                    let factor = Complex64::from_polar(1.0, -theta * a)
                        * Complex64::new(0.0, -a).powu(order);
                    let z = &self.weighted_zernike[(li * q + qi) * d..(li * q + qi + 1) * d];
                    for (r, zv) in row.iter_mut().zip(z) {
                        *r += factor * zv;
                    }
                }
                row
            })
            .collect();
        DMatrix::from_fn(l, d, |i, j| rows[i][j])
    }

    /// Frobenius norm of the entrywise bound `sum_q |z| A_chi^2` on the
    /// second theta-derivative; dominates its operator norm for every theta.
    pub fn second_derivative_bound(&self) -> f64 {
        let (d, q) = (self.dim, self.nodes);
        let mut total = 0.0;
        for li in 0..self.n_lines() {
            let mut row = vec![0.0; d];
            for qi in 0..q {
                let a2 = self.achi[li * q + qi].powi(2);
                let z = &self.weighted_zernike[(li * q + qi) * d..(li * q + qi + 1) * d];
                for (r, zv) in row.iter_mut().zip(z) {
                    *r += a2 * zv.norm();
                }
            }
            total += row.iter().map(|v| v * v).sum::<f64>();
        }
        total.sqrt()
    }

    pub fn assemble(&self, theta: f64) -> XrayMatrix {
        XrayMatrix {
            theta,
            k_max: self.k_max,
            nbeta: self.nbeta,
            nalpha: self.nalpha,
            a: self.matrix(theta, 0),
            sqrt_w: self.sqrt_w.clone(),
        }
    }
}

/// `K_theta` on the Zernike basis with rows scaled by `sqrt(w_l)`.
#[derive(Clone, Debug)]
pub struct XrayMatrix {
    pub theta: f64,
    pub k_max: usize,
    pub nbeta: usize,
    pub nalpha: usize,
    pub a: DMatrix<Complex64>,
    sqrt_w: Vec<f64>,
}

impl XrayMatrix {
    /// Line values (unweighted) of `K_theta f`.
    pub fn apply(&self, f: &CoefficientFunction) -> Result<Vec<Complex64>> {
        let c = zernike_input(f)?;
        if c.len() != self.a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.a.ncols(),
                got: c.len(),
            });
        }
        let v = &self.a * DVector::from_vec(c);
        Ok(v.iter().zip(&self.sqrt_w).map(|(x, s)| x / s).collect())
    }

    pub fn header(&self) -> TableHeader {
        TableHeader::new([
            ("theta", self.theta.to_string()),
            ("kmax", self.k_max.to_string()),
            ("nbeta", self.nbeta.to_string()),
            ("nalpha", self.nalpha.to_string()),
        ])
    }

    /// Row-major entries, `index = line * D + mode`.
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let d = self.a.ncols();
        let rows: Vec<_> = (0..self.a.nrows())
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (i * d + j, self.a[(i, j)].re, self.a[(i, j)].im))
            .collect();
        write_table(out, &self.header(), &rows)
    }
}

pub fn assemble_matrix(att: &Attenuation, basis: Basis, grid: &LineGrid) -> Result<XrayMatrix> {
    Ok(ChordTable::new(att.chi, basis, grid, DEFAULT_CHORD_ORDER)?.assemble(att.theta))
}

/// Discrete adjoint: `A^H (sqrt(w) h)`, so that
/// `<K f, h>_grid = <f, backproject(h)>`.
pub fn backproject(m: &XrayMatrix, h: &[Complex64]) -> Result<CoefficientFunction> {
    if h.len() != m.a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.a.nrows(),
            got: h.len(),
        });
    }
    let hv = DVector::from_iterator(h.len(), h.iter().zip(&m.sqrt_w).map(|(x, s)| x * s));
    let c = m.a.adjoint() * hv;
    CoefficientFunction::from_complex(Basis::zernike(m.k_max), c.as_slice())
}

/// Sinogram table with the matrix header.
pub fn write_sinogram<W: Write>(out: W, m: &XrayMatrix, values: &[Complex64]) -> Result<()> {
    let rows: Vec<_> = values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.re, v.im))
        .collect();
    write_table(out, &m.header(), &rows)
}

/// Real form of a complex matrix: entry `p + iq` becomes `[[p, -q], [q, p]]`,
/// matching the `(re, im)` interleaving of coefficient vectors.
pub fn realify(a: &DMatrix<Complex64>) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(2 * a.nrows(), 2 * a.ncols());
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let z = a[(i, j)];
            r[(2 * i, 2 * j)] = z.re;
            r[(2 * i, 2 * j + 1)] = -z.im;
            r[(2 * i + 1, 2 * j)] = z.im;
            r[(2 * i + 1, 2 * j + 1)] = z.re;
        }
    }
    r
}

/// Zernike coefficients `<u, Z_j>` of a disk function by polar quadrature.
pub fn zernike_project<F>(
    u: F,
    k_max: usize,
    radial_order: usize,
    n_phi: usize,
) -> Result<CoefficientFunction>
where
    F: Fn(f64, f64) -> Complex64 + Sync,
{
    let basis = Basis::zernike(k_max);
    let rad = gauss_legendre(radial_order, 0.0, 1.0);
    let dphi = 2.0 * PI / n_phi as f64;
    let dim = basis.dim() / 2;
    let parts: Vec<Vec<Complex64>> = rad
        .par_iter()
        .map(|&(r, w)| {
            let mut acc = vec![Complex64::new(0.0, 0.0); dim];
            for i in 0..n_phi {
                let phi = dphi * i as f64;
                let (x, y) = (r * phi.cos(), r * phi.sin());
                let uv = u(x, y) * (w * r * dphi);
                for (a, z) in acc.iter_mut().zip(zernike_values(k_max, x, y)?) {
                    *a += uv * z.conj();
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![Complex64::new(0.0, 0.0); dim];
    for p in parts {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    CoefficientFunction::from_complex(basis, &total)
}
