//! Truncated orthonormal bases and coefficient representations.
//!
//! Periodic functions on `[-1/2, 1/2)` use real coordinates
//! `[c0, c1, s1, c2, s2, ...]` with respect to `1, sqrt(2) cos(2 pi k t),
//! sqrt(2) sin(2 pi k t)`. This is the *ambient* coordinate system of the
//! deconvolution operators; the symmetric and zero-location spaces are
//! subspaces of it described by an orthonormal frame.
//!
//! Disk functions use normalized Zernike polynomials, ordered by degree
//! `k` and then `l`, with each complex coefficient stored as `(re, im)`.

mod table;
pub mod zernike;

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub use table::{read_table, write_table, TableHeader};
pub use zernike::{zernike_eval, zernike_index, zernike_values, ZernikeMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BasisKind {
    FourierPeriodic,
    CosineSymmetric,
    ZeroLocationFourier,
    ZernikeDisk,
}

impl BasisKind {
    pub fn name(self) -> &'static str {
        match self {
            BasisKind::FourierPeriodic => "fourier_periodic",
            BasisKind::CosineSymmetric => "cosine_symmetric",
            BasisKind::ZeroLocationFourier => "zero_location_fourier",
            BasisKind::ZernikeDisk => "zernike_disk",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name.trim() {
            "fourier_periodic" => Some(BasisKind::FourierPeriodic),
            "cosine_symmetric" => Some(BasisKind::CosineSymmetric),
            "zero_location_fourier" => Some(BasisKind::ZeroLocationFourier),
            "zernike_disk" => Some(BasisKind::ZernikeDisk),
            _ => None,
        }
    }
}

/// A basis tag together with its truncation level (maximal frequency, or
/// maximal Zernike degree).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Basis {
    kind: BasisKind,
    truncation: usize,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind.name(), self.truncation)
    }
}

impl Basis {
    pub fn new(kind: BasisKind, truncation: usize) -> Result<Self> {
        if truncation < 1 {
            return Err(Error::InvalidArgument(format!(
                "truncation must be at least 1, got {truncation}"
            )));
        }
        Ok(Basis { kind, truncation })
    }

    pub fn fourier(k_max: usize) -> Self {
        Basis::new(BasisKind::FourierPeriodic, k_max).expect("k_max >= 1")
    }

    pub fn cosine(k_max: usize) -> Self {
        Basis::new(BasisKind::CosineSymmetric, k_max).expect("k_max >= 1")
    }

    pub fn zero_location(k_max: usize) -> Self {
        Basis::new(BasisKind::ZeroLocationFourier, k_max).expect("k_max >= 1")
    }

    pub fn zernike(k_max: usize) -> Self {
        Basis::new(BasisKind::ZernikeDisk, k_max).expect("k_max >= 1")
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn is_periodic(&self) -> bool {
        self.kind != BasisKind::ZernikeDisk
    }

    /// Number of real coordinates.
    pub fn dim(&self) -> usize {
        let k = self.truncation;
        match self.kind {
            BasisKind::FourierPeriodic => 2 * k + 1,
            BasisKind::CosineSymmetric => k + 1,
            BasisKind::ZeroLocationFourier => 2 * k,
            BasisKind::ZernikeDisk => (k + 1) * (k + 2),
        }
    }

    /// The ambient basis whose coordinates the forward operators act on.
    pub fn ambient(&self) -> Basis {
        match self.kind {
            BasisKind::ZernikeDisk => *self,
            _ => Basis::fourier(self.truncation),
        }
    }

    /// Frequency (or Zernike degree) attached to every real coordinate.
    pub fn frequency_labels(&self) -> Vec<usize> {
        let k = self.truncation;
        match self.kind {
            BasisKind::FourierPeriodic => std::iter::once(0)
                .chain((1..=k).flat_map(|j| [j, j]))
                .collect(),
            BasisKind::CosineSymmetric => (0..=k).collect(),
            BasisKind::ZeroLocationFourier => (0..=k).chain(1..k).collect(),
            BasisKind::ZernikeDisk => (0..=k)
                .flat_map(|deg| std::iter::repeat(deg).take(2 * (deg + 1)))
                .collect(),
        }
    }

    /// Orthonormal frame of this basis in ambient coordinates (columns are
    /// the basis functions).
    pub fn frame(&self) -> DMatrix<f64> {
        let k = self.truncation;
        match self.kind {
            BasisKind::FourierPeriodic | BasisKind::ZernikeDisk => {
                DMatrix::identity(self.dim(), self.dim())
            }
            BasisKind::CosineSymmetric => {
                let mut m = DMatrix::zeros(2 * k + 1, k + 1);
                m[(0, 0)] = 1.0;
                for j in 1..=k {
                    m[(2 * j - 1, j)] = 1.0;
                }
                m
            }
            BasisKind::ZeroLocationFourier => {
                let order: Vec<usize> = (1..=k).collect();
                zero_location_frame(k, &order)
            }
        }
    }

    /// The basis as a [`Subspace`] of its ambient space.
    pub fn subspace(&self) -> Subspace {
        Subspace {
            basis: *self,
            frame: self.frame(),
            labels: self.frequency_labels(),
        }
    }
}

/// Frame for the zero-location space: all cosines, then sines
/// Gram-Schmidt orthonormalized against the sawtooth in the given order.
/// The last sine of `order` is dependent on the others and dropped.
pub fn zero_location_frame(k_max: usize, order: &[usize]) -> DMatrix<f64> {
    assert_eq!(
        order.len(),
        k_max,
        "order must be a permutation of 1..=k_max"
    );
    let dim = 2 * k_max + 1;
    let mut frame = DMatrix::zeros(dim, 2 * k_max);
    frame[(0, 0)] = 1.0;
    for j in 1..=k_max {
        frame[(2 * j - 1, j)] = 1.0;
    }
    let saw = sawtooth_vector(k_max);
    let mut done: Vec<DVector<f64>> = vec![&saw / saw.norm()];
    for (col, &j) in order.iter().take(k_max - 1).enumerate() {
        let mut v = DVector::zeros(dim);
        v[2 * j] = 1.0;
        // two passes of classical Gram-Schmidt
        for _ in 0..2 {
            for u in &done {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let nrm = v.norm();
        v /= nrm;
        frame.set_column(k_max + 1 + col, &v);
        done.push(v);
    }
    frame
}

/// A subspace of an ambient coefficient space, described by an orthonormal
/// frame together with a frequency label for each frame vector.
#[derive(Clone, Debug)]
pub struct Subspace {
    basis: Basis,
    frame: DMatrix<f64>,
    labels: Vec<usize>,
}

impl Subspace {
    /// An explicit frame. Columns must be orthonormal.
    pub fn from_frame(basis: Basis, frame: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if frame.nrows() != basis.ambient().dim() || labels.len() != frame.ncols() {
            return Err(Error::InvalidArgument(format!(
                "frame {}x{} with {} labels does not fit ambient dimension {}",
                frame.nrows(),
                frame.ncols(),
                labels.len(),
                basis.ambient().dim()
            )));
        }
        let gram = frame.transpose() * &frame;
        let dev = (gram - DMatrix::identity(frame.ncols(), frame.ncols())).amax();
        if dev > 1e-10 {
            return Err(Error::InvalidArgument(format!(
                "frame columns are not orthonormal (deviation {dev:.2e})"
            )));
        }
        Ok(Subspace {
            basis,
            frame,
            labels,
        })
    }

    /// Zero-location space with the sines orthonormalized in a custom order.
    pub fn zero_location_ordered(k_max: usize, order: &[usize]) -> Self {
        let basis = Basis::zero_location(k_max);
        Subspace {
            basis,
            frame: zero_location_frame(k_max, order),
            labels: basis.frequency_labels(),
        }
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn ambient(&self) -> Basis {
        self.basis.ambient()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    /// Ambient coefficients of `frame * coords`.
    pub fn embed(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.frame * coords
    }

    /// Frame coordinates of the orthogonal projection of an ambient vector.
    pub fn coordinates(&self, ambient: &DVector<f64>) -> DVector<f64> {
        self.frame.transpose() * ambient
    }
}

/// Order of a Sobolev-type norm; may be negative.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct SobolevOrder(pub f64);

/// A function given by a basis and its (real) coordinate vector.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientFunction {
    basis: Basis,
    coeffs: Vec<f64>,
}

impl CoefficientFunction {
    pub fn new(basis: Basis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(Error::DimensionMismatch {
                expected: basis.dim(),
                got: coeffs.len(),
            });
        }
        Ok(CoefficientFunction { basis, coeffs })
    }

    pub fn from_vector(basis: Basis, v: &DVector<f64>) -> Result<Self> {
        Self::new(basis, v.iter().copied().collect())
    }

    pub fn zeros(basis: Basis) -> Self {
        CoefficientFunction {
            basis,
            coeffs: vec![0.0; basis.dim()],
        }
    }

    /// Unit vector along real coordinate `index`.
    pub fn unit(basis: Basis, index: usize) -> Self {
        let mut f = Self::zeros(basis);
        f.coeffs[index] = 1.0;
        f
    }

    /// Periodic function `sum_k a_k cos(2 pi k t) + b_k sin(2 pi k t)` given
    /// by ordinary trigonometric amplitudes (`b[0]` is ignored).
    pub fn from_trig(k_max: usize, cos_amp: &[f64], sin_amp: &[f64]) -> Result<Self> {
        let top = cos_amp.len().max(sin_amp.len()).saturating_sub(1);
        if top > k_max {
            return Err(Error::InvalidArgument(format!(
                "trigonometric degree {top} exceeds truncation {k_max}"
            )));
        }
        let basis = Basis::fourier(k_max);
        let mut c = vec![0.0; basis.dim()];
        c[0] = cos_amp.first().copied().unwrap_or(0.0);
        for (k, &a) in cos_amp.iter().enumerate().skip(1) {
            c[2 * k - 1] = a / std::f64::consts::SQRT_2;
        }
        for (k, &b) in sin_amp.iter().enumerate().skip(1) {
            c[2 * k] = b / std::f64::consts::SQRT_2;
        }
        Ok(CoefficientFunction { basis, coeffs: c })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        CoefficientFunction {
            basis: self.basis,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        check_same_basis(self.basis, other.basis)?;
        Ok(CoefficientFunction {
            basis: self.basis,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    /// Coordinates in the ambient basis.
    pub fn to_ambient(&self) -> CoefficientFunction {
        match self.basis.kind {
            BasisKind::FourierPeriodic | BasisKind::ZernikeDisk => self.clone(),
            _ => {
                let v = self.basis.frame() * self.to_vector();
                CoefficientFunction::from_vector(self.basis.ambient(), &v)
                    .expect("frame has ambient rows")
            }
        }
    }

    /// Re-expresses the function on a Fourier or Zernike basis with a
    /// different truncation: coefficients above the new truncation are
    /// dropped, missing ones are zero.
    pub fn retruncate(&self, k_max: usize) -> Result<Self> {
        let basis = match self.basis.kind {
            BasisKind::FourierPeriodic => Basis::fourier(k_max),
            BasisKind::ZernikeDisk => Basis::zernike(k_max),
            _ => {
                return Err(Error::InvalidArgument(
                    "retruncation needs a Fourier or Zernike representation".into(),
                ))
            }
        };
        let mut c = vec![0.0; basis.dim()];
        let n = c.len().min(self.coeffs.len());
        c[..n].copy_from_slice(&self.coeffs[..n]);
        Ok(CoefficientFunction { basis, coeffs: c })
    }

    /// Pointwise value of a periodic function.
    pub fn evaluate(&self, t: f64) -> Result<f64> {
        if !self.basis.is_periodic() {
            return Err(Error::InvalidArgument(
                "evaluate(t) needs a periodic basis".into(),
            ));
        }
        let amb = self.to_ambient();
        let c = &amb.coeffs;
        let mut v = c[0];
        for k in 1..=amb.basis.truncation {
            let arg = 2.0 * PI * k as f64 * t;
            v += std::f64::consts::SQRT_2 * (c[2 * k - 1] * arg.cos() + c[2 * k] * arg.sin());
        }
        Ok(v)
    }

    /// Zernike complex coefficients.
    pub fn complex_coeffs(&self) -> Result<Vec<Complex64>> {
        if self.basis.kind != BasisKind::ZernikeDisk {
            return Err(Error::InvalidArgument(
                "complex coefficients need a Zernike basis".into(),
            ));
        }
        Ok(self
            .coeffs
            .chunks(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect())
    }

    pub fn from_complex(basis: Basis, coeffs: &[Complex64]) -> Result<Self> {
        Self::new(basis, coeffs.iter().flat_map(|c| [c.re, c.im]).collect())
    }

    /// Pointwise value of a disk function.
    pub fn evaluate_disk(&self, x: f64, y: f64) -> Result<Complex64> {
        let c = self.complex_coeffs()?;
        let z = zernike_values(self.basis.truncation, x, y)?;
        Ok(c.iter().zip(&z).map(|(a, b)| a * b).sum())
    }
}

fn check_same_basis(a: Basis, b: Basis) -> Result<()> {
    if a != b {
        return Err(Error::BasisMismatch {
            left: a.to_string(),
            right: b.to_string(),
        });
    }
    Ok(())
}

/// Real part of the Hermitian inner product of the two coefficient sequences.
pub fn inner_product(f: &CoefficientFunction, g: &CoefficientFunction) -> Result<f64> {
    check_same_basis(f.basis, g.basis)?;
    Ok(f.coeffs.iter().zip(&g.coeffs).map(|(a, b)| a * b).sum())
}

/// Periodic Sobolev norm. For `r >= 0` the weight is `1 + |k|^{2r}`; for
/// negative orders the dual weight `(1 + |k|)^{2r}` is used.
pub fn sobolev_norm(f: &CoefficientFunction, r: SobolevOrder) -> Result<f64> {
    if !f.basis.is_periodic() {
        return Err(Error::InvalidArgument(
            "Sobolev norm needs a periodic basis".into(),
        ));
    }
    let amb = f.to_ambient();
    let labels = amb.basis.frequency_labels();
    let weight = |k: usize| -> f64 {
        let k = k as f64;
        if r.0 >= 0.0 {
            1.0 + k.powf(2.0 * r.0)
        } else {
            (1.0 + k).powf(2.0 * r.0)
        }
    };
    Ok(amb
        .coeffs
        .iter()
        .zip(&labels)
        .map(|(c, &k)| c * c * weight(k))
        .sum::<f64>()
        .sqrt())
}

/// Ambient coefficients of the sawtooth `S(t) = t` on `[-1/2, 1/2)`.
pub(crate) fn sawtooth_vector(k_max: usize) -> DVector<f64> {
    let mut v = DVector::zeros(2 * k_max + 1);
    for k in 1..=k_max {
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        v[2 * k] = std::f64::consts::SQRT_2 * sign / (2.0 * PI * k as f64);
    }
    v
}

/// Truncated Fourier representation of the sawtooth.
pub fn sawtooth(k_max: usize) -> CoefficientFunction {
    CoefficientFunction::from_vector(Basis::fourier(k_max), &sawtooth_vector(k_max))
        .expect("dimension")
}

/// `f - <f,S>/||S||^2 S` with the sawtooth truncated at the same level, so
/// the output is orthogonal to `S` up to rounding.
pub fn project_zero_location(f: &CoefficientFunction) -> Result<CoefficientFunction> {
    if !f.basis.is_periodic() {
        return Err(Error::InvalidArgument(
            "zero-location projection needs a periodic basis".into(),
        ));
    }
    match f.basis.kind {
        BasisKind::CosineSymmetric | BasisKind::ZeroLocationFourier => Ok(f.clone()),
        _ => {
            let s = sawtooth(f.basis.truncation);
            let c = inner_product(f, &s)? / inner_product(&s, &s)?;
            f.axpy(-c, &s)
        }
    }
}

/// `sqrt(sum (1+k)^{2s} |f_{k,l}|^2)` over the Zernike coefficients.
pub fn zernike_sobolev_norm(f: &CoefficientFunction, s: SobolevOrder) -> Result<f64> {
    if f.basis.kind != BasisKind::ZernikeDisk {
        return Err(Error::InvalidArgument(
            "Zernike-Sobolev norm needs a Zernike basis".into(),
        ));
    }
    let labels = f.basis.frequency_labels();
    Ok(f.coeffs
        .iter()
        .zip(&labels)
        .map(|(c, &k)| c * c * (1.0 + k as f64).powf(2.0 * s.0))
        .sum::<f64>()
        .sqrt())
}
