//! Location-shifted periodic convolution `K_theta f = (g * f)(. - theta)`.
//!
//! All operators act on ambient Fourier coordinates. Frequency `k` carries a
//! cosine/sine pair on which `K_theta` is `g_k R(2 pi k theta)`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};
use crate::spectral::{
    read_table, write_table, BasisKind, CoefficientFunction, SobolevOrder, TableHeader,
};

/// Symmetric kernel given by its Fourier coefficients `g_0, ..., g_K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvolutionKernel {
    coeffs: Vec<f64>,
    kappa: f64,
}

impl ConvolutionKernel {
    /// `g_0 = 1`, `g_k = k^{-kappa}`.
    pub fn power_law(kappa: f64, k_max: usize) -> Result<Self> {
        if !(kappa > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "kernel decay exponent must exceed 1, got {kappa}"
            )));
        }
        let coeffs = std::iter::once(1.0)
            .chain((1..=k_max).map(|k| (k as f64).powf(-kappa)))
            .collect();
        Ok(ConvolutionKernel { coeffs, kappa })
    }

    /// Identity kernel (`g_k = 1`), the Dirac comb surrogate.
    pub fn identity(k_max: usize) -> Self {
        ConvolutionKernel {
            coeffs: vec![1.0; k_max + 1],
            kappa: f64::INFINITY,
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>, kappa: f64) -> Result<Self> {
        if coeffs.len() < 2 {
            return Err(Error::InvalidArgument(
                "kernel needs at least g_0 and g_1".into(),
            ));
        }
        Ok(ConvolutionKernel { coeffs, kappa })
    }

    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mass(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Same kernel with frequencies above `k_max` dropped (or, for power
    /// laws, extended).
    pub fn retruncate(&self, k_max: usize) -> Result<Self> {
        if k_max <= self.k_max() {
            return Ok(ConvolutionKernel {
                coeffs: self.coeffs[..=k_max].to_vec(),
                kappa: self.kappa,
            });
        }
        if self.kappa.is_infinite() && self.coeffs.iter().all(|&g| g == 1.0) {
            return Ok(Self::identity(k_max));
        }
        let law = Self::power_law(self.kappa, k_max)?;
        if law.coeffs[..self.coeffs.len()] != self.coeffs[..] {
            return Err(Error::InvalidArgument(format!(
                "cannot extend a tabulated kernel beyond K = {}",
                self.k_max()
            )));
        }
        Ok(law)
    }

    /// Per-frequency multiplier `g_k^m` (the `m`-fold self-convolution).
    pub fn power(&self, m: u32) -> Self {
        ConvolutionKernel {
            coeffs: self.coeffs.iter().map(|g| g.powi(m as i32)).collect(),
            kappa: self.kappa * m as f64,
        }
    }

    /// Convolution `g * f` (no shift).
    pub fn convolve(&self, f: &CoefficientFunction) -> Result<CoefficientFunction> {
        apply_K(&ShiftedConvOperator::new(self.clone(), 0.0), f)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let header = TableHeader::new([
            ("basis", BasisKind::FourierPeriodic.name().to_string()),
            ("truncation", self.k_max().to_string()),
            ("kappa", self.kappa.to_string()),
        ]);
        let rows: Vec<_> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, &g)| (k, g, 0.0))
            .collect();
        write_table(out, &header, &rows)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let (header, rows) = read_table(input)?;
        let k: usize = header.get_parsed("truncation")?;
        let kappa: f64 = header.get_parsed("kappa")?;
        if rows.len() != k + 1 {
            return Err(Error::DimensionMismatch {
                expected: k + 1,
                got: rows.len(),
            });
        }
        let mut coeffs = vec![0.0; k + 1];
        for (i, re, _) in rows {
            *coeffs
                .get_mut(i)
                .ok_or_else(|| Error::Parse(format!("kernel row index {i} out of range")))? = re;
        }
        Self::from_coeffs(coeffs, kappa)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedConvOperator {
    pub kernel: ConvolutionKernel,
    pub theta: f64,
}

impl ShiftedConvOperator {
    pub fn new(kernel: ConvolutionKernel, theta: f64) -> Self {
        ShiftedConvOperator { kernel, theta }
    }

    fn check(&self, f: &CoefficientFunction) -> Result<CoefficientFunction> {
        if !f.basis().is_periodic() {
            return Err(Error::InvalidArgument(
                "convolution operators need a periodic basis".into(),
            ));
        }
        if f.basis().truncation() != self.kernel.k_max() {
            return Err(Error::BasisMismatch {
                left: format!("kernel truncation {}", self.kernel.k_max()),
                right: f.basis().to_string(),
            });
        }
        Ok(f.to_ambient())
    }
}

fn rotation(phi: f64) -> Matrix2<f64> {
    let (s, c) = phi.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// 2x2 block of the `order`-th theta-derivative of `K_theta` at frequency `k`.
pub fn symbol_block(kernel: &ConvolutionKernel, theta: f64, k: usize, order: u32) -> Matrix2<f64> {
    let w = 2.0 * PI * k as f64;
    // d/dtheta R(w theta) = w J R(w theta), J the exact quarter turn
    let mut b = rotation(w * theta) * (kernel.coeff(k) * w.powi(order as i32));
    for _ in 0..order % 4 {
        b = Matrix2::new(-b[(1, 0)], -b[(1, 1)], b[(0, 0)], b[(0, 1)]);
    }
    b
}

fn apply_order(
    op: &ShiftedConvOperator,
    f: &CoefficientFunction,
    order: u32,
) -> Result<CoefficientFunction> {
    let amb = op.check(f)?;
    let c = amb.coeffs();
    let mut out = vec![0.0; c.len()];
    out[0] = if order == 0 {
        op.kernel.coeff(0) * c[0]
    } else {
        0.0
    };
    for k in 1..=op.kernel.k_max() {
        let b = symbol_block(&op.kernel, op.theta, k, order);
        let (a, s) = (c[2 * k - 1], c[2 * k]);
        out[2 * k - 1] = b[(0, 0)] * a + b[(0, 1)] * s;
        out[2 * k] = b[(1, 0)] * a + b[(1, 1)] * s;
    }
    CoefficientFunction::new(amb.basis(), out)
}

#[allow(non_snake_case)]
pub fn apply_K(op: &ShiftedConvOperator, f: &CoefficientFunction) -> Result<CoefficientFunction> {
    apply_order(op, f, 0)
}

#[allow(non_snake_case)]
pub fn apply_Kdot(
    op: &ShiftedConvOperator,
    f: &CoefficientFunction,
) -> Result<CoefficientFunction> {
    apply_order(op, f, 1)
}

#[allow(non_snake_case)]
pub fn apply_Kddot(
    op: &ShiftedConvOperator,
    f: &CoefficientFunction,
) -> Result<CoefficientFunction> {
    apply_order(op, f, 2)
}

#[allow(non_snake_case)]
pub fn adjoint_K(op: &ShiftedConvOperator, h: &CoefficientFunction) -> Result<CoefficientFunction> {
    apply_K(&ShiftedConvOperator::new(op.kernel.clone(), -op.theta), h)
}

/// Dense ambient matrix of the `order`-th theta-derivative.
pub fn operator_matrix(kernel: &ConvolutionKernel, theta: f64, order: u32) -> DMatrix<f64> {
    let k_max = kernel.k_max();
    let mut m = DMatrix::zeros(2 * k_max + 1, 2 * k_max + 1);
    m[(0, 0)] = if order == 0 { kernel.coeff(0) } else { 0.0 };
    for k in 1..=k_max {
        let b = symbol_block(kernel, theta, k, order);
        m.fixed_view_mut::<2, 2>(2 * k - 1, 2 * k - 1).copy_from(&b);
    }
    m
}

/// `||h0 - h0(. - delta)||^2` for `h0 = g * f0`.
pub fn shift_mismatch(
    kernel: &ConvolutionKernel,
    f0: &CoefficientFunction,
    delta: f64,
) -> Result<f64> {
    let h0 = kernel.convolve(f0)?;
    let c = h0.coeffs();
    Ok((1..=kernel.k_max())
        .map(|k| {
            let s = (PI * k as f64 * delta).sin();
            4.0 * (c[2 * k - 1].powi(2) + c[2 * k].powi(2)) * s * s
        })
        .sum())
}

/// `L^2 = sum_k k^2 |h_{0,k}|^2` for `h0 = g * f0`.
pub fn shift_lipschitz_sq(kernel: &ConvolutionKernel, f0: &CoefficientFunction) -> Result<f64> {
    let h0 = kernel.convolve(f0)?;
    let c = h0.coeffs();
    Ok((1..=kernel.k_max())
        .map(|k| (k * k) as f64 * (c[2 * k - 1].powi(2) + c[2 * k].powi(2)))
        .sum())
}

/// Operator-norm constants on `S^r`: `sup|K|`, `sup|Kdot|` and half of
/// `sup|Kddot|`, taken over the symbol.
#[derive(Clone, Copy, Debug)]
pub struct SymbolConstants {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

pub fn symbol_constants(kernel: &ConvolutionKernel, r: SobolevOrder) -> SymbolConstants {
    let weight = |k: usize| -> f64 {
        let k = k as f64;
        if r.0 >= 0.0 {
            (1.0 + k.powf(2.0 * r.0)).sqrt()
        } else {
            (1.0 + k).powf(r.0)
        }
    };
    let mut out = SymbolConstants {
        d1: 0.0,
        d2: 0.0,
        d3: 0.0,
    };
    for k in 0..=kernel.k_max() {
        let w = 2.0 * PI * k as f64;
        let g = kernel.coeff(k).abs() * weight(k);
        out.d1 = out.d1.max(g);
        out.d2 = out.d2.max(w * g);
        out.d3 = out.d3.max(0.5 * w * w * g);
    }
    out
}

/// Smallest `K` with `sum_{k > K} |g_k f_{0,k}|^2 < floor`. Needs `f0` and
/// the kernel on a common (large) truncation.
pub fn required_truncation(
    kernel: &ConvolutionKernel,
    f0: &CoefficientFunction,
    floor: f64,
) -> Result<usize> {
    let h0 = kernel.convolve(f0)?;
    let c = h0.coeffs();
    let k_max = kernel.k_max();
    let mut tail = 0.0;
    for k in (1..=k_max).rev() {
        let next = tail + c[2 * k - 1].powi(2) + c[2 * k].powi(2);
        if next >= floor {
            return Ok(k);
        }
        tail = next;
    }
    Ok(1)
}

/// Tail mass of `g * f0` above frequency `k_cut`.
pub fn tail_mass(
    kernel: &ConvolutionKernel,
    f0: &CoefficientFunction,
    k_cut: usize,
) -> Result<f64> {
    let h0 = kernel.convolve(f0)?;
    let c = h0.coeffs();
    Ok((k_cut + 1..=kernel.k_max())
        .map(|k| c[2 * k - 1].powi(2) + c[2 * k].powi(2))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::adaptive_gauss;
    use crate::spectral::{inner_product, sobolev_norm, Basis};
    use proptest::prelude::*;

    fn random_f(k_max: usize, vals: &[f64]) -> CoefficientFunction {
        CoefficientFunction::new(Basis::fourier(k_max), vals[..2 * k_max + 1].to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_at_zero_is_identity() {
        let f = random_f(3, &[0.1, -0.4, 0.3, 2.0, 0.5, -1.0, 0.7]);
        let op = ShiftedConvOperator::new(ConvolutionKernel::identity(3), 0.0);
        assert_eq!(apply_K(&op, &f).unwrap(), f);
    }

    #[test]
    fn shifted_cosine_matches_pointwise_quadrature() {
        let kernel = ConvolutionKernel::power_law(3.0, 4).unwrap();
        let theta = 0.1;
        let f = CoefficientFunction::from_trig(4, &[0.0, 1.0], &[]).unwrap();
        let out = apply_K(&ShiftedConvOperator::new(kernel.clone(), theta), &f).unwrap();
        // g * cos(2 pi .)(t - theta) = g_1 cos(2 pi (t - theta)); project on the basis
        let target = |t: f64| kernel.coeff(1) * (2.0 * PI * (t - theta)).cos();
        let c1 = adaptive_gauss(
            &|t| target(t) * 2f64.sqrt() * (2.0 * PI * t).cos(),
            -0.5,
            0.5,
            1e-14,
        );
        let s1 = adaptive_gauss(
            &|t| target(t) * 2f64.sqrt() * (2.0 * PI * t).sin(),
            -0.5,
            0.5,
            1e-14,
        );
        assert!((out.coeffs()[1] - c1).abs() < 1e-12);
        assert!((out.coeffs()[2] - s1).abs() < 1e-12);
        let phi = 2.0 * PI * theta;
        assert!((c1 - phi.cos() / 2f64.sqrt()).abs() < 1e-12);
        assert!((s1 - phi.sin() / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn derivative_annihilates_constants() {
        let kernel = ConvolutionKernel::power_law(3.0, 5).unwrap();
        let f = CoefficientFunction::unit(Basis::fourier(5), 0);
        let op = ShiftedConvOperator::new(kernel, 0.2);
        assert!(apply_Kdot(&op, &f).unwrap().norm() == 0.0);
        assert!(apply_Kddot(&op, &f).unwrap().norm() == 0.0);
    }

    #[test]
    fn derivative_of_symmetric_function_is_odd_at_zero() {
        let kernel = ConvolutionKernel::power_law(3.0, 5).unwrap();
        let f = CoefficientFunction::new(Basis::cosine(5), vec![1.0, 0.5, -0.2, 0.1, 0.3, 0.05])
            .unwrap();
        let d = apply_Kdot(&ShiftedConvOperator::new(kernel, 0.0), &f).unwrap();
        for k in 0..=5 {
            let cos_slot = if k == 0 { 0 } else { 2 * k - 1 };
            assert_eq!(d.coeffs()[cos_slot], 0.0);
        }
        assert!(d.norm() > 0.0);
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let kernel = ConvolutionKernel::power_law(2.5, 6).unwrap();
        let f = CoefficientFunction::new(
            Basis::fourier(6),
            (0..13).map(|i| ((i * 7) as f64).sin()).collect(),
        )
        .unwrap();
        let (theta, h) = (0.13, 1e-5);
        let at = |t: f64| apply_K(&ShiftedConvOperator::new(kernel.clone(), t), &f).unwrap();
        let fd = at(theta + h)
            .axpy(-1.0, &at(theta))
            .unwrap()
            .scaled(1.0 / h);
        let d = apply_Kdot(&ShiftedConvOperator::new(kernel.clone(), theta), &f).unwrap();
        let err = fd.axpy(-1.0, &d).unwrap().norm();
        let dd = apply_Kddot(&ShiftedConvOperator::new(kernel.clone(), theta), &f).unwrap();
        assert!(err <= h * dd.norm(), "{err}");

        let h2 = 1e-4;
        let fd2 = at(theta + h2)
            .axpy(-2.0, &at(theta))
            .unwrap()
            .axpy(1.0, &at(theta - h2))
            .unwrap()
            .scaled(1.0 / (h2 * h2));
        let err2 = fd2.axpy(-1.0, &dd).unwrap().norm();
        assert!(err2 < 1e-3 * dd.norm(), "{err2}");
    }

    #[test]
    fn adjoint_at_zero_is_self() {
        let kernel = ConvolutionKernel::power_law(3.0, 4).unwrap();
        let op = ShiftedConvOperator::new(kernel, 0.0);
        let f = random_f(4, &[0.3, 1.0, -2.0, 0.5, 0.25, -0.1, 0.9, 0.0, 0.0]);
        assert_eq!(adjoint_K(&op, &f).unwrap(), apply_K(&op, &f).unwrap());
    }

    #[test]
    fn shift_mismatch_examples() {
        let kernel = ConvolutionKernel::identity(3);
        let f0 = CoefficientFunction::from_trig(3, &[1.0, 2.0], &[]).unwrap();
        assert_eq!(shift_mismatch(&kernel, &f0, 0.0).unwrap(), 0.0);
        // h0 = 2 cos(2 pi t), i.e. |h_{0,+1}| = |h_{0,-1}| = 1
        let v = shift_mismatch(&kernel, &f0, 0.25).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_rule_finds_smallest_level() {
        let kernel = ConvolutionKernel::power_law(3.0, 64).unwrap();
        let f0 = CoefficientFunction::from_trig(64, &[1.0, 1.0], &[]).unwrap();
        assert_eq!(required_truncation(&kernel, &f0, 1e-10).unwrap(), 1);
        let amps: Vec<f64> = (0..=64)
            .map(|k| if k == 0 { 0.0 } else { 1.0 / (k * k) as f64 })
            .collect();
        let f1 = CoefficientFunction::from_trig(64, &amps, &[]).unwrap();
        let k = required_truncation(&kernel, &f1, 1e-10).unwrap();
        assert!(tail_mass(&kernel, &f1, k).unwrap() < 1e-10);
        assert!(tail_mass(&kernel, &f1, k - 1).unwrap() >= 1e-10);
    }

    #[test]
    fn kernel_table_round_trip() {
        let kernel = ConvolutionKernel::power_law(3.0, 5).unwrap();
        let mut buf = Vec::new();
        kernel.write_to(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf)
            .starts_with("basis,truncation,kappa\nfourier_periodic,5,3\n"));
        assert_eq!(
            ConvolutionKernel::read_from(buf.as_slice()).unwrap(),
            kernel
        );
    }

    #[test]
    fn mismatched_truncation_rejected() {
        let op = ShiftedConvOperator::new(ConvolutionKernel::power_law(3.0, 4).unwrap(), 0.0);
        let f = CoefficientFunction::zeros(Basis::fourier(5));
        assert!(matches!(apply_K(&op, &f), Err(Error::BasisMismatch { .. })));
    }

    #[test]
    fn operator_matrix_matches_application() {
        let kernel = ConvolutionKernel::power_law(3.0, 4).unwrap();
        let f = random_f(4, &[0.3, 1.0, -2.0, 0.5, 0.25, -0.1, 0.9, 0.4, -0.3]);
        for order in 0..3 {
            let m = operator_matrix(&kernel, 0.17, order);
            let direct =
                apply_order(&ShiftedConvOperator::new(kernel.clone(), 0.17), &f, order).unwrap();
            assert!((m * f.to_vector() - direct.to_vector()).amax() < 1e-14);
        }
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (
            proptest::collection::vec(-1.0f64..1.0, 17),
            proptest::collection::vec(-1.0f64..1.0, 17),
            -0.45f64..0.45,
            -0.45f64..0.45,
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn adjoint_is_negative_shift((a, b, theta, _t) in arb_case()) {
            let kernel = ConvolutionKernel::power_law(3.0, 8).unwrap();
            let op = ShiftedConvOperator::new(kernel, theta);
            let f = random_f(8, &a);
            let h = random_f(8, &b);
            let lhs = inner_product(&apply_K(&op, &f).unwrap(), &h).unwrap();
            let rhs = inner_product(&f, &adjoint_K(&op, &h).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn norm_is_shift_invariant((a, _b, theta, _t) in arb_case()) {
            let kernel = ConvolutionKernel::power_law(3.0, 8).unwrap();
            let f = random_f(8, &a);
            let n0 = apply_K(&ShiftedConvOperator::new(kernel.clone(), 0.0), &f).unwrap().norm();
            let nt = apply_K(&ShiftedConvOperator::new(kernel, theta), &f).unwrap().norm();
            prop_assert!((n0 - nt).abs() < 1e-12);
        }

        #[test]
        fn uniform_bounds((a, _b, theta, _t) in arb_case()) {
            let kernel = ConvolutionKernel::power_law(3.0, 8).unwrap();
            let f = random_f(8, &a);
            let c = symbol_constants(&kernel, SobolevOrder(0.0));
            let op = ShiftedConvOperator::new(kernel, theta);
            let max_g = 1.0;
            let max_dg = (1..=8).map(|k| 2.0 * PI * k as f64 * (k as f64).powf(-3.0)).fold(0.0, f64::max);
            prop_assert!(apply_K(&op, &f).unwrap().norm() <= max_g * f.norm() * (1.0 + 1e-14));
            prop_assert!(apply_Kdot(&op, &f).unwrap().norm() <= max_dg * f.norm() * (1.0 + 1e-14));
            prop_assert!(c.d1 >= max_g);
        }

        #[test]
        fn lipschitz_and_taylor_bounds((a, _b, theta, theta0) in arb_case(), r in 0.0f64..2.0) {
            let kernel = ConvolutionKernel::power_law(3.0, 8).unwrap();
            let f = random_f(8, &a);
            let c = symbol_constants(&kernel, SobolevOrder(r));
            let k_t = apply_K(&ShiftedConvOperator::new(kernel.clone(), theta), &f).unwrap();
            let op0 = ShiftedConvOperator::new(kernel, theta0);
            let k_0 = apply_K(&op0, &f).unwrap();
            let kd_0 = apply_Kdot(&op0, &f).unwrap();
            let dt = theta - theta0;
            let diff = k_t.axpy(-1.0, &k_0).unwrap();
            let lip = sobolev_norm(&diff, SobolevOrder(r)).unwrap();
            prop_assert!(lip <= c.d2 * dt.abs() * f.norm() * (1.0 + 1e-12) + 1e-15);
            let rem = sobolev_norm(&diff.axpy(-dt, &kd_0).unwrap(), SobolevOrder(r)).unwrap();
            prop_assert!(rem <= c.d3 * dt * dt * f.norm() * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn shift_mismatch_lipschitz(a in proptest::collection::vec(-1.0f64..1.0, 17), delta in -0.49f64..0.49) {
            let kernel = ConvolutionKernel::power_law(3.0, 8).unwrap();
            let f0 = random_f(8, &a);
            let lhs = shift_mismatch(&kernel, &f0, delta).unwrap();
            let l2 = shift_lipschitz_sq(&kernel, &f0).unwrap();
            prop_assert!(lhs <= 4.0 * PI * PI * l2 * delta * delta * (1.0 + 1e-12) + 1e-300);
        }

        #[test]
        fn holder_interpolation(a in proptest::collection::vec(-1.0f64..1.0, 17), beta in 0.0f64..3.0) {
            let kappa = 3.0;
            let kernel = ConvolutionKernel::power_law(kappa, 8).unwrap();
            let mut c = a.clone();
            c[0] = 0.0;
            let h = random_f(8, &c);
            let op = ShiftedConvOperator::new(kernel, 0.0);
            let chi = beta + kappa;
            let lhs = apply_Kdot(&op, &h).unwrap().norm().powi(2);
            let sb = sobolev_norm(&h, SobolevOrder(beta)).unwrap();
            let kh = apply_K(&op, &h).unwrap().norm();
            let rhs = 4.0 * PI * PI * sb.powf(2.0 / chi) * kh.powf(2.0 * (chi - 1.0) / chi);
            prop_assert!(lhs <= rhs * (1.0 + 1e-12));
        }
    }
}
