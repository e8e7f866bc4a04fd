//! Normalized Zernike polynomials on the closed unit disk.
//!
//! `Z_{k,l}` has angular frequency `k - 2l` and radial part `R_k^{|k-2l|}`;
//! the normalized polynomial is `(-1)^l sqrt((k+1)/pi) R_k^{|k-2l|}(r)
//! e^{i(k-2l)phi}`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

const DISK_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZernikeMode {
    pub k: usize,
    pub l: usize,
}

impl ZernikeMode {
    pub fn angular(self) -> i64 {
        self.k as i64 - 2 * self.l as i64
    }

    /// All modes of degree at most `k_max`, in storage order.
    pub fn all(k_max: usize) -> Vec<ZernikeMode> {
        (0..=k_max)
            .flat_map(|k| (0..=k).map(move |l| ZernikeMode { k, l }))
            .collect()
    }
}

/// Position of `(k, l)` in the complex coefficient sequence.
pub fn zernike_index(k: usize, l: usize) -> usize {
    debug_assert!(l <= k);
    k * (k + 1) / 2 + l
}

/// Radial polynomials `R_n^m(r)` for `0 <= m <= n <= n_max`, row `n`,
/// column `m`.
fn radial_table(n_max: usize, r: f64) -> Vec<Vec<f64>> {
    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let mut row = vec![0.0; n + 1];
        for m in 0..=n {
            if (n - m) % 2 == 1 {
                continue;
            }
            row[m] = if m == n {
                r.powi(n as i32)
            } else {
                let prev = &tab[n - 1];
                let lower = if n >= 2 { tab[n - 2][m] } else { 0.0 };
                r * (prev[m.abs_diff(1)] + prev[m + 1]) - lower
            };
        }
        tab.push(row);
    }
    tab
}

fn check_disk(x: f64, y: f64) -> Result<()> {
    if !(x * x + y * y <= 1.0 + DISK_SLACK) {
        return Err(Error::OutsideDisk { x, y });
    }
    Ok(())
}

/// Values of all normalized Zernike polynomials of degree `<= k_max` at
/// `(x, y)`, in storage order.
pub fn zernike_values(k_max: usize, x: f64, y: f64) -> Result<Vec<Complex64>> {
    check_disk(x, y)?;
    let r = x.hypot(y).min(1.0);
    let phi = y.atan2(x);
    let radial = radial_table(k_max, r);
    let mut out = Vec::with_capacity((k_max + 1) * (k_max + 2) / 2);
    for k in 0..=k_max {
        let norm = ((k + 1) as f64 / PI).sqrt();
        for l in 0..=k {
            let m = k as i64 - 2 * l as i64;
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            let amp = sign * norm * radial[k][m.unsigned_abs() as usize];
            out.push(Complex64::from_polar(amp, m as f64 * phi));
        }
    }
    Ok(out)
}

/// Normalized `Z_{k,l}` at `(x, y)`.
pub fn zernike_eval(k: usize, l: usize, x: f64, y: f64) -> Result<Complex64> {
    if l > k {
        return Err(Error::InvalidArgument(format!(
            "Zernike index needs l <= k, got k={k}, l={l}"
        )));
    }
    check_disk(x, y)?;
    let r = x.hypot(y).min(1.0);
    let m = k as i64 - 2 * l as i64;
    let radial = radial_table(k, r)[k][m.unsigned_abs() as usize];
    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
    let amp = sign * ((k + 1) as f64 / PI).sqrt() * radial;
    Ok(Complex64::from_polar(amp, m as f64 * y.atan2(x)))
}
