//! Quadrature helpers shared by the spectral and X-ray modules.

use gauss_quad::legendre::GaussLegendre;

/// Gauss-Legendre nodes and weights mapped onto `[a, b]`.
pub fn gauss_legendre(order: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(order.max(2)).expect("Gauss-Legendre order must be at least 2");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut pairs: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs
}

/// Adaptive 8-point Gauss-Legendre with bisection until successive
/// estimates agree to `tol`.
pub fn adaptive_gauss<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let rule = gauss_legendre(8, -1.0, 1.0);
    let panel = |lo: f64, hi: f64| -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        rule.iter()
            .map(|&(x, w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    };
    fn recurse<P: Fn(f64, f64) -> f64>(
        panel: &P,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = panel(a, m);
        let right = panel(m, b);
        if depth == 0 || (left + right - whole).abs() <= tol {
            return left + right;
        }
        recurse(panel, a, m, left, 0.5 * tol, depth - 1)
            + recurse(panel, m, b, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let whole = panel(a, b);
    recurse(&panel, a, b, whole, tol, 30)
}

/// Trapezoid rule on a (possibly non-uniform) sorted grid.
pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Cumulative trapezoid integral, starting at zero.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..x.len() {
        acc += 0.5 * (x[i] - x[i - 1]) * (y[i] + y[i - 1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(5, 0.0, 2.0);
        let v: f64 = rule.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let f = |x: f64| (x - 0.3).abs();
        let v = adaptive_gauss(&f, 0.0, 1.0, 1e-12);
        assert!((v - (0.045 + 0.245)).abs() < 1e-10);
    }
}
