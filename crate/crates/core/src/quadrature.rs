//! Gauss rules and closed-form cell moments of power kernels.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Nodes and weights of a Gauss rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix with
/// off-diagonal `offdiag`, weights are `mu0` times the squared first
/// eigenvector components.
fn golub_welsch(offdiag: &[f64], mu0: f64) -> GaussRule {
    let n = offdiag.len() + 1;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for (i, b) in offdiag.iter().enumerate() {
        j[(i, i + 1)] = *b;
        j[(i + 1, i)] = *b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], mu0 * eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Legendre rule with `n` points on `[0, 1]` (Newton iteration on the
/// Legendre polynomial, Chebyshev starting guesses).
pub fn gauss_legendre_unit(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x descends from near 1; store ascending on [0, 1].
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        nodes[i] = 0.5 * (1.0 - x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    GaussRule { nodes, weights }
}

/// Probabilists' Gauss–Hermite rule: integrates against the standard normal
/// density (weights sum to one).
pub fn gauss_hermite_normal(n: usize) -> GaussRule {
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    golub_welsch(&off, 1.0)
}

pub(crate) fn gl8() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(8))
}

pub(crate) fn gl4() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(4))
}

/// Integrates `f` over `[a, b]` with the 8-point Gauss–Legendre rule.
pub fn gl8_integrate(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = gl8();
    let h = b - a;
    r.nodes
        .iter()
        .zip(&r.weights)
        .map(|(x, w)| w * f(a + h * x))
        .sum::<f64>()
        * h
}

/// Moments of `σ^p` over the unit cell `[m, m+1]`:
/// `(∫ σ^p dσ, ∫ (σ-m) σ^p dσ)`.
///
/// Closed forms are used near the origin; far from it the integrand is
/// smooth and the closed forms cancel badly, so Gauss–Legendre takes over.
/// For `m = 0` the moments must exist (`p > -1` for the first, `p > -2` for
/// the second); the caller is responsible for not asking otherwise.
pub fn power_cell_moments(m: f64, p: f64) -> (f64, f64) {
    if m >= 8.0 {
        let r = gl8();
        let mut i0 = 0.0;
        let mut i1 = 0.0;
        for (x, w) in r.nodes.iter().zip(&r.weights) {
            let v = w * (m + x).powf(p);
            i0 += v;
            i1 += v * x;
        }
        return (i0, i1);
    }
    let prim = |q: f64, s: f64| {
        if (q + 1.0).abs() < 1e-14 {
            s.ln()
        } else {
            s.powf(q + 1.0) / (q + 1.0)
        }
    };
    let i0 = if m == 0.0 {
        if p > -1.0 {
            1.0 / (p + 1.0)
        } else {
            f64::INFINITY
        }
    } else {
        prim(p, m + 1.0) - prim(p, m)
    };
    let i1 = if m == 0.0 {
        1.0 / (p + 2.0)
    } else {
        (prim(p + 1.0, m + 1.0) - prim(p + 1.0, m)) - m * i0
    };
    (i0, i1)
}

/// `∫_lo^hi (A + B (σ - lo)) σ^p dσ` for `0 <= lo < hi`, exact for the
/// linear numerator. When `lo == 0` and `p <= -1` only the `B` part is
/// integrable and `A` must vanish.
pub fn linear_power_integral(a: f64, b: f64, lo: f64, hi: f64, p: f64) -> f64 {
    let h = hi - lo;
    if h <= 0.0 {
        return 0.0;
    }
    // Rescale to a unit cell: σ = h·s, s ∈ [lo/h, lo/h + 1].
    let m = lo / h;
    let scale = h.powf(p + 1.0);
    if m == 0.0 {
        let i1 = 1.0 / (p + 2.0);
        let i0 = if a == 0.0 {
            0.0
        } else {
            power_cell_moments(0.0, p).0
        };
        return scale * (a * i0 + b * h * i1);
    }
    let (i0, i1) = power_cell_moments(m, p);
    scale * (a * i0 + b * h * i1)
}

/// Incomplete beta integral `∫_0^x s^{p-1} (1-s)^{q-1} ds` for `0 <= x <= 1/2`.
pub fn incomplete_beta_lower(x: f64, p: f64, q: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    debug_assert!(x <= 0.5 + 1e-12);
    // (1-s)^{q-1} = Σ_k (1-q)_k / k! s^k
    let mut coef = 1.0;
    let mut xk = 1.0;
    let mut sum = 0.0;
    for k in 0..2000 {
        let term = coef * xk / (p + k as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
        coef *= (k as f64 + 1.0 - q) / (k as f64 + 1.0);
        xk *= x;
    }
    x.powf(p) * sum
}

/// Complete beta function.
pub fn beta(p: f64, q: f64) -> f64 {
    (ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)).exp()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre_unit(8);
        let s: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(x, w)| w * x.powi(15))
            .sum();
        assert_relative_eq!(s, 1.0 / 16.0, epsilon = 1e-15);
        assert_relative_eq!(r.weights.iter().sum::<f64>(), 1.0, epsilon = 2e-15);
        for (a, b) in r.nodes.iter().zip(r.nodes.iter().rev()) {
            assert!((*a - (1.0 - *b)).abs() < 1e-15);
        }
    }

    #[test]
    fn hermite_moments() {
        let r = gauss_hermite_normal(20);
        let m = |k: i32| -> f64 {
            r.nodes
                .iter()
                .zip(&r.weights)
                .map(|(x, w)| w * x.powi(k))
                .sum()
        };
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(m(2), 1.0, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0, epsilon = 1e-11);
        let c: f64 = r
            .nodes
            .iter()
            .zip(&r.weights)
            .map(|(x, w)| w * x.cos())
            .sum();
        assert_relative_eq!(c, (-0.5f64).exp(), epsilon = 1e-13);
    }

    #[test]
    fn cell_moments_match_between_regimes() {
        for &p in &[-1.6, -1.25, -0.3, 0.4] {
            for m in [7.0, 8.0, 20.0] {
                let (a0, a1) = power_cell_moments(m, p);
                let b0 = gl8_integrate(m, m + 1.0, |s| s.powf(p));
                let b1 = gl8_integrate(m, m + 1.0, |s| (s - m) * s.powf(p));
                assert_relative_eq!(a0, b0, max_relative = 1e-12);
                assert_relative_eq!(a1, b1, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn incomplete_beta_against_statrs() {
        for &(x, p, q) in &[(0.5, 0.75, 0.25), (0.01, 0.95, 0.05), (0.3, 1.75, 0.25)] {
            let reg = statrs::function::beta::beta_reg(p, q, x);
            assert_relative_eq!(
                incomplete_beta_lower(x, p, q),
                reg * beta(p, q),
                max_relative = 1e-10
            );
        }
    }
}
