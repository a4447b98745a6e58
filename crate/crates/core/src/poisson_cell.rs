//! Invariant density of a one-dimensional fast diffusion, the centered
//! Poisson (cell) problem `LΨ = -b`, and averaging against the invariant
//! measure. Multi-dimensional fast variables are covered by the analytic
//! isotropic OU case.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::coefficients::{BuiltinModel, SlowFastModel};
use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite_normal, gl4, GaussRule};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Default number of grid points of a numeric invariant measure.
pub const DEFAULT_POINTS: usize = 4001;
/// Default half-width of the truncated domain, in standard deviations.
pub const DEFAULT_WIDTH_SD: f64 = 8.0;
/// Relative density at the truncation points above which the domain is
/// considered too small.
pub const TAIL_TOL: f64 = 1e-8;

/// Invariant density `ρ∞ ∝ τ^{-2} exp(∫ 2f/τ²)` on a uniform grid over
/// `[-L, L]`, with a Gauss–Legendre rule per cell for accurate averages.
#[derive(Clone)]
pub struct InvariantMeasure {
    half_width: f64,
    h: f64,
    y: Vec<f64>,
    potential: Vec<f64>,
    density: Vec<f64>,
    shift: f64,
    norm: f64,
    qy: Vec<f64>,
    qw: Vec<f64>,
    f: ScalarFn,
    tau: ScalarFn,
}

impl std::fmt::Debug for InvariantMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvariantMeasure")
            .field("half_width", &self.half_width)
            .field("points", &self.y.len())
            .finish()
    }
}

/// `∫_a^b 2f/τ²` with the 4-point Gauss–Legendre rule.
fn drift_integral(f: &ScalarFn, tau: &ScalarFn, a: f64, b: f64) -> f64 {
    let r = gl4();
    let h = b - a;
    r.nodes
        .iter()
        .zip(&r.weights)
        .map(|(x, w)| {
            let y = a + h * x;
            let t = tau(y);
            w * 2.0 * f(y) / (t * t)
        })
        .sum::<f64>()
        * h
}

impl InvariantMeasure {
    fn build(f: ScalarFn, tau: ScalarFn, half_width: f64, n: usize) -> Result<Self> {
        if n < 3 || !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::invalid(
                "invariant density needs L > 0 and at least three points",
            ));
        }
        let h = 2.0 * half_width / (n - 1) as f64;
        let y: Vec<f64> = (0..n).map(|i| -half_width + i as f64 * h).collect();
        for &v in &y {
            let t = tau(v);
            if !(t * t > 1e-14) || !t.is_finite() {
                return Err(Error::Degenerate(format!("tau(y)^2 vanishes at y = {v}")));
            }
        }
        let mut potential = vec![0.0; n];
        for i in 0..n - 1 {
            potential[i + 1] = potential[i] + drift_integral(&f, &tau, y[i], y[i + 1]);
        }
        let logd = |i: usize| potential[i] - 2.0 * tau(y[i]).abs().ln();
        let shift = (0..n).map(logd).fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::Degenerate(
                "invariant density potential is not finite".into(),
            ));
        }
        let r = gl4();
        let mut qy = Vec::with_capacity((n - 1) * r.nodes.len());
        let mut qw = Vec::with_capacity((n - 1) * r.nodes.len());
        for i in 0..n - 1 {
            for (x, w) in r.nodes.iter().zip(&r.weights) {
                let yy = y[i] + h * x;
                let u = potential[i] + drift_integral(&f, &tau, y[i], yy);
                let t = tau(yy);
                qy.push(yy);
                qw.push(w * h * (u - 2.0 * t.abs().ln() - shift).exp());
            }
        }
        let norm: f64 = qw.iter().sum();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Degenerate(
                "invariant density cannot be normalized".into(),
            ));
        }
        for w in &mut qw {
            *w /= norm;
        }
        let density = (0..n).map(|i| (logd(i) - shift).exp() / norm).collect();
        Ok(InvariantMeasure {
            half_width,
            h,
            y,
            potential,
            density,
            shift,
            norm,
            qy,
            qw,
            f,
            tau,
        })
    }

    fn tail_ratio(&self) -> f64 {
        let max = self.density.iter().fold(0.0f64, |a, b| a.max(*b));
        self.density[0].max(self.density[self.density.len() - 1]) / max
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn grid(&self) -> &[f64] {
        &self.y
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// `ρ∞(y)`, zero outside the truncated domain.
    pub fn density_at(&self, y: f64) -> f64 {
        if !(y >= -self.half_width && y <= self.half_width) {
            return 0.0;
        }
        let i = (((y + self.half_width) / self.h) as usize).min(self.y.len() - 2);
        let u = self.potential[i] + drift_integral(&self.f, &self.tau, self.y[i], y);
        let t = (self.tau)(y);
        (u - 2.0 * t.abs().ln() - self.shift).exp() / self.norm
    }

    /// `∫ φ dμ` by per-cell Gauss–Legendre quadrature.
    pub fn integrate(&self, phi: impl Fn(f64) -> f64) -> f64 {
        self.qy.iter().zip(&self.qw).map(|(y, w)| w * phi(*y)).sum()
    }

    /// Quadrature nodes and normalized weights.
    pub fn quadrature(&self) -> (&[f64], &[f64]) {
        (&self.qy, &self.qw)
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|y| y)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|y| (y - m) * (y - m))
    }

    /// Mass of the measure below each grid node.
    pub fn cdf_nodes(&self) -> Vec<f64> {
        let q = gl4().nodes.len();
        let mut out = Vec::with_capacity(self.y.len());
        let mut acc = 0.0;
        out.push(0.0);
        for cell in self.qw.chunks(q) {
            acc += cell.iter().sum::<f64>();
            out.push(acc);
        }
        out
    }

    pub fn drift(&self) -> &ScalarFn {
        &self.f
    }

    pub fn diffusion(&self) -> &ScalarFn {
        &self.tau
    }
}

/// Invariant density of `dY = f(Y)dt + τ(Y)dW` on `[-L, L]`. Without an
/// explicit `L` the domain is sized to [`DEFAULT_WIDTH_SD`] standard
/// deviations around the origin (plus the mean offset).
pub fn invariant_density_1d(
    f: ScalarFn,
    tau: ScalarFn,
    half_width: Option<f64>,
    n: usize,
) -> Result<InvariantMeasure> {
    let mu = match half_width {
        Some(l) => InvariantMeasure::build(f, tau, l, n)?,
        None => {
            let mut l = 10.0;
            let mut trial = InvariantMeasure::build(f.clone(), tau.clone(), l, n)?;
            while trial.tail_ratio() >= TAIL_TOL && l < 1e6 {
                l *= 4.0;
                trial = InvariantMeasure::build(f.clone(), tau.clone(), l, n)?;
            }
            let width = trial.mean().abs() + DEFAULT_WIDTH_SD * trial.variance().sqrt();
            InvariantMeasure::build(f, tau, width, n)?
        }
    };
    let ratio = mu.tail_ratio();
    if ratio >= TAIL_TOL {
        return Err(Error::Truncation(format!(
            "density at ±{} is {ratio:.3e} of its maximum; enlarge the domain",
            mu.half_width
        )));
    }
    Ok(mu)
}

/// The measure against which fast-variable averages are taken.
#[derive(Clone, Debug)]
pub enum Measure {
    /// Numeric one-dimensional invariant density.
    Grid(Arc<InvariantMeasure>),
    /// Standard normal on `R^dim`, the invariant law of the isotropic OU
    /// process, integrated by tensor Gauss–Hermite.
    Gaussian { dim: usize, rule: GaussRule },
}

impl Measure {
    /// Point mass on `R^0`, for models without a fast variable.
    pub fn trivial() -> Self {
        Measure::Gaussian { dim: 0, rule: gauss_hermite_normal(1) }
    }

    pub fn gaussian(dim: usize) -> Result<Self> {
        if dim == 0 || dim > 4 {
            return Err(Error::invalid(
                "Gaussian averaging supports 1 to 4 fast dimensions",
            ));
        }
        let pts = match dim {
            1 => 48,
            2 => 32,
            3 => 20,
            _ => 14,
        };
        Ok(Measure::Gaussian {
            dim,
            rule: gauss_hermite_normal(pts),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::Grid(_) => 1,
            Measure::Gaussian { dim, .. } => *dim,
        }
    }

    /// Quadrature points `(y, weight)`, weights summing to one.
    pub fn points(&self) -> Vec<(Vec<f64>, f64)> {
        match self {
            Measure::Grid(m) => {
                m.qy.iter()
                    .zip(&m.qw)
                    .map(|(y, w)| (vec![*y], *w))
                    .collect()
            }
            Measure::Gaussian { dim, rule } => {
                let q = rule.nodes.len();
                let total = q.pow(*dim as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut y = Vec::with_capacity(*dim);
                        let mut w = 1.0;
                        for _ in 0..*dim {
                            y.push(rule.nodes[idx % q]);
                            w *= rule.weights[idx % q];
                            idx /= q;
                        }
                        (y, w)
                    })
                    .collect()
            }
        }
    }

    /// `∫ φ(y) dμ(y)` for a vector-valued `φ` of fixed output length.
    pub fn average(&self, phi: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for (y, w) in self.points() {
            let v = phi(&y);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += w * b;
            }
        }
        acc
    }

    /// One-dimensional `p`-quantiles for `p = k/bins`, `k = 0..=bins`.
    pub fn quantile_edges(&self, bins: usize) -> Result<Vec<f64>> {
        match self {
            Measure::Grid(m) => {
                let cdf = m.cdf_nodes();
                let mut edges = vec![m.y[0]];
                let mut i = 0;
                for k in 1..bins {
                    let p = k as f64 / bins as f64;
                    while cdf[i + 1] < p {
                        i += 1;
                    }
                    let frac = (p - cdf[i]) / (cdf[i + 1] - cdf[i]);
                    edges.push(m.y[i] + frac * m.h);
                }
                edges.push(m.y[m.y.len() - 1]);
                Ok(edges)
            }
            Measure::Gaussian { dim: 1, .. } => {
                use statrs::distribution::{ContinuousCDF, Normal};
                let nd = Normal::standard();
                let mut e: Vec<f64> = (1..bins)
                    .map(|k| nd.inverse_cdf(k as f64 / bins as f64))
                    .collect();
                e.insert(0, f64::NEG_INFINITY);
                e.push(f64::INFINITY);
                Ok(e)
            }
            Measure::Gaussian { .. } => Err(Error::invalid(
                "quantile bins need a one-dimensional fast variable",
            )),
        }
    }
}

/// `φ̄(x) = ∫ φ(x, y) dμ(y)`.
pub fn average_coeff(
    phi: impl Fn(&[f64], &[f64]) -> Vec<f64>,
    mu: &Measure,
    x: &[f64],
) -> Vec<f64> {
    mu.average(|y| phi(x, y))
}

/// Solution of the centered cell problem, with values in `R^m`.
#[derive(Debug, Clone)]
pub enum PoissonSolution {
    /// Grid solution for a scalar fast variable; per slow component the
    /// node values of `Ψ`, `Ψ'` and `Ψ''`.
    Numeric {
        lo: f64,
        h: f64,
        y: Vec<f64>,
        psi: Vec<Vec<f64>>,
        dpsi: Vec<Vec<f64>>,
        d2psi: Vec<Vec<f64>>,
        residual: f64,
    },
    /// `Ψ(y) = Λy/α` for `f = -αy`, `τ = √(2α)·Id`, `b = Λy`.
    AnalyticOu {
        alpha: f64,
        lambda: Vec<f64>,
        slow: usize,
        fast: usize,
    },
}

fn hermite(y0: f64, h: f64, v: &[f64], dv: &[f64], y: f64) -> f64 {
    let n = v.len();
    let x = ((y - y0) / h).clamp(0.0, (n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    let s = x - i as f64;
    let (h00, h10, h01, h11) = (
        (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s),
        s * (1.0 - s) * (1.0 - s),
        s * s * (3.0 - 2.0 * s),
        s * s * (s - 1.0),
    );
    h00 * v[i] + h10 * h * dv[i] + h01 * v[i + 1] + h11 * h * dv[i + 1]
}

impl PoissonSolution {
    pub fn zero(slow: usize, fast: usize) -> Self {
        PoissonSolution::AnalyticOu {
            alpha: 1.0,
            lambda: vec![0.0; slow * fast],
            slow,
            fast,
        }
    }

    pub fn ou(alpha: f64, lambda: Vec<f64>, slow: usize, fast: usize) -> Result<Self> {
        if !(alpha > 0.0) || lambda.len() != slow * fast {
            return Err(Error::invalid(
                "OU cell problem needs alpha > 0 and a slow×fast matrix",
            ));
        }
        Ok(PoissonSolution::AnalyticOu {
            alpha,
            lambda,
            slow,
            fast,
        })
    }

    pub fn slow_dim(&self) -> usize {
        match self {
            PoissonSolution::Numeric { psi, .. } => psi.len(),
            PoissonSolution::AnalyticOu { slow, .. } => *slow,
        }
    }

    pub fn fast_dim(&self) -> usize {
        match self {
            PoissonSolution::Numeric { .. } => 1,
            PoissonSolution::AnalyticOu { fast, .. } => *fast,
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, PoissonSolution::AnalyticOu { .. })
    }

    /// `Ψ(y)` into `out` (length `m`).
    pub fn psi(&self, y: &[f64], out: &mut [f64]) {
        match self {
            PoissonSolution::Numeric {
                lo, h, psi, dpsi, ..
            } => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = hermite(*lo, *h, &psi[c], &dpsi[c], y[0]);
                }
            }
            PoissonSolution::AnalyticOu {
                alpha,
                lambda,
                fast,
                ..
            } => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = lambda[c * fast..(c + 1) * fast]
                        .iter()
                        .zip(y)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / alpha;
                }
            }
        }
    }

    /// `∇Ψ(y)` into `out`, row-major `m × p`.
    pub fn grad_psi(&self, y: &[f64], out: &mut [f64]) {
        match self {
            PoissonSolution::Numeric {
                lo, h, dpsi, d2psi, ..
            } => {
                for (c, o) in out.iter_mut().enumerate() {
                    *o = hermite(*lo, *h, &dpsi[c], &d2psi[c], y[0]);
                }
            }
            PoissonSolution::AnalyticOu { alpha, lambda, .. } => {
                for (o, l) in out.iter_mut().zip(lambda) {
                    *o = l / alpha;
                }
            }
        }
    }

    /// Interior sup-norm of the generator residual (zero for analytic).
    pub fn residual(&self) -> f64 {
        match self {
            PoissonSolution::Numeric { residual, .. } => *residual,
            PoissonSolution::AnalyticOu { .. } => 0.0,
        }
    }
}

/// Solves `(τ²/2)Ψ'' + fΨ' = -b`, `∫Ψ dμ = 0` for each component of `b`
/// by double quadrature. `Ψ'` comes straight from the quadrature formula,
/// integrating `bρ` from whichever tail is nearer.
pub fn solve_poisson_1d(
    b: &[ScalarFn],
    mu: &InvariantMeasure,
    centering_tol: f64,
) -> Result<PoissonSolution> {
    let n = mu.y.len();
    let h = mu.h;
    let q = gl4().nodes.len();
    let cdf = mu.cdf_nodes();
    let f = &mu.f;
    let tau = &mu.tau;
    let mut psi_all = Vec::new();
    let mut dpsi_all = Vec::new();
    let mut d2_all = Vec::new();
    let mut residual = 0.0f64;
    for bc in b {
        let mean = mu.integrate(|y| bc(y));
        if mean.abs() > centering_tol {
            return Err(Error::Centering { mean });
        }
        let cell: Vec<f64> = (0..n - 1)
            .map(|i| {
                (0..q)
                    .map(|k| mu.qw[i * q + k] * bc(mu.qy[i * q + k]))
                    .sum()
            })
            .collect();
        let mut left = vec![0.0; n];
        for i in 0..n - 1 {
            left[i + 1] = left[i] + cell[i];
        }
        let mut right = vec![0.0; n];
        for i in (0..n - 1).rev() {
            right[i] = right[i + 1] + cell[i];
        }
        let dpsi: Vec<f64> = (0..n)
            .map(|i| {
                let t = tau(mu.y[i]);
                let coef = 2.0 / (t * t * mu.density[i]);
                if cdf[i] <= 0.5 {
                    -coef * left[i]
                } else {
                    coef * right[i]
                }
            })
            .collect();
        if dpsi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Truncation(
                "cell-problem gradient overflowed in the tails".into(),
            ));
        }
        let d2: Vec<f64> = (0..n)
            .map(|i| {
                let y = mu.y[i];
                let t = tau(y);
                -2.0 * (bc(y) + f(y) * dpsi[i]) / (t * t)
            })
            .collect();
        // Fourth-order cumulative integration of Ψ'.
        let mut psi = vec![0.0; n];
        for i in 0..n - 1 {
            let inc = if i >= 1 && i + 2 < n {
                h / 24.0 * (-dpsi[i - 1] + 13.0 * dpsi[i] + 13.0 * dpsi[i + 1] - dpsi[i + 2])
            } else {
                h / 2.0 * (dpsi[i] + dpsi[i + 1]) + h * h / 12.0 * (d2[i] - d2[i + 1])
            };
            psi[i + 1] = psi[i] + inc;
        }
        // Trapezoid on nodes is spectrally accurate for these decaying integrands.
        let (mut num, mut den) = (0.0, 0.0);
        for (i, (p, rho)) in psi.iter().zip(&mu.density).enumerate() {
            let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
            num += w * p * rho;
            den += w * rho;
        }
        let c = num / den;
        for v in &mut psi {
            *v -= c;
        }
        for i in 1..n - 1 {
            let y = mu.y[i];
            if y.abs() > 0.5 * mu.half_width {
                continue;
            }
            let t = tau(y);
            let r = 0.5 * t * t * (dpsi[i + 1] - dpsi[i - 1]) / (2.0 * h) + f(y) * dpsi[i] + bc(y);
            residual = residual.max(r.abs());
        }
        psi_all.push(psi);
        dpsi_all.push(dpsi);
        d2_all.push(d2);
    }
    Ok(PoissonSolution::Numeric {
        lo: mu.y[0],
        h,
        y: mu.y.clone(),
        psi: psi_all,
        dpsi: dpsi_all,
        d2psi: d2_all,
        residual,
    })
}

/// `μ`-average of `QQᵀ` at one slow state, with its smallest eigenvalue.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveQ {
    pub qqt_bar: Vec<f64>,
    pub dim: usize,
    pub min_eigenvalue: f64,
    pub nondegenerate: bool,
}

/// `Q(x, y) = ∇Ψ(y) τ(y) + σ2(x, y)`, row-major `m × ℓ`.
pub fn q_matrix(
    model: &dyn SlowFastModel,
    psol: &PoissonSolution,
    x: &[f64],
    y: &[f64],
) -> Vec<f64> {
    let d = model.dims();
    let (m, p, l) = (d.slow, d.fast, d.bm);
    let mut q = vec![0.0; m * l];
    if l == 0 {
        return q;
    }
    model.sigma2(x, y, &mut q);
    if p > 0 {
        let mut gp = vec![0.0; m * p];
        psol.grad_psi(y, &mut gp);
        let mut tau = vec![0.0; p * l];
        model.tau(y, &mut tau);
        for r in 0..m {
            for c in 0..l {
                q[r * l + c] += (0..p).map(|k| gp[r * p + k] * tau[k * l + c]).sum::<f64>();
            }
        }
    }
    q
}

/// Smallest eigenvalue of a symmetric row-major matrix.
pub fn min_eigenvalue(a: &[f64], dim: usize) -> f64 {
    if dim == 0 {
        return f64::INFINITY;
    }
    let m = DMatrix::from_row_slice(dim, dim, a);
    SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `QQᵀ`-bar at `x` and its non-degeneracy flag (`min eigenvalue > tol`).
pub fn effective_q(
    model: &dyn SlowFastModel,
    psol: &PoissonSolution,
    mu: &Measure,
    x: &[f64],
    tol: f64,
) -> EffectiveQ {
    let d = model.dims();
    let (m, l) = (d.slow, d.bm);
    let avg = mu.average(|y| {
        let q = q_matrix(model, psol, x, y);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = (0..l).map(|k| q[i * l + k] * q[j * l + k]).sum();
            }
        }
        out
    });
    let avg = if avg.is_empty() {
        vec![0.0; m * m]
    } else {
        avg
    };
    let min = min_eigenvalue(&avg, m);
    EffectiveQ {
        qqt_bar: avg,
        dim: m,
        min_eigenvalue: min,
        nondegenerate: min > tol,
    }
}

/// Invariant measure and cell-problem solution of a built-in model: the
/// analytic OU family in any fast dimension, a numeric solve for a scalar
/// fast variable, and a point mass when there is no fast variable.
pub fn prepare_fast(model: &BuiltinModel, centering_tol: f64, points: usize) -> Result<(Measure, PoissonSolution)> {
    let d = model.dims();
    if d.fast == 0 {
        return Ok((Measure::trivial(), PoissonSolution::zero(d.slow, 0)));
    }
    if let Some((alpha, lambda)) = model.as_ou() {
        return Ok((Measure::gaussian(d.fast)?, PoissonSolution::ou(alpha, lambda, d.slow, d.fast)?));
    }
    if d.fast != 1 {
        return Err(Error::invalid("multi-dimensional fast variables are supported for the isotropic OU family only"));
    }
    let shared = Arc::new(model.clone());
    let m1 = shared.clone();
    let f: ScalarFn = Arc::new(move |y| {
        let mut o = [0.0];
        m1.f(&[y], &mut o);
        o[0]
    });
    let m2 = shared.clone();
    let bm = d.bm;
    let tau: ScalarFn = Arc::new(move |y| {
        let mut o = vec![0.0; bm];
        m2.tau(&[y], &mut o);
        o.iter().map(|v| v * v).sum::<f64>().sqrt()
    });
    let mu = invariant_density_1d(f, tau, None, points)?;
    let b: Vec<ScalarFn> = (0..d.slow)
        .map(|c| {
            let m = shared.clone();
            let slow = d.slow;
            Arc::new(move |y: f64| {
                let mut o = vec![0.0; slow];
                m.b(&[y], &mut o);
                o[c]
            }) as ScalarFn
        })
        .collect();
    let psol = solve_poisson_1d(&b, &mu, centering_tol)?;
    Ok((Measure::Grid(Arc::new(mu)), psol))
}
