//! Large-deviation rate functionals of the slow component along a grid path
//! `φ`, for `H ∈ (1/2, 1)` and the two `H = 1/2` comparison forms.
//!
//! Every evaluator forms the residual drift `r = φ̇ - c̄(φ) - ∇Ψg̅(φ)` and
//! measures it against the averaged noise. `φ̇` is taken by centered
//! differences with second-order one-sided ends.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cameron_martin::{l2_norm, HurstContext};
use crate::coefficients::SlowFastModel;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::GridPath;
use crate::linalg::{min_singular, solve_small, sym_extremes, SpdFactor};
use crate::poisson_cell::{q_matrix, Measure, PoissonSolution};

/// Tolerance on singular values and eigenvalues below which a coefficient is
/// treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Largest acceptable condition estimate of the assembled Gram operator.
pub const MAX_CONDITION: f64 = 1e8;
/// Default number of `μ`-quantile bins spanning the `u2` basis.
pub const DEFAULT_U2_BINS: usize = 64;

/// Averaged coefficients at one slow state. Matrices are row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalCoeffs {
    /// `c̄(x)`, length `m`.
    pub cbar: Vec<f64>,
    /// `∇Ψg̅(x)`, length `m`.
    pub grad_psi_g: Vec<f64>,
    /// `σ̄1(x)`, `m × k`.
    pub sigma1_bar: Vec<f64>,
    /// `μ`-average of `σ1σ1ᵀ`, `m × m`.
    pub sigma1_sq_bar: Vec<f64>,
    /// `μ`-average of `QQᵀ`, `m × m`.
    pub qqt_bar: Vec<f64>,
}

/// Source of averaged coefficients for the limiting slow dynamics.
pub trait LimitCoefficients: Send + Sync {
    /// Slow dimension `m`.
    fn slow(&self) -> usize;
    /// fBm dimension `k`.
    fn fbm(&self) -> usize;
    fn at(&self, x: &[f64]) -> LocalCoeffs;
}

/// Averages a [`SlowFastModel`] against a fast invariant measure, using a
/// cell-problem solution for the `∇Ψ` terms.
pub struct AveragedModel {
    model: Arc<dyn SlowFastModel>,
    psol: Arc<PoissonSolution>,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl AveragedModel {
    pub fn new(
        model: Arc<dyn SlowFastModel>,
        mu: &Measure,
        psol: Arc<PoissonSolution>,
    ) -> Result<Self> {
        let d = model.dims();
        if mu.dim() != d.fast {
            return Err(Error::invalid(
                "measure dimension differs from the fast dimension",
            ));
        }
        if psol.slow_dim() != d.slow || psol.fast_dim() != d.fast {
            return Err(Error::invalid("cell-problem solution has the wrong shape"));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (y, w) in mu.points() {
            points.extend(y);
            weights.push(w);
        }
        Ok(AveragedModel {
            model,
            psol,
            points,
            weights,
        })
    }

    /// `Q(x, y)` for `y` anywhere, row-major `m × ℓ`.
    pub fn q(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        q_matrix(self.model.as_ref(), &self.psol, x, y)
    }

    /// Quadrature points and weights of the underlying measure.
    pub fn quadrature(&self) -> (&[f64], &[f64]) {
        (&self.points, &self.weights)
    }

    pub fn model(&self) -> &Arc<dyn SlowFastModel> {
        &self.model
    }
}

impl LimitCoefficients for AveragedModel {
    fn slow(&self) -> usize {
        self.model.dims().slow
    }

    fn fbm(&self) -> usize {
        self.model.dims().fbm
    }

    fn at(&self, x: &[f64]) -> LocalCoeffs {
        let d = self.model.dims();
        let (m, p, k, l) = (d.slow, d.fast, d.fbm, d.bm);
        let mut out = LocalCoeffs {
            cbar: vec![0.0; m],
            grad_psi_g: vec![0.0; m],
            sigma1_bar: vec![0.0; m * k],
            sigma1_sq_bar: vec![0.0; m * m],
            qqt_bar: vec![0.0; m * m],
        };
        let mut c = vec![0.0; m];
        let mut s1 = vec![0.0; m * k];
        let mut g = vec![0.0; p];
        let mut gp = vec![0.0; m * p];
        for (i, w) in self.weights.iter().enumerate() {
            let y = &self.points[i * p..(i + 1) * p];
            self.model.c(x, y, &mut c);
            self.model.sigma1(x, y, &mut s1);
            self.model.g(x, y, &mut g);
            self.psol.grad_psi(y, &mut gp);
            let q = q_matrix(self.model.as_ref(), &self.psol, x, y);
            for a in 0..m {
                out.cbar[a] += w * c[a];
                out.grad_psi_g[a] += w * (0..p).map(|j| gp[a * p + j] * g[j]).sum::<f64>();
                for b in 0..k {
                    out.sigma1_bar[a * k + b] += w * s1[a * k + b];
                }
                for a2 in 0..m {
                    out.sigma1_sq_bar[a * m + a2] +=
                        w * (0..k).map(|b| s1[a * k + b] * s1[a2 * k + b]).sum::<f64>();
                    out.qqt_bar[a * m + a2] +=
                        w * (0..l).map(|b| q[a * l + b] * q[a2 * l + b]).sum::<f64>();
                }
            }
        }
        out
    }
}

type Field = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Coefficients given directly as functions of the slow state.
#[derive(Clone)]
pub struct ClosureCoefficients {
    slow: usize,
    fbm: usize,
    cbar: Field,
    grad_psi_g: Option<Field>,
    sigma1_bar: Field,
    sigma1_sq_bar: Option<Field>,
    qqt_bar: Option<Field>,
}

impl ClosureCoefficients {
    /// `σ1σ1ᵀ`-bar defaults to `σ̄1σ̄1ᵀ` and the remaining terms to zero.
    pub fn new(
        slow: usize,
        fbm: usize,
        cbar: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        sigma1_bar: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        ClosureCoefficients {
            slow,
            fbm,
            cbar: Arc::new(cbar),
            grad_psi_g: None,
            sigma1_bar: Arc::new(sigma1_bar),
            sigma1_sq_bar: None,
            qqt_bar: None,
        }
    }

    pub fn with_grad_psi_g(
        mut self,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_psi_g = Some(Arc::new(f));
        self
    }

    pub fn with_sigma1_sq_bar(
        mut self,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.sigma1_sq_bar = Some(Arc::new(f));
        self
    }

    pub fn with_qqt_bar(mut self, f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.qqt_bar = Some(Arc::new(f));
        self
    }
}

impl LimitCoefficients for ClosureCoefficients {
    fn slow(&self) -> usize {
        self.slow
    }

    fn fbm(&self) -> usize {
        self.fbm
    }

    fn at(&self, x: &[f64]) -> LocalCoeffs {
        let (m, k) = (self.slow, self.fbm);
        let s1 = (self.sigma1_bar)(x);
        let sq = match &self.sigma1_sq_bar {
            Some(f) => f(x),
            None => {
                let mut o = vec![0.0; m * m];
                for a in 0..m {
                    for b in 0..m {
                        o[a * m + b] = (0..k).map(|j| s1[a * k + j] * s1[b * k + j]).sum();
                    }
                }
                o
            }
        };
        LocalCoeffs {
            cbar: (self.cbar)(x),
            grad_psi_g: self
                .grad_psi_g
                .as_ref()
                .map_or_else(|| vec![0.0; m], |f| f(x)),
            sigma1_bar: s1,
            sigma1_sq_bar: sq,
            qqt_bar: self
                .qqt_bar
                .as_ref()
                .map_or_else(|| vec![0.0; m * m], |f| f(x)),
        }
    }
}

/// The averaged drift and noise of the limiting slow dynamics, plus the
/// optional pieces needed to resolve `u2` over the fast space.
#[derive(Clone)]
pub struct LimitDrift {
    coeffs: Arc<dyn LimitCoefficients>,
    averaged: Option<Arc<AveragedModel>>,
    measure: Option<Measure>,
    x0: Option<Vec<f64>>,
    exec: Execution,
}

impl std::fmt::Debug for LimitDrift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LimitDrift")
            .field("slow", &self.coeffs.slow())
            .field("fbm", &self.coeffs.fbm())
            .field("x0", &self.x0)
            .finish()
    }
}

impl LimitDrift {
    pub fn new(coeffs: impl LimitCoefficients + 'static) -> Self {
        LimitDrift {
            coeffs: Arc::new(coeffs),
            averaged: None,
            measure: None,
            x0: None,
            exec: Execution::default(),
        }
    }

    /// Averages `model` against `mu` using the cell-problem solution `psol`.
    pub fn from_model(
        model: Arc<dyn SlowFastModel>,
        mu: Measure,
        psol: Arc<PoissonSolution>,
    ) -> Result<Self> {
        let avg = Arc::new(AveragedModel::new(model, &mu, psol)?);
        Ok(LimitDrift {
            coeffs: avg.clone(),
            averaged: Some(avg),
            measure: Some(mu),
            x0: None,
            exec: Execution::default(),
        })
    }

    /// Requires evaluated paths to start at `x0`.
    pub fn with_start(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn slow(&self) -> usize {
        self.coeffs.slow()
    }

    pub fn fbm(&self) -> usize {
        self.coeffs.fbm()
    }

    pub fn at(&self, x: &[f64]) -> LocalCoeffs {
        self.coeffs.at(x)
    }

    pub fn cbar(&self, x: &[f64]) -> Vec<f64> {
        self.coeffs.at(x).cbar
    }

    pub fn sigma1_bar(&self, x: &[f64]) -> Vec<f64> {
        self.coeffs.at(x).sigma1_bar
    }

    pub fn qqt_bar(&self, x: &[f64]) -> Vec<f64> {
        self.coeffs.at(x).qqt_bar
    }

    /// `u2 ↦ ∫ Q(x, y) u2(y) dμ(y)` for a `u2` given as a function of `y`.
    pub fn q_bar_apply(&self, x: &[f64], u2: impl Fn(&[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
        let (avg, mu) = self.fast_parts()?;
        let l = avg.model().dims().bm;
        let m = self.slow();
        Ok(mu.average(|y| {
            let q = avg.q(x, y);
            let u = u2(y);
            (0..m)
                .map(|a| (0..l).map(|b| q[a * l + b] * u[b]).sum())
                .collect()
        }))
    }

    fn fast_parts(&self) -> Result<(&AveragedModel, &Measure)> {
        match (&self.averaged, &self.measure) {
            (Some(a), Some(m)) => Ok((a, m)),
            _ => Err(Error::invalid(
                "this limit drift carries no fast-variable model",
            )),
        }
    }

    /// Coefficients at every node of `phi`.
    pub fn along(&self, phi: &GridPath) -> Vec<LocalCoeffs> {
        self.exec.map(phi.len(), |i| self.coeffs.at(phi.row(i)))
    }

    fn check_path(&self, phi: &GridPath) -> Result<()> {
        if phi.dim() != self.slow() {
            return Err(Error::invalid(format!(
                "path has dimension {}, slow space has {}",
                phi.dim(),
                self.slow()
            )));
        }
        if phi.len() < 3 || !phi.is_finite() {
            return Err(Error::invalid(
                "rate evaluation needs a finite path with at least three points",
            ));
        }
        if let Some(x0) = &self.x0 {
            let scale = x0.iter().fold(1.0f64, |a, b| a.max(b.abs()));
            if phi
                .row(0)
                .iter()
                .zip(x0)
                .any(|(a, b)| (a - b).abs() > 1e-9 * scale)
            {
                return Err(Error::invalid("path does not start at x0"));
            }
        }
        Ok(())
    }
}

/// Derivative of a grid path: centered differences inside, second-order
/// one-sided differences at both ends.
pub fn path_derivative(phi: &GridPath) -> Result<GridPath> {
    if phi.len() < 3 {
        return Err(Error::invalid(
            "differentiation needs at least three points",
        ));
    }
    let h = phi.dt();
    phi.map_components(|v| {
        let n = v.len();
        Ok((0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
                } else if i + 1 == n {
                    (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
                } else {
                    (v[i + 1] - v[i - 1]) / (2.0 * h)
                }
            })
            .collect())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Explicit,
    General,
    FwHalf,
    TildeHalf,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(Method::Explicit),
            "general" => Ok(Method::General),
            "fw-half" => Ok(Method::FwHalf),
            "tilde-half" => Ok(Method::TildeHalf),
            _ => Err(Error::invalid(format!("unknown rate method `{s}`"))),
        }
    }
}

/// Optimal control attaining the rate.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Minimizer {
    /// `u1 = K̇_H^{-1} ψ` (on the grid, `k` components).
    Explicit { u1: GridPath },
    /// `u1` on the grid and the multiplier `w` with `u2*(t, y) = Qᵀ(φ_t, y) w(t)`.
    General { u1: GridPath, w: GridPath },
    /// Pointwise multiplier of the `H = 1/2` quadratic forms.
    Feedback { w: GridPath },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub condition: Option<f64>,
    pub min_singular: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub residual: Option<f64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateEvalResult {
    /// `S ≥ 0`, infinite when `φ` is not admissible.
    pub value: f64,
    pub method: Method,
    pub minimizer: Option<Minimizer>,
    pub diagnostics: Diagnostics,
}

impl RateEvalResult {
    fn infinite(method: Method, reason: String, diagnostics: Diagnostics) -> Self {
        RateEvalResult {
            value: f64::INFINITY,
            method,
            minimizer: None,
            diagnostics: Diagnostics {
                reason: Some(reason),
                ..diagnostics
            },
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

fn check_context(phi: &GridPath, ctx: &HurstContext) -> Result<()> {
    if phi.len() != ctx.n() || phi.t0() != 0.0 || ((phi.dt() - ctx.dt()) / ctx.dt()).abs() > 1e-12 {
        return Err(Error::invalid("path grid does not match the Hurst context"));
    }
    Ok(())
}

fn residual_drift(phi: &GridPath, local: &[LocalCoeffs], with_psi: bool) -> Result<GridPath> {
    let dphi = path_derivative(phi)?;
    let m = phi.dim();
    let mut r = dphi.into_values();
    for (i, c) in local.iter().enumerate() {
        for a in 0..m {
            r[i * m + a] -= c.cbar[a] + if with_psi { c.grad_psi_g[a] } else { 0.0 };
        }
    }
    phi.with_values(m, r)
}

fn trapezoid_weight(i: usize, n: usize, dt: f64) -> f64 {
    if i == 0 || i + 1 == n {
        0.5 * dt
    } else {
        dt
    }
}

/// `S^H(φ) = ½‖K̇_H^{-1} ψ‖²` with `ψ = σ̄1(φ)^{-1}(φ̇ - c̄(φ))`, valid when
/// `b = σ2 = 0` and `σ̄1` is square and invertible along `φ`.
pub fn eval_rate_explicit(
    phi: &GridPath,
    drift: &LimitDrift,
    ctx: &HurstContext,
) -> Result<RateEvalResult> {
    drift.check_path(phi)?;
    check_context(phi, ctx)?;
    let local = drift.along(phi);
    explicit_from_local(phi, &local, ctx, drift.exec)
}

/// `ψ = σ̄1(φ)^{-1}(φ̇ - c̄(φ))` on the grid, with the smallest singular value seen.
pub fn explicit_psi(phi: &GridPath, local: &[LocalCoeffs]) -> Result<(GridPath, f64)> {
    let m = phi.dim();
    let k = local[0].sigma1_bar.len() / m.max(1);
    if k != m {
        return Err(Error::invalid(
            "the explicit rate needs a square averaged sigma1",
        ));
    }
    let r = residual_drift(phi, local, false)?;
    let mut smin = f64::INFINITY;
    let mut psi = Vec::with_capacity(phi.len() * m);
    for (i, c) in local.iter().enumerate() {
        let s = min_singular(&c.sigma1_bar, m, m);
        smin = smin.min(s);
        if !(s > DEGENERACY_TOL) {
            return Err(Error::Degenerate(format!(
                "averaged sigma1 is singular at t = {}",
                phi.time(i)
            )));
        }
        psi.extend(solve_small(&c.sigma1_bar, m, r.row(i))?);
    }
    Ok((phi.with_values(m, psi)?, smin))
}

fn explicit_from_local(
    phi: &GridPath,
    local: &[LocalCoeffs],
    ctx: &HurstContext,
    exec: Execution,
) -> Result<RateEvalResult> {
    let (psi, smin) = explicit_psi(phi, local)?;
    let diag = Diagnostics {
        min_singular: Some(smin),
        ..Default::default()
    };
    let u1 = psi.map_components(|c| Ok(ctx.kdot_inverse_scalar(c, exec)))?;
    if !u1.is_finite() {
        return Ok(RateEvalResult::infinite(
            Method::Explicit,
            "K̇_H^{-1}ψ diverges".into(),
            diag,
        ));
    }
    let value = 0.5 * l2_norm(&u1).powi(2);
    Ok(RateEvalResult {
        value,
        method: Method::Explicit,
        minimizer: Some(Minimizer::Explicit { u1 }),
        diagnostics: diag,
    })
}

/// Discretized effective-diffusivity operator `𝒬_H(φ)`.
///
/// Unknowns are `u1` at the grid nodes (`n·k`) followed by the `u2`
/// coefficients (`n·B·ℓ`) in an `L²(μ)`-orthonormal basis of `B`
/// piecewise-constant `μ`-quantile bins; outputs are the `m` components at
/// every node. `L²` norms use trapezoid weights in time.
#[derive(Debug, Clone)]
pub struct QhOperator {
    pub matrix: DMatrix<f64>,
    pub row_weights: Vec<f64>,
    pub col_weights: Vec<f64>,
    pub u1_len: usize,
}

impl QhOperator {
    /// `𝒬_H(φ)[u]` for stacked unknowns `u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (&self.matrix * nalgebra::DVector::from_column_slice(u))
            .iter()
            .copied()
            .collect()
    }

    /// Operator norm from weighted `L²` to weighted `L²` by power iteration.
    pub fn operator_norm(&self) -> f64 {
        let rw: Vec<f64> = self.row_weights.iter().map(|w| w.sqrt()).collect();
        let cw: Vec<f64> = self.col_weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        let mut b = self.matrix.clone();
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= rw[i];
        }
        for (j, mut col) in b.column_iter_mut().enumerate() {
            col *= cw[j];
        }
        let bt = b.transpose();
        let mut x = nalgebra::DVector::from_element(b.ncols(), 1.0).normalize();
        let mut s = 0.0;
        for _ in 0..200 {
            let y = &bt * (&b * &x);
            let nrm = y.norm();
            if nrm == 0.0 {
                return 0.0;
            }
            let done = ((nrm - s) / nrm).abs() < 1e-12;
            s = nrm;
            x = y / nrm;
            if done {
                break;
            }
        }
        s.sqrt()
    }
}

/// Assembles [`QhOperator`] with `bins` quantile bins for `u2` (one-dimensional
/// fast variable). With no fast model attached, only the `u1` block is built.
pub fn assemble_qh(
    phi: &GridPath,
    drift: &LimitDrift,
    ctx: &HurstContext,
    bins: usize,
) -> Result<QhOperator> {
    drift.check_path(phi)?;
    check_context(phi, ctx)?;
    let n = phi.len();
    let m = phi.dim();
    let k = drift.fbm();
    let local = drift.along(phi);
    let parts = drift.fast_parts().ok();
    let (ell, edges) = match parts {
        Some((avg, mu)) if avg.model().dims().bm > 0 => {
            if mu.dim() != 1 {
                return Err(Error::invalid(
                    "u2 quantile bins need a one-dimensional fast variable",
                ));
            }
            (avg.model().dims().bm, mu.quantile_edges(bins)?)
        }
        _ => (0, Vec::new()),
    };
    let nb = if ell > 0 { bins } else { 0 };
    let u1_len = n * k;
    let cols = u1_len + n * nb * ell;
    let mut a = DMatrix::<f64>::zeros(n * m, cols);
    for i in 1..n {
        let row = ctx.kdot_row(i);
        let sc = ctx.kdot_scale(i);
        let s1 = &local[i].sigma1_bar;
        for (j, w) in row.iter().enumerate() {
            for r in 0..m {
                for c in 0..k {
                    a[(i * m + r, j * k + c)] += sc * w * s1[r * k + c];
                }
            }
        }
    }
    if let Some((avg, _)) = parts.filter(|_| ell > 0) {
        let (pts, wts) = avg.quadrature();
        for i in 0..n {
            let x = phi.row(i);
            let mut acc = vec![0.0; nb * m * ell];
            let mut mass = vec![0.0; nb];
            for (y, w) in pts.iter().zip(wts) {
                let b = edges.partition_point(|e| e <= y).clamp(1, nb) - 1;
                mass[b] += w;
                let q = avg.q(x, std::slice::from_ref(y));
                for (t, v) in acc[b * m * ell..(b + 1) * m * ell].iter_mut().zip(&q) {
                    *t += w * v;
                }
            }
            for b in 0..nb {
                let norm = if mass[b] > 0.0 { mass[b].sqrt() } else { 1.0 };
                for r in 0..m {
                    for c in 0..ell {
                        a[(i * m + r, u1_len + (i * nb + b) * ell + c)] =
                            acc[(b * m + r) * ell + c] / norm;
                    }
                }
            }
        }
    }
    let dt = phi.dt();
    let row_weights = (0..n * m).map(|r| trapezoid_weight(r / m, n, dt)).collect();
    let col_weights = (0..cols)
        .map(|c| {
            let node = if c < u1_len {
                c / k.max(1)
            } else {
                (c - u1_len) / (nb * ell)
            };
            trapezoid_weight(node, n, dt)
        })
        .collect();
    Ok(QhOperator {
        matrix: a,
        row_weights,
        col_weights,
        u1_len,
    })
}

/// `S^H(φ) = ½⟨r, (𝒬_H𝒬_H^*)^{-1} r⟩` with `r = φ̇ - c̄ - ∇Ψg̅`.
///
/// The `u1` part of the Gram operator is assembled from the nodal `K̇_H`
/// weights; the `u2` part reduces to `QQᵀ`-bar node by node. The node at
/// `t = 0` is constrained only when `QQᵀ`-bar is non-degenerate there, since
/// `K̇_H u1` vanishes at the origin.
pub fn eval_rate_general(
    phi: &GridPath,
    drift: &LimitDrift,
    ctx: &HurstContext,
) -> Result<RateEvalResult> {
    drift.check_path(phi)?;
    check_context(phi, ctx)?;
    let local = drift.along(phi);
    general_from_local(phi, &local, ctx, drift.fbm(), drift.exec)
}

fn general_from_local(
    phi: &GridPath,
    local: &[LocalCoeffs],
    ctx: &HurstContext,
    k: usize,
    exec: Execution,
) -> Result<RateEvalResult> {
    let n = phi.len();
    let m = phi.dim();
    let dt = phi.dt();
    let r = residual_drift(phi, local, true)?;
    // Non-degeneracy of σ̄1σ̄1ᵀ + QQᵀ-bar at every constrained node.
    let mut min_eig = f64::INFINITY;
    let mut qq_min0 = 0.0;
    for (i, c) in local.iter().enumerate() {
        let (lo, _) = sym_extremes(&c.qqt_bar, m);
        if i == 0 {
            qq_min0 = lo;
            continue;
        }
        let mut s = c.qqt_bar.clone();
        for a in 0..m {
            for b in 0..m {
                s[a * m + b] += (0..k)
                    .map(|j| c.sigma1_bar[a * k + j] * c.sigma1_bar[b * k + j])
                    .sum::<f64>();
            }
        }
        min_eig = min_eig.min(sym_extremes(&s, m).0);
    }
    if !(min_eig > DEGENERACY_TOL) {
        return Err(Error::Degenerate(format!(
            "averaged noise is degenerate along the path (min eigenvalue {min_eig:.3e})"
        )));
    }
    let first = if qq_min0 > DEGENERACY_TOL { 0 } else { 1 };
    let nodes: Vec<usize> = (first..n).collect();
    let nn = nodes.len();
    let d: Vec<f64> = (0..n).map(|j| trapezoid_weight(j, n, dt)).collect();

    // Scalar kernel K_{ii'} = Σ_j ω_ij ω_i'j / d_j over nodes i, i' ≥ 1.
    let mut omega = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let sc = ctx.kdot_scale(i);
        for (j, w) in ctx.kdot_row(i).iter().enumerate() {
            omega[(i, j)] = sc * w / d[j].sqrt();
        }
    }
    let kern = &omega * omega.transpose();
    let dim = nn * m;
    let mut g = DMatrix::<f64>::zeros(dim, dim);
    for (p, &i) in nodes.iter().enumerate() {
        for (q, &i2) in nodes.iter().enumerate() {
            let kv = kern[(i, i2)];
            if kv != 0.0 {
                let (s, s2) = (&local[i].sigma1_bar, &local[i2].sigma1_bar);
                for a in 0..m {
                    for b in 0..m {
                        let ss: f64 = (0..k).map(|c| s[a * k + c] * s2[b * k + c]).sum();
                        g[(p * m + a, q * m + b)] = d[i] * d[i2] * kv * ss;
                    }
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                g[(p * m + a, p * m + b)] += d[i] * local[i].qqt_bar[a * m + b];
            }
        }
    }
    let rhs: Vec<f64> = nodes
        .iter()
        .flat_map(|&i| {
            let di = d[i];
            r.row(i).iter().map(move |v| v * di)
        })
        .collect();
    let factor = SpdFactor::new(g.clone())?;
    let cond = factor.condition_estimate(&g, 60);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let wv = factor.solve(&rhs);
    let value: f64 = 0.5 * wv.iter().zip(&rhs).map(|(a, b)| a * b).sum::<f64>();
    let resid = {
        let gw = &g * nalgebra::DVector::from_column_slice(&wv);
        gw.iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / rhs.iter().fold(f64::MIN_POSITIVE, |a, b| a.max(b.abs()))
    };
    let mut w = vec![0.0; n * m];
    for (p, &i) in nodes.iter().enumerate() {
        w[i * m..(i + 1) * m].copy_from_slice(&wv[p * m..(p + 1) * m]);
    }
    // u1 = D^{-1} Aᵀ W w.
    let u1: Vec<f64> = {
        let cols: Vec<Vec<f64>> = exec.map(n, |j| {
            let mut out = vec![0.0; k];
            for &i in nodes.iter().filter(|&&i| i >= j.max(1)) {
                let om = ctx.kdot_scale(i) * ctx.kdot_row(i)[j];
                let s = &local[i].sigma1_bar;
                for c in 0..k {
                    out[c] += d[i] * om * (0..m).map(|a| s[a * k + c] * w[i * m + a]).sum::<f64>();
                }
            }
            out.iter().map(|v| v / d[j]).collect()
        });
        cols.concat()
    };
    let diagnostics = Diagnostics {
        condition: Some(cond),
        min_eigenvalue: Some(min_eig),
        residual: Some(resid),
        ..Default::default()
    };
    Ok(RateEvalResult {
        value: value.max(0.0),
        method: Method::General,
        minimizer: Some(Minimizer::General {
            u1: GridPath::new(
                phi.t0(),
                dt,
                k.max(1),
                if k == 0 { vec![0.0; n] } else { u1 },
            )?,
            w: phi.with_values(m, w)?,
        }),
        diagnostics,
    })
}

fn quadratic_rate(
    phi: &GridPath,
    r: &GridPath,
    q: impl Fn(usize) -> Vec<f64>,
    method: Method,
) -> Result<RateEvalResult> {
    let n = phi.len();
    let m = phi.dim();
    let mut value = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut w = Vec::with_capacity(n * m);
    for i in 0..n {
        let qi = q(i);
        let lo = sym_extremes(&qi, m).0;
        min_eig = min_eig.min(lo);
        if !(lo > DEGENERACY_TOL) {
            return Err(Error::Degenerate(format!(
                "quadratic form is degenerate at t = {}",
                phi.time(i)
            )));
        }
        let wi = solve_small(&qi, m, r.row(i))?;
        value += trapezoid_weight(i, n, phi.dt())
            * wi.iter().zip(r.row(i)).map(|(a, b)| a * b).sum::<f64>();
        w.extend(wi);
    }
    Ok(RateEvalResult {
        value: 0.5 * value,
        method,
        minimizer: Some(Minimizer::Feedback {
            w: phi.with_values(m, w)?,
        }),
        diagnostics: Diagnostics {
            min_eigenvalue: Some(min_eig),
            ..Default::default()
        },
    })
}

/// Freidlin–Wentzell rate at `H = 1/2` with `Q_{1/2} = σ1σ1ᵀ`-bar `+ QQᵀ`-bar.
pub fn eval_rate_fw_half(phi: &GridPath, drift: &LimitDrift) -> Result<RateEvalResult> {
    drift.check_path(phi)?;
    let local = drift.along(phi);
    fw_from_local(phi, &local)
}

fn fw_from_local(phi: &GridPath, local: &[LocalCoeffs]) -> Result<RateEvalResult> {
    let r = residual_drift(phi, local, true)?;
    quadratic_rate(
        phi,
        &r,
        |i| {
            local[i]
                .sigma1_sq_bar
                .iter()
                .zip(&local[i].qqt_bar)
                .map(|(a, b)| a + b)
                .collect()
        },
        Method::FwHalf,
    )
}

/// As [`eval_rate_fw_half`] with a caller-supplied `Q_{1/2}(x)`.
pub fn eval_rate_fw_half_with(
    phi: &GridPath,
    drift: &LimitDrift,
    q_half: &dyn Fn(&[f64]) -> Vec<f64>,
) -> Result<RateEvalResult> {
    drift.check_path(phi)?;
    let local = drift.along(phi);
    let r = residual_drift(phi, &local, true)?;
    quadratic_rate(phi, &r, |i| q_half(phi.row(i)), Method::FwHalf)
}

/// `S̃^{1/2}(φ) = ½∫⟨φ̇ - c̄, (σ̄1σ̄1ᵀ)^{-1}(φ̇ - c̄)⟩`, the rate obtained by
/// averaging `σ1` before squaring.
pub fn eval_rate_tilde_half(phi: &GridPath, drift: &LimitDrift) -> Result<RateEvalResult> {
    drift.check_path(phi)?;
    let local = drift.along(phi);
    tilde_from_local(phi, &local, drift.fbm())
}

fn tilde_from_local(phi: &GridPath, local: &[LocalCoeffs], k: usize) -> Result<RateEvalResult> {
    let m = phi.dim();
    let r = residual_drift(phi, local, false)?;
    quadratic_rate(
        phi,
        &r,
        |i| {
            let s = &local[i].sigma1_bar;
            let mut o = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    o[a * m + b] = (0..k).map(|c| s[a * k + c] * s[b * k + c]).sum();
                }
            }
            o
        },
        Method::TildeHalf,
    )
}

/// Result of the near-origin admissibility heuristic.
#[derive(Debug, Clone, Serialize)]
pub struct Admissibility {
    /// Fitted exponent of `|ψ(t)| ~ t^α` over the first decade of the grid.
    pub exponent: Option<f64>,
    pub admissible: bool,
    pub heuristic: bool,
}

/// Fits `log|ψ|` against `log t` over the first tenth of the grid and asks
/// for an exponent above one. A `ψ` that vanishes there is accepted.
pub fn near_origin_check(psi: &GridPath) -> Admissibility {
    let n = psi.len();
    let last = (n / 10).max(3).min(n - 1);
    let scale = psi.max_abs().max(f64::MIN_POSITIVE);
    let pts: Vec<(f64, f64)> = (1..=last)
        .filter_map(|i| {
            let v = psi.row(i).iter().fold(0.0f64, |a, b| a.max(b.abs()));
            (v > 1e-12 * scale).then(|| (psi.time(i).ln(), v.ln()))
        })
        .collect();
    if pts.len() < 2 {
        return Admissibility {
            exponent: None,
            admissible: true,
            heuristic: true,
        };
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    Admissibility {
        exponent: Some(slope),
        admissible: slope > 1.0,
        heuristic: true,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitRow {
    pub hurst: f64,
    pub s_h: f64,
    pub s_tilde_half: f64,
    pub s_half: f64,
    /// `|S^H - S̃^{1/2}| / S̃^{1/2}`.
    pub gap_tilde: f64,
    /// `|S^H - S^{1/2}| / S^{1/2}`.
    pub gap_half: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitStudy {
    pub rows: Vec<LimitRow>,
    pub s_tilde_half: f64,
    pub s_half: f64,
    pub admissibility: Admissibility,
}

impl LimitStudy {
    /// `S̃^{1/2} / S^{1/2}`.
    pub fn half_ratio(&self) -> f64 {
        self.s_tilde_half / self.s_half
    }
}

/// Explicit `S^H` for each `H` in `hursts`, beside `S̃^{1/2}` and `S^{1/2}`.
pub fn h_limit_study(phi: &GridPath, drift: &LimitDrift, hursts: &[f64]) -> Result<LimitStudy> {
    drift.check_path(phi)?;
    let local = drift.along(phi);
    let (psi, _) = explicit_psi(phi, &local)?;
    let admissibility = near_origin_check(&psi);
    if !admissibility.admissible {
        return Err(Error::Inadmissible(format!(
            "ψ behaves like t^{:.3} near the origin; the limit needs an exponent above 1",
            admissibility.exponent.unwrap_or(f64::NAN)
        )));
    }
    let s_tilde_half = tilde_from_local(phi, &local, drift.fbm())?.value;
    let s_half = fw_from_local(phi, &local)?.value;
    let n = phi.len();
    let rows = hursts
        .iter()
        .map(|&h| {
            let ctx = HurstContext::with_exec(h, n, phi.dt(), drift.exec)?;
            let s_h = explicit_from_local(phi, &local, &ctx, drift.exec)?.value;
            Ok(LimitRow {
                hurst: h,
                s_h,
                s_tilde_half,
                s_half,
                gap_tilde: (s_h - s_tilde_half).abs() / s_tilde_half,
                gap_half: (s_h - s_half).abs() / s_half,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitStudy {
        rows,
        s_tilde_half,
        s_half,
        admissibility,
    })
}

/// Integrates `ẋ = c̄ + ∇Ψg̅ + σ̄1 K̇_H u1 + QQᵀ-bar w` from `phi(0)` with
/// Heun's method, using the controls of a general minimizer.
pub fn replay_limit(
    drift: &LimitDrift,
    x0: &[f64],
    u1: &GridPath,
    w: &GridPath,
    ctx: &HurstContext,
) -> Result<GridPath> {
    let m = drift.slow();
    let k = drift.fbm();
    let n = u1.len();
    let kd = u1.map_components(|c| Ok(ctx.kdot_scalar(c, drift.exec)))?;
    let field = |i: usize, x: &[f64]| {
        let c = drift.at(x);
        (0..m)
            .map(|a| {
                c.cbar[a]
                    + c.grad_psi_g[a]
                    + (0..k)
                        .map(|j| c.sigma1_bar[a * k + j] * kd.get(i, j))
                        .sum::<f64>()
                    + (0..m)
                        .map(|b| c.qqt_bar[a * m + b] * w.get(i, b))
                        .sum::<f64>()
            })
            .collect::<Vec<f64>>()
    };
    let dt = u1.dt();
    let mut out = Vec::with_capacity(n * m);
    let mut x = x0.to_vec();
    out.extend_from_slice(&x);
    for i in 0..n - 1 {
        let k1 = field(i, &x);
        let pred: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + dt * b).collect();
        let k2 = field(i + 1, &pred);
        for a in 0..m {
            x[a] += 0.5 * dt * (k1[a] + k2[a]);
        }
        out.extend_from_slice(&x);
    }
    GridPath::new(u1.t0(), dt, m, out)
}

/// Solves `φ̇ = c̄(φ) + ∇Ψg̅(φ) + σ̄1(φ)ψ(t)` from `x0` with classical RK4
/// on `n` points of `[0, horizon]`. With `ψ = 0` this is the averaged path.
pub fn integrate_limit_path(
    drift: &LimitDrift,
    x0: &[f64],
    psi: impl Fn(f64) -> Vec<f64>,
    n: usize,
    horizon: f64,
) -> Result<GridPath> {
    let m = drift.slow();
    let k = drift.fbm();
    if x0.len() != m || n < 2 {
        return Err(Error::invalid("limit path needs x0 of the slow dimension and two or more points"));
    }
    let dt = horizon / (n - 1) as f64;
    // An empty `ψ(t)` stands for zero.
    let field = |t: f64, x: &[f64]| -> Vec<f64> {
        let c = drift.at(x);
        let p = if k > 0 { psi(t) } else { Vec::new() };
        (0..m)
            .map(|a| {
                let noise: f64 = p.iter().enumerate().map(|(j, pj)| c.sigma1_bar[a * k + j] * pj).sum();
                c.cbar[a] + c.grad_psi_g[a] + noise
            })
            .collect()
    };
    let mut out = Vec::with_capacity(n * m);
    let mut x = x0.to_vec();
    out.extend_from_slice(&x);
    let add = |x: &[f64], v: &[f64], h: f64| -> Vec<f64> { x.iter().zip(v).map(|(a, b)| a + h * b).collect() };
    for i in 0..n - 1 {
        let t = i as f64 * dt;
        let k1 = field(t, &x);
        let k2 = field(t + 0.5 * dt, &add(&x, &k1, 0.5 * dt));
        let k3 = field(t + 0.5 * dt, &add(&x, &k2, 0.5 * dt));
        let k4 = field(t + dt, &add(&x, &k3, dt));
        for a in 0..m {
            x[a] += dt / 6.0 * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { time: t + dt, detail: "limit path blew up".into() });
        }
        out.extend_from_slice(&x);
    }
    GridPath::new(0.0, dt, m, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gamma;
    use approx::assert_relative_eq;

    fn constant(sigma: f64) -> LimitDrift {
        LimitDrift::new(ClosureCoefficients::new(
            1,
            1,
            |_| vec![0.0],
            move |_| vec![sigma],
        ))
    }

    #[test]
    fn derivative_of_quadratic_is_exact() {
        let p = GridPath::on_unit(11, 1.0, |t| t * t - t).unwrap();
        let d = path_derivative(&p).unwrap();
        for i in 0..11 {
            assert_relative_eq!(d.get(i, 0), 2.0 * p.time(i) - 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn explicit_unit_control() {
        let (h, n, sigma) = (0.75, 513, 1.7);
        let ctx = HurstContext::on_horizon(h, n, 1.0).unwrap();
        let cg = ctx.c_h_gamma();
        let phi = GridPath::on_unit(n, 1.0, |t| sigma * cg * t.powf(h + 0.5) / (h + 0.5)).unwrap();
        let r = eval_rate_explicit(&phi, &constant(sigma), &ctx).unwrap();
        assert!((r.value - 0.5).abs() < 5e-3, "{}", r.value);
    }

    #[test]
    fn zero_on_the_averaged_trajectory() {
        let drift = LimitDrift::new(ClosureCoefficients::new(
            1,
            1,
            |x| vec![-x[0]],
            |_| vec![0.4],
        ));
        let ctx = HurstContext::on_horizon(0.7, 257, 1.0).unwrap();
        let phi = GridPath::on_unit(257, 1.0, |t| 2.0 * (-t).exp()).unwrap();
        let e = eval_rate_explicit(&phi, &drift, &ctx).unwrap();
        assert!(e.value < 1e-8, "{}", e.value);
        let g = eval_rate_general(&phi, &drift, &ctx).unwrap();
        assert!(g.value < 1e-8, "{}", g.value);
    }

    #[test]
    fn explicit_vs_general_and_scaling() {
        let ctx = HurstContext::on_horizon(0.8, 257, 1.0).unwrap();
        let phi = GridPath::on_unit(257, 1.0, |t| 0.3 * t * t + t.powi(3)).unwrap();
        let a = eval_rate_explicit(&phi, &constant(0.5), &ctx)
            .unwrap()
            .value;
        let b = eval_rate_general(&phi, &constant(0.5), &ctx).unwrap().value;
        assert!((a - b).abs() < 1e-2 * a, "{a} {b}");
        let c = eval_rate_explicit(&phi, &constant(1.0), &ctx)
            .unwrap()
            .value;
        assert_relative_eq!(a, 4.0 * c, max_relative = 1e-12);
    }

    #[test]
    fn general_without_fbm_is_freidlin_wentzell() {
        let drift = LimitDrift::new(
            ClosureCoefficients::new(1, 1, |_| vec![0.0], |_| vec![0.0])
                .with_qqt_bar(|_| vec![2.0]),
        );
        let ctx = HurstContext::on_horizon(0.7, 65, 1.0).unwrap();
        let phi = GridPath::on_unit(65, 1.0, |t| 3.0 * t).unwrap();
        let g = eval_rate_general(&phi, &drift, &ctx).unwrap();
        assert_relative_eq!(g.value, 9.0 / 4.0, max_relative = 1e-10);
        let fw = eval_rate_fw_half(&phi, &drift).unwrap();
        assert_relative_eq!(fw.value, 9.0 / 4.0, max_relative = 1e-10);
    }

    #[test]
    fn half_forms_for_cosine_constants() {
        let s1sq = (-1.0f64).exp();
        let s1sq_bar = 0.5 * (1.0 + (-2.0f64).exp());
        let drift = LimitDrift::new(
            ClosureCoefficients::new(1, 1, |_| vec![0.0], move |_| vec![s1sq.sqrt()])
                .with_sigma1_sq_bar(move |_| vec![s1sq_bar]),
        );
        let beta = 0.8;
        let phi = GridPath::on_unit(101, 2.0, |t| beta * t).unwrap();
        let fw = eval_rate_fw_half(&phi, &drift).unwrap().value;
        assert_relative_eq!(
            fw,
            beta * beta * 2.0 / (1.0 + (-2.0f64).exp()),
            max_relative = 1e-12
        );
        let tl = eval_rate_tilde_half(&phi, &drift).unwrap().value;
        assert_relative_eq!(tl, std::f64::consts::E * beta * beta, max_relative = 1e-12);
        assert_relative_eq!(
            tl / fw,
            std::f64::consts::E * s1sq_bar,
            max_relative = 1e-12
        );
    }

    #[test]
    fn degenerate_sigma_is_reported() {
        let ctx = HurstContext::on_horizon(0.7, 33, 1.0).unwrap();
        let phi = GridPath::on_unit(33, 1.0, |t| t).unwrap();
        assert!(matches!(
            eval_rate_explicit(&phi, &constant(0.0), &ctx),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            eval_rate_general(&phi, &constant(0.0), &ctx),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn qh_unit_control_gives_kdot_of_one() {
        let (h, n) = (0.7, 129);
        let ctx = HurstContext::on_horizon(h, n, 1.0).unwrap();
        let phi = GridPath::on_unit(n, 1.0, |t| t).unwrap();
        let op = assemble_qh(&phi, &constant(1.0), &ctx, 8).unwrap();
        assert_eq!(op.matrix.ncols(), n);
        let out = op.apply(&vec![1.0; n]);
        for (i, v) in out.iter().enumerate().skip(10) {
            let t = ctx.time(i);
            assert_relative_eq!(
                *v,
                ctx.c_h() * gamma(1.5 - h) * t.powf(h - 0.5),
                max_relative = 1e-4
            );
        }
        assert!(op.operator_norm() > 0.0);
    }

    #[test]
    fn minimizer_replays_the_path() {
        let drift = LimitDrift::new(ClosureCoefficients::new(
            1,
            1,
            |x| vec![-x[0]],
            |x| vec![1.0 + 0.2 * x[0].sin()],
        ));
        let n = 257;
        let ctx = HurstContext::on_horizon(0.75, n, 1.0).unwrap();
        let phi = GridPath::on_unit(n, 1.0, |t| 0.5 + t * t).unwrap();
        let r = eval_rate_general(&phi, &drift, &ctx).unwrap();
        let Some(Minimizer::General { u1, w }) = r.minimizer else {
            panic!()
        };
        let back = replay_limit(&drift, &[0.5], &u1, &w, &ctx).unwrap();
        let err = (0..n)
            .map(|i| (back.get(i, 0) - phi.get(i, 0)).abs())
            .fold(0.0, f64::max);
        assert!(err < 5e-3, "{err}");
    }

    #[test]
    fn limit_path_is_exponential() {
        let drift = LimitDrift::new(ClosureCoefficients::new(1, 1, |x| vec![-x[0]], |_| vec![1.0]));
        let p = integrate_limit_path(&drift, &[2.0], |_| vec![0.0], 101, 1.0).unwrap();
        assert_relative_eq!(p.get(100, 0), 2.0 * (-1.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn admissibility_heuristic() {
        let good = GridPath::on_unit(201, 1.0, |t| t * t).unwrap();
        assert!(near_origin_check(&good).admissible);
        let bad = GridPath::on_unit(201, 1.0, |t| t.sqrt()).unwrap();
        assert!(!near_origin_check(&bad).admissible);
    }
}
