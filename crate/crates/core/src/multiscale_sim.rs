//! Euler time stepping of the slow-fast system and of its controlled
//! version, plus dt-weighted occupation histograms.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::cameron_martin::HurstContext;
use crate::coefficients::{Dims, SlowFastModel};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::fbm_gen::{NoiseBundle, NoiseSampler};
use crate::grid::GridPath;

/// Largest automatic substep count; larger requests are capped with a warning.
pub const MAX_AUTO_SUBSTEPS: usize = 100_000;

/// Coefficients, scales and initial data of one slow-fast system.
#[derive(Clone)]
pub struct SlowFastSpec {
    model: Arc<dyn SlowFastModel>,
    hurst: f64,
    eps: f64,
    eta: f64,
    x0: Vec<f64>,
    y0: Vec<f64>,
    beta: Option<f64>,
}

impl std::fmt::Debug for SlowFastSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlowFastSpec")
            .field("dims", &self.model.dims())
            .field("hurst", &self.hurst)
            .field("eps", &self.eps)
            .field("eta", &self.eta)
            .field("x0", &self.x0)
            .field("y0", &self.y0)
            .field("beta", &self.beta)
            .finish()
    }
}

/// Which branch of the regularity regime a model falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `σ1` depends on the fast variable: needs `H > 3/4` and a declared `β`.
    FastDiffusion,
    /// `σ1 = σ1(x)`: any `H ∈ (1/2, 1)`.
    SlowDiffusion,
}

/// Checks the `(H, β, ε, η)` requirements of a regime.
pub fn check_regime(
    regime: Regime,
    hurst: f64,
    beta: Option<f64>,
    eps: f64,
    eta: f64,
) -> Result<()> {
    match regime {
        Regime::SlowDiffusion => {
            if !(hurst > 0.5 && hurst < 1.0) {
                return Err(Error::invalid(format!(
                    "H must lie in (1/2, 1), got {hurst}"
                )));
            }
        }
        Regime::FastDiffusion => {
            if !(hurst > 0.75 && hurst < 1.0) {
                return Err(Error::invalid(format!(
                    "sigma1 depends on the fast variable, which needs H in (3/4, 1); got {hurst}"
                )));
            }
            let Some(b) = beta else {
                return Err(Error::invalid(
                    "sigma1 depends on the fast variable: declare beta",
                ));
            };
            if !(b > 2.0 * (1.0 - hurst) && b < 0.5) {
                return Err(Error::invalid(format!(
                    "beta must lie in (2(1-H), 1/2) = ({}, 0.5), got {b}",
                    2.0 * (1.0 - hurst)
                )));
            }
            if eps.sqrt() > eta.powf(b) {
                return Err(Error::invalid(format!(
                    "sqrt(eps) = {} exceeds eta^beta = {}",
                    eps.sqrt(),
                    eta.powf(b)
                )));
            }
        }
    }
    Ok(())
}

impl SlowFastSpec {
    pub fn new(
        model: Arc<dyn SlowFastModel>,
        hurst: f64,
        eps: f64,
        eta: f64,
        x0: Vec<f64>,
        y0: Vec<f64>,
        beta: Option<f64>,
    ) -> Result<Self> {
        let dims = model.dims();
        if !(eps > 0.0 && eps.is_finite() && eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid("eps and eta must be positive"));
        }
        if x0.len() != dims.slow || y0.len() != dims.fast {
            return Err(Error::invalid(
                "initial conditions do not match the model dimensions",
            ));
        }
        if x0.iter().chain(&y0).any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial conditions must be finite"));
        }
        let spec = SlowFastSpec {
            model,
            hurst,
            eps,
            eta,
            x0,
            y0,
            beta,
        };
        check_regime(spec.regime(), hurst, beta, eps, eta)?;
        Ok(spec)
    }

    pub fn regime(&self) -> Regime {
        if self.model.dims().fbm > 0 && self.model.sigma1_depends_on_y() {
            Regime::FastDiffusion
        } else {
            Regime::SlowDiffusion
        }
    }

    /// Same system at another `(ε, η)` pair.
    pub fn with_scales(&self, eps: f64, eta: f64) -> Result<Self> {
        Self::new(
            self.model.clone(),
            self.hurst,
            eps,
            eta,
            self.x0.clone(),
            self.y0.clone(),
            self.beta,
        )
    }

    pub fn model(&self) -> &Arc<dyn SlowFastModel> {
        &self.model
    }

    pub fn dims(&self) -> Dims {
        self.model.dims()
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn y0(&self) -> &[f64] {
        &self.y0
    }

    pub fn beta(&self) -> Option<f64> {
        self.beta
    }
}

/// Controls `v1 = K_H^{-1} u1` and `u̇2` on the output grid.
#[derive(Debug, Clone)]
pub struct ControlPair {
    pub v1: GridPath,
    pub u2dot: GridPath,
    pub bound: Option<f64>,
}

impl ControlPair {
    pub fn zero(n: usize, dt: f64, k: usize, ell: usize) -> Self {
        let mk = |d: usize| {
            if d == 0 {
                GridPath::empty(0.0, dt, n)
            } else {
                GridPath::zeros(0.0, dt, n, d)
            }
        };
        ControlPair {
            v1: mk(k),
            u2dot: mk(ell),
            bound: None,
        }
    }

    /// Squared `L²` energy `‖v1‖² + ‖u̇2‖²`.
    pub fn energy(&self) -> f64 {
        let e = |p: &GridPath| {
            if p.dim() == 0 {
                0.0
            } else {
                crate::cameron_martin::l2_norm(p).powi(2)
            }
        };
        e(&self.v1) + e(&self.u2dot)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.v1.same_grid(&self.u2dot) {
            return Err(Error::invalid("control components must share a grid"));
        }
        if let Some(nb) = self.bound {
            let e = self.energy();
            if e > nb * nb * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "control energy {e} exceeds the bound N^2 = {}",
                    nb * nb
                )));
            }
        }
        Ok(())
    }
}

/// Coarse-grid output of one simulation.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub x: GridPath,
    pub y: GridPath,
    pub warnings: Vec<String>,
}

/// Default number of fast substeps per output step: `ceil(10·dt/η)`, capped.
pub fn default_substeps(dt: f64, eta: f64) -> (usize, Option<String>) {
    let want = (10.0 * dt / eta).ceil().max(1.0);
    if want > MAX_AUTO_SUBSTEPS as f64 {
        (
            MAX_AUTO_SUBSTEPS,
            Some(format!(
                "substeps capped at {MAX_AUTO_SUBSTEPS} (requested {want})"
            )),
        )
    } else {
        (want as usize, None)
    }
}

struct Work {
    b: Vec<f64>,
    c: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    tau: Vec<f64>,
    db: Vec<f64>,
    dw: Vec<f64>,
}

impl Work {
    fn new(d: Dims) -> Self {
        Work {
            b: vec![0.0; d.slow],
            c: vec![0.0; d.slow],
            s1: vec![0.0; d.slow * d.fbm],
            s2: vec![0.0; d.slow * d.bm],
            f: vec![0.0; d.fast],
            g: vec![0.0; d.fast],
            tau: vec![0.0; d.fast * d.bm],
            db: vec![0.0; d.fbm],
            dw: vec![0.0; d.bm],
        }
    }
}

fn matvec_add(a: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let k = v.len();
    if k == 0 {
        return;
    }
    for (r, o) in out.iter_mut().enumerate() {
        *o += scale
            * a[r * k..(r + 1) * k]
                .iter()
                .zip(v)
                .map(|(x, y)| x * y)
                .sum::<f64>();
    }
}

/// Control rates on the fine grid: `u̇1 = K̇_H v1` and `u̇2`, each
/// piecewise-linearly interpolated to the left points of the fine steps.
struct FineControl {
    u1dot: GridPath,
    u2dot: GridPath,
}

fn check_noise(spec: &SlowFastSpec, noise: &NoiseBundle, substeps: usize) -> Result<usize> {
    let d = spec.dims();
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least one"));
    }
    if noise.bh.dim() != d.fbm || noise.w.dim() != d.bm {
        return Err(Error::invalid(format!(
            "noise has ({}, {}) components, model needs ({}, {})",
            noise.bh.dim(),
            noise.w.dim(),
            d.fbm,
            d.bm
        )));
    }
    if noise.bh.len() != noise.w.len() || noise.bh.len() < 2 {
        return Err(Error::invalid(
            "noise components must share a grid of two or more points",
        ));
    }
    let steps = noise.len() - 1;
    if !steps.is_multiple_of(substeps) {
        return Err(Error::invalid(format!(
            "{steps} noise steps are not a multiple of {substeps} substeps"
        )));
    }
    Ok(steps / substeps + 1)
}

/// Euler scheme for the uncontrolled system. The noise lives on the fine
/// grid; `X` and `Y` are returned every `substeps` fine steps.
pub fn simulate(spec: &SlowFastSpec, noise: &NoiseBundle, substeps: usize) -> Result<Trajectory> {
    run(spec, noise, None, substeps)
}

/// Euler scheme for the controlled system with controls on the output grid.
pub fn simulate_controlled(
    spec: &SlowFastSpec,
    noise: &NoiseBundle,
    ctrl: &ControlPair,
    substeps: usize,
) -> Result<Trajectory> {
    let n = check_noise(spec, noise, substeps)?;
    ctrl.validate()?;
    let d = spec.dims();
    let dt = noise.dt() * substeps as f64;
    if ctrl.v1.len() != n || ctrl.v1.t0() != 0.0 || ((ctrl.v1.dt() - dt) / dt).abs() > 1e-9 {
        return Err(Error::invalid("controls must live on the output grid"));
    }
    if ctrl.v1.dim() != d.fbm || ctrl.u2dot.dim() != d.bm {
        return Err(Error::invalid(
            "control dimensions do not match the noise dimensions",
        ));
    }
    let u1dot = if d.fbm == 0 {
        ctrl.v1.clone()
    } else {
        let ctx = HurstContext::new(spec.hurst, n, ctrl.v1.dt())?;
        crate::cameron_martin::apply_kh_dot(&ctrl.v1, &ctx)?
    };
    let fc = FineControl {
        u1dot,
        u2dot: ctrl.u2dot.clone(),
    };
    run(spec, noise, Some(&fc), substeps)
}

fn run(
    spec: &SlowFastSpec,
    noise: &NoiseBundle,
    ctrl: Option<&FineControl>,
    substeps: usize,
) -> Result<Trajectory> {
    let n = check_noise(spec, noise, substeps)?;
    let d = spec.dims();
    let m = spec.model.as_ref();
    let hf = noise.dt();
    let (eps, eta) = (spec.eps, spec.eta);
    let se = eps.sqrt();
    let sb = se / eta.sqrt();
    let sg = 1.0 / (eps * eta).sqrt();
    let st = 1.0 / eta.sqrt();

    let mut warnings = Vec::new();
    if let Some(r) = fast_stability_ratio(spec, hf) {
        if r < 2.0 {
            warnings.push(format!(
                "fast step may be unstable: eta / (dt_fast * |f'|) = {r:.3} < 2"
            ));
        }
    }

    let mut x = spec.x0.clone();
    let mut y = spec.y0.clone();
    let mut xs = Vec::with_capacity(n * d.slow);
    let mut ys = Vec::with_capacity(n * d.fast);
    xs.extend_from_slice(&x);
    ys.extend_from_slice(&y);
    let mut wk = Work::new(d);
    let mut u1 = vec![0.0; d.fbm];
    let mut u2 = vec![0.0; d.bm];
    let mut dx = vec![0.0; d.slow];
    let mut dy = vec![0.0; d.fast];
    let total = noise.len() - 1;
    for j in 0..total {
        let t = j as f64 * hf;
        m.b(&y, &mut wk.b);
        m.c(&x, &y, &mut wk.c);
        m.f(&y, &mut wk.f);
        m.g(&x, &y, &mut wk.g);
        if d.fbm > 0 {
            m.sigma1(&x, &y, &mut wk.s1);
        }
        if d.bm > 0 {
            m.sigma2(&x, &y, &mut wk.s2);
            if d.fast > 0 {
                m.tau(&y, &mut wk.tau);
            }
        }
        for c in 0..d.fbm {
            wk.db[c] = noise.bh.get(j + 1, c) - noise.bh.get(j, c);
        }
        for c in 0..d.bm {
            wk.dw[c] = noise.w.get(j + 1, c) - noise.w.get(j, c);
        }
        for ((dxi, bi), ci) in dx.iter_mut().zip(&wk.b).zip(&wk.c) {
            *dxi = (sb * bi + ci) * hf;
        }
        matvec_add(&wk.s1, &wk.db, se, &mut dx);
        matvec_add(&wk.s2, &wk.dw, se, &mut dx);
        for ((dyi, fi), gi) in dy.iter_mut().zip(&wk.f).zip(&wk.g) {
            *dyi = (fi / eta + sg * gi) * hf;
        }
        matvec_add(&wk.tau, &wk.dw, st, &mut dy);
        if let Some(fc) = ctrl {
            if d.fbm > 0 {
                fc.u1dot.interpolate(t, &mut u1);
                matvec_add(&wk.s1, &u1, hf, &mut dx);
            }
            if d.bm > 0 {
                fc.u2dot.interpolate(t, &mut u2);
                matvec_add(&wk.s2, &u2, hf, &mut dx);
                matvec_add(&wk.tau, &u2, sg * hf, &mut dy);
            }
        }
        for i in 0..d.slow {
            x[i] += dx[i];
        }
        for i in 0..d.fast {
            y[i] += dy[i];
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: (j + 1) as f64 * hf,
                detail: "non-finite state".into(),
            });
        }
        if (j + 1) % substeps == 0 {
            xs.extend_from_slice(&x);
            ys.extend_from_slice(&y);
        }
    }
    let dt = hf * substeps as f64;
    let xp = GridPath::new(0.0, dt, d.slow, xs)?;
    let yp = if d.fast == 0 {
        GridPath::empty(0.0, dt, n)
    } else {
        GridPath::new(0.0, dt, d.fast, ys)?
    };
    Ok(Trajectory {
        x: xp,
        y: yp,
        warnings,
    })
}

/// `η / (dt_fast · |∂f/∂y|)` estimated by central differences at `y0`.
fn fast_stability_ratio(spec: &SlowFastSpec, hf: f64) -> Option<f64> {
    let p = spec.dims().fast;
    if p == 0 {
        return None;
    }
    let m = spec.model.as_ref();
    let mut worst = 0.0f64;
    let mut yp = spec.y0.clone();
    let mut a = vec![0.0; p];
    let mut b = vec![0.0; p];
    for i in 0..p {
        let h = 1e-5 * (1.0 + spec.y0[i].abs());
        yp[i] = spec.y0[i] + h;
        m.f(&yp, &mut a);
        yp[i] = spec.y0[i] - h;
        m.f(&yp, &mut b);
        yp[i] = spec.y0[i];
        for r in 0..p {
            worst = worst.max(((a[r] - b[r]) / (2.0 * h)).abs());
        }
    }
    (worst > 0.0).then(|| spec.eta / (hf * worst))
}

/// Monte Carlo settings shared by batch simulations.
#[derive(Debug, Clone, Copy)]
pub struct McGrid {
    /// Output grid points on `[0, horizon]`.
    pub n: usize,
    pub horizon: f64,
    /// Fast substeps per output step; `None` picks [`default_substeps`].
    pub substeps: Option<usize>,
}

impl McGrid {
    pub fn resolve_substeps(&self, eta: f64) -> (usize, Option<String>) {
        match self.substeps {
            Some(s) => (s.max(1), None),
            None => default_substeps(self.horizon / (self.n - 1) as f64, eta),
        }
    }
}

/// Simulates `trials` independent trajectories keyed by `(seed, trial)` and
/// returns them in trial order; failed trials are kept as errors.
pub fn simulate_batch<T: Send>(
    spec: &SlowFastSpec,
    grid: McGrid,
    trials: usize,
    seed: u64,
    exec: Execution,
    reduce: impl Fn(Result<Trajectory>) -> T + Sync + Send,
) -> Result<Vec<T>> {
    if grid.n < 2 {
        return Err(Error::invalid("need at least two output points"));
    }
    let (sub, _) = grid.resolve_substeps(spec.eta);
    let d = spec.dims();
    let fine = (grid.n - 1) * sub + 1;
    let sampler = NoiseSampler::new(spec.hurst, fine, grid.horizon, d.fbm, d.bm)?;
    Ok(exec.map(trials, |t| {
        let r = sampler
            .bundle(seed, t as u64)
            .and_then(|nb| simulate(spec, &nb, sub));
        reduce(r)
    }))
}

/// Uniform bins on `[lo, hi)` plus an underflow and an overflow bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if !(lo < hi) || bins == 0 {
            return Err(Error::invalid("axis needs lo < hi and at least one bin"));
        }
        Ok(Axis { lo, hi, bins })
    }

    /// Bin index in `0..bins + 2`: `0` is underflow, `bins + 1` overflow.
    pub fn index(&self, v: f64) -> usize {
        if v < self.lo {
            0
        } else if v >= self.hi {
            self.bins + 1
        } else {
            1 + (((v - self.lo) / (self.hi - self.lo) * self.bins as f64) as usize)
                .min(self.bins - 1)
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / self.bins as f64)
            .collect()
    }
}

/// One axis per coordinate of `(v1, u̇2, Y)`, in that order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSpec {
    pub v1: Vec<Axis>,
    pub u2: Vec<Axis>,
    pub y: Vec<Axis>,
}

impl BinSpec {
    fn axes(&self) -> impl Iterator<Item = &Axis> {
        self.v1.iter().chain(&self.u2).chain(&self.y)
    }
}

/// Sparse dt-weighted joint histogram of `(v1(s), u̇2(s), Y_s)`.
#[derive(Debug, Clone, Serialize)]
pub struct OccupationHistogram {
    pub bins: BinSpec,
    pub cells: BTreeMap<Vec<usize>, f64>,
    pub horizon: f64,
}

impl OccupationHistogram {
    pub fn total_mass(&self) -> f64 {
        self.cells.values().sum()
    }

    /// Marginal masses along axis `axis` (over all coordinates in the order
    /// `v1, u2, y`), including under- and overflow.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let ax = self.bins.axes().nth(axis).expect("axis index out of range");
        let mut out = vec![0.0; ax.bins + 2];
        for (k, v) in &self.cells {
            out[k[axis]] += v;
        }
        out
    }
}

/// Builds the occupation histogram from left-point samples on the shared
/// grid, each weighted by `dt`.
pub fn empirical_occupation(
    y: &GridPath,
    ctrl: &ControlPair,
    bins: &BinSpec,
) -> Result<OccupationHistogram> {
    if !y.same_grid(&ctrl.v1) || !y.same_grid(&ctrl.u2dot) {
        return Err(Error::invalid("fast path and controls must share a grid"));
    }
    if bins.v1.len() != ctrl.v1.dim()
        || bins.u2.len() != ctrl.u2dot.dim()
        || bins.y.len() != y.dim()
    {
        return Err(Error::invalid(
            "bin specification does not match the dimensions",
        ));
    }
    let mut cells = BTreeMap::new();
    for k in 0..y.len() - 1 {
        let mut key = Vec::with_capacity(bins.v1.len() + bins.u2.len() + bins.y.len());
        for (c, a) in bins.v1.iter().enumerate() {
            key.push(a.index(ctrl.v1.get(k, c)));
        }
        for (c, a) in bins.u2.iter().enumerate() {
            key.push(a.index(ctrl.u2dot.get(k, c)));
        }
        for (c, a) in bins.y.iter().enumerate() {
            key.push(a.index(y.get(k, c)));
        }
        *cells.entry(key).or_insert(0.0) += y.dt();
    }
    Ok(OccupationHistogram {
        bins: bins.clone(),
        cells,
        horizon: y.horizon() - y.t0(),
    })
}

/// Total-variation distance between a binned marginal (with under/overflow)
/// and the same binning of a distribution with CDF `cdf`.
pub fn tv_distance(masses: &[f64], axis: &Axis, cdf: impl Fn(f64) -> f64) -> f64 {
    let total: f64 = masses.iter().sum();
    let edges = axis.edges();
    let mut ref_mass = Vec::with_capacity(axis.bins + 2);
    ref_mass.push(cdf(edges[0]));
    for w in edges.windows(2) {
        ref_mass.push(cdf(w[1]) - cdf(w[0]));
    }
    ref_mass.push(1.0 - cdf(edges[axis.bins]));
    0.5 * masses
        .iter()
        .zip(&ref_mass)
        .map(|(m, r)| (m / total - r).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BuiltinModel, Func};
    use crate::fbm_gen::sample_noise_bundle;

    fn dims(k: usize, l: usize) -> Dims {
        Dims {
            slow: 1,
            fast: 1,
            fbm: k,
            bm: l,
        }
    }

    fn spec(m: BuiltinModel, h: f64) -> SlowFastSpec {
        SlowFastSpec::new(Arc::new(m), h, 0.01, 0.001, vec![1.0], vec![0.0], None).unwrap()
    }

    #[test]
    fn frozen_slow_variable() {
        let m = BuiltinModel::new(dims(1, 1))
            .with_f(vec![Func::linear(vec![], vec![-1.0], 0.0)])
            .with_tau(vec![Func::constant(2f64.sqrt())]);
        let s = spec(m, 0.7);
        let nb = sample_noise_bundle(0.7, 101, 1.0, 1, 1, 5).unwrap();
        let tr = simulate(&s, &nb, 10).unwrap();
        assert_eq!(tr.x.len(), 11);
        assert!(tr.x.values().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn pure_fbm_telescopes() {
        let m = BuiltinModel::new(dims(1, 0)).with_sigma1(vec![Func::constant(1.0)]);
        let m = BuiltinModel {
            dims: Dims { fast: 0, ..m.dims },
            ..m
        };
        let s = SlowFastSpec::new(Arc::new(m), 0.7, 0.04, 0.001, vec![0.5], vec![], None).unwrap();
        let nb = sample_noise_bundle(0.7, 65, 1.0, 1, 0, 9).unwrap();
        let tr = simulate(&s, &nb, 4).unwrap();
        for k in 0..tr.x.len() {
            let want = 0.5 + 0.2 * nb.bh.get(4 * k, 0);
            assert!((tr.x.get(k, 0) - want).abs() < 1e-13);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = BuiltinModel::new(dims(0, 0))
            .with_c(vec![Func::poly_y(vec![0.0])])
            .with_c(vec![Func::Polynomial {
                coeffs: vec![0.0, 0.0, 0.0, 50.0],
                var: crate::coefficients::Var::X,
                index: 0,
            }]);
        let s =
            SlowFastSpec::new(Arc::new(m), 0.7, 0.01, 0.01, vec![1.0], vec![0.0], None).unwrap();
        let nb = NoiseBundle::zero(0.7, 1001, 0.01, 0, 0);
        match simulate(&s, &nb, 1) {
            Err(Error::Divergence { time, .. }) => assert!(time > 0.0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn regime_is_enforced() {
        let m = BuiltinModel::new(dims(1, 1)).with_sigma1(vec![Func::cos_y(1.0)]);
        let a = Arc::new(m);
        assert!(SlowFastSpec::new(
            a.clone(),
            0.7,
            0.01,
            0.001,
            vec![0.0],
            vec![0.0],
            Some(0.45)
        )
        .is_err());
        assert!(
            SlowFastSpec::new(a.clone(), 0.8, 0.01, 0.001, vec![0.0], vec![0.0], None).is_err()
        );
        // sqrt(eps) = 0.1 <= eta^beta = 0.001^0.3 ≈ 0.126
        assert!(
            SlowFastSpec::new(a.clone(), 0.8, 0.01, 0.001, vec![0.0], vec![0.0], Some(0.3))
                .is_err()
        );
        assert!(SlowFastSpec::new(a, 0.9, 0.01, 0.001, vec![0.0], vec![0.0], Some(0.3)).is_ok());
    }

    #[test]
    fn occupation_mass_and_zero_controls() {
        let y = GridPath::on_unit(101, 2.0, |t| t.sin()).unwrap();
        let ctrl = ControlPair::zero(101, y.dt(), 1, 1);
        let ax = Axis::new(-1.0, 1.0, 10).unwrap();
        let bins = BinSpec {
            v1: vec![ax],
            u2: vec![ax],
            y: vec![ax],
        };
        let h = empirical_occupation(&y, &ctrl, &bins).unwrap();
        assert!((h.total_mass() - 2.0).abs() < 1e-12);
        let v1 = h.marginal(0);
        assert!((v1[ax.index(0.0)] - 2.0).abs() < 1e-12);
    }
}
