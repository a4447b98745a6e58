//! Experiment kinds. Each returns its artifacts in memory; callers decide
//! where they land.

use fracld::cameron_martin::HurstContext;
use fracld::coefficients::{BuiltinModel, Func, SlowFastModel, Var};
use fracld::fbm_gen::FbmSampler;
use fracld::ldp_harness::{
    estimate_laplace, estimate_rare_event, gaussian_exceedance_rate, gaussian_penalty_value, Functional,
    LaplaceExperiment, RareEventExperiment,
};
use fracld::multiscale_sim::simulate_batch;
use fracld::poisson_cell::{effective_q, Measure};
use fracld::rate_fn::{
    eval_rate_explicit, eval_rate_fw_half, eval_rate_general, eval_rate_tilde_half, h_limit_study,
    integrate_limit_path, LimitDrift, Method,
};
use fracld::{Execution, GridPath};
use serde::Serialize;

use crate::config::{Experiment, Loaded, PathSpec, Prepared};
use crate::error::{CliError, CliResult};

/// One output file: a suffix appended to the experiment name, and its bytes.
pub struct Artifact {
    pub suffix: &'static str,
    pub bytes: Vec<u8>,
}

fn json(suffix: &'static str, v: &impl Serialize) -> CliResult<Artifact> {
    let mut bytes = serde_json::to_vec_pretty(v)?;
    bytes.push(b'\n');
    Ok(Artifact { suffix, bytes })
}

fn csv_rows<T: Serialize>(suffix: &'static str, rows: &[T]) -> CliResult<Artifact> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(suffix, e.into_error()))?;
    Ok(Artifact { suffix, bytes })
}

pub struct Ctx<'a> {
    pub loaded: &'a Loaded,
    pub exec: Execution,
}

impl Ctx<'_> {
    fn cfg(&self) -> &crate::config::Config {
        &self.loaded.config
    }

    fn seed_for(&self, name: &str) -> u64 {
        // FNV-1a of the experiment name keeps experiments independent of their order.
        let h = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        fracld::rng::derive_seed(self.cfg().seed, h)
    }
}

pub fn run_experiment(ctx: &Ctx, exp: &Experiment) -> CliResult<Vec<Artifact>> {
    match exp {
        Experiment::SampleFbm { name, paths, dim } => sample_fbm(ctx, name, *paths, *dim),
        Experiment::Simulate { name, trials, save_paths } => simulate(ctx, name, *trials, *save_paths),
        Experiment::Poisson { .. } => poisson(ctx),
        Experiment::Rate { method, path, hurst, .. } => rate(ctx, method, path, *hurst),
        Experiment::LimitStudy { hurst_list, path, .. } => limit_study(ctx, hurst_list, path),
        Experiment::Laplace { name, functional, trials } => laplace(ctx, name, functional, *trials),
        Experiment::RareEvent { name, threshold, component, trials, pilot_trials } => {
            rare_event(ctx, name, *threshold, *component, *trials, *pilot_trials)
        }
    }
}

#[derive(Serialize)]
struct LongRow {
    path: usize,
    t: f64,
    component: usize,
    value: f64,
}

fn sample_fbm(ctx: &Ctx, name: &str, paths: usize, dim: usize) -> CliResult<Vec<Artifact>> {
    let cfg = ctx.cfg();
    let sampler = FbmSampler::new(cfg.model.hurst, cfg.grid.n, cfg.grid.horizon)?;
    let seed = ctx.seed_for(name);
    let drawn: Vec<fracld::Result<GridPath>> = ctx.exec.map(paths, |p| sampler.sample(seed, p as u64, dim));
    let mut rows = Vec::new();
    for (p, path) in drawn.into_iter().enumerate() {
        let path = path?;
        for k in 0..path.len() {
            for c in 0..dim {
                rows.push(LongRow { path: p, t: path.time(k), component: c, value: path.get(k, c) });
            }
        }
    }
    Ok(vec![csv_rows(".csv", &rows)?])
}

/// Standalone fBm sampling, independent of any model section.
pub fn sample_fbm_direct(hurst: f64, n: usize, horizon: f64, paths: usize, dim: usize, seed: u64, exec: Execution) -> CliResult<Vec<u8>> {
    let sampler = FbmSampler::new(hurst, n, horizon)?;
    let drawn: Vec<fracld::Result<GridPath>> = exec.map(paths, |p| sampler.sample(seed, p as u64, dim));
    let mut rows = Vec::new();
    for (p, path) in drawn.into_iter().enumerate() {
        let path = path?;
        for k in 0..path.len() {
            for c in 0..dim {
                rows.push(LongRow { path: p, t: path.time(k), component: c, value: path.get(k, c) });
            }
        }
    }
    Ok(csv_rows(".csv", &rows)?.bytes)
}

#[derive(Serialize)]
struct SimulateSummary {
    trials: usize,
    aborted: usize,
    substeps: usize,
    eps: f64,
    eta: f64,
    /// Mean over trials of `sup_t |X_t - x̄_t|`, with `x̄` the averaged limit.
    mean_sup_error: f64,
    std_sup_error: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct PathRow {
    trial: usize,
    t: f64,
    variable: &'static str,
    component: usize,
    value: f64,
}

#[derive(Serialize)]
struct MeanRow {
    t: f64,
    component: usize,
    mean: f64,
    averaged: f64,
}

fn simulate(ctx: &Ctx, name: &str, trials: usize, save_paths: usize) -> CliResult<Vec<Artifact>> {
    let cfg = ctx.cfg();
    let prep = cfg.prepare()?;
    let grid = cfg.mc_grid()?;
    let drift = prep.drift()?.with_exec(ctx.exec);
    let reference = integrate_limit_path(&drift, &cfg.model.x0, |_| Vec::new(), grid.n, grid.horizon)?;
    let (substeps, cap_warning) = grid.resolve_substeps(prep.spec.eta());
    let seed = ctx.seed_for(name);
    let m = prep.spec.dims().slow;
    let results = simulate_batch(&prep.spec, grid, trials, seed, ctx.exec, |r| r.ok())?;
    let mut warnings: Vec<String> = cap_warning.into_iter().collect();
    let mut errs = Vec::new();
    let mut sums = vec![0.0; grid.n * m];
    let mut done = 0usize;
    let mut path_rows = Vec::new();
    for (i, tr) in results.iter().enumerate() {
        let Some(tr) = tr else { continue };
        done += 1;
        for w in &tr.warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        let mut sup = 0.0f64;
        for k in 0..grid.n {
            for c in 0..m {
                let v = tr.x.get(k, c);
                sums[k * m + c] += v;
                sup = sup.max((v - reference.get(k, c)).abs());
                if i < save_paths {
                    path_rows.push(PathRow { trial: i, t: tr.x.time(k), variable: "x", component: c, value: v });
                }
            }
            if i < save_paths {
                for c in 0..tr.y.dim() {
                    path_rows.push(PathRow { trial: i, t: tr.y.time(k), variable: "y", component: c, value: tr.y.get(k, c) });
                }
            }
        }
        errs.push(sup);
    }
    if done == 0 {
        return Err(fracld::Error::Experiment(format!("all {trials} trials aborted")).into());
    }
    let mean = errs.iter().sum::<f64>() / done as f64;
    let sd = if done > 1 { (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (done - 1) as f64).sqrt() } else { 0.0 };
    let summary = SimulateSummary {
        trials,
        aborted: trials - done,
        substeps,
        eps: prep.spec.eps(),
        eta: prep.spec.eta(),
        mean_sup_error: mean,
        std_sup_error: sd,
        warnings,
    };
    let mean_rows: Vec<MeanRow> = (0..grid.n)
        .flat_map(|k| {
            let (sums, reference) = (&sums, &reference);
            (0..m).map(move |c| MeanRow {
                t: reference.time(k),
                component: c,
                mean: sums[k * m + c] / done as f64,
                averaged: reference.get(k, c),
            })
        })
        .collect();
    let mut out = vec![json("_summary.json", &summary)?, csv_rows("_mean.csv", &mean_rows)?];
    if save_paths > 0 {
        out.push(csv_rows("_paths.csv", &path_rows)?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PoissonReport {
    analytic: bool,
    residual: f64,
    y: Vec<f64>,
    density: Vec<f64>,
    /// Per slow component.
    psi: Vec<Vec<f64>>,
    grad_psi: Vec<Vec<f64>>,
    qqt_bar: Vec<f64>,
    min_eigenvalue: f64,
    nondegenerate: bool,
}

fn poisson(ctx: &Ctx) -> CliResult<Vec<Artifact>> {
    let cfg = ctx.cfg();
    let prep = cfg.prepare()?;
    let d = prep.spec.dims();
    let q = effective_q(prep.model.as_ref(), &prep.psol, &prep.measure, &cfg.model.x0, cfg.tolerances.degeneracy);
    let (y, density): (Vec<f64>, Vec<f64>) = match &prep.measure {
        Measure::Grid(mu) => (mu.grid().to_vec(), mu.density().to_vec()),
        Measure::Gaussian { dim: 1, .. } => {
            let y: Vec<f64> = (0..=160).map(|i| -8.0 + 0.1 * i as f64).collect();
            let dens = y.iter().map(|v| fracld::quadrature::normal_pdf(*v)).collect();
            (y, dens)
        }
        _ => (Vec::new(), Vec::new()),
    };
    let (mut psi, mut grad) = (vec![Vec::new(); d.slow], vec![Vec::new(); d.slow]);
    if d.fast == 1 {
        let mut o = vec![0.0; d.slow];
        for v in &y {
            prep.psol.psi(&[*v], &mut o);
            for c in 0..d.slow {
                psi[c].push(o[c]);
            }
            prep.psol.grad_psi(&[*v], &mut o);
            for c in 0..d.slow {
                grad[c].push(o[c]);
            }
        }
    }
    let rep = PoissonReport {
        analytic: prep.psol.is_analytic(),
        residual: prep.psol.residual(),
        y,
        density,
        psi,
        grad_psi: grad,
        qqt_bar: q.qqt_bar,
        min_eigenvalue: q.min_eigenvalue,
        nondegenerate: q.nondegenerate,
    };
    Ok(vec![json(".json", &rep)?])
}

pub fn load_path(ctx: &Ctx, spec: &PathSpec, drift: &LimitDrift) -> CliResult<GridPath> {
    let cfg = ctx.cfg();
    match spec {
        PathSpec::Csv { file } => {
            let p = ctx.loaded.resolve(file);
            GridPath::load_csv(&p).map_err(|e| match e {
                fracld::Error::Io(io) => CliError::io(&p, io),
                other => other.into(),
            })
        }
        PathSpec::PsiPoly { coeffs } => {
            let k = drift.fbm();
            let coeffs = coeffs.clone();
            Ok(integrate_limit_path(
                drift,
                &cfg.model.x0,
                move |t| vec![coeffs.iter().rev().fold(0.0, |a, c| a * t + c); k],
                cfg.grid.n,
                cfg.grid.horizon,
            )?)
        }
    }
}

fn rate(ctx: &Ctx, method: &str, path: &PathSpec, hurst: Option<f64>) -> CliResult<Vec<Artifact>> {
    let method: Method = method.parse()?;
    let prep = ctx.cfg().prepare()?;
    let drift = prep.drift()?.with_exec(ctx.exec);
    let phi = load_path(ctx, path, &drift)?;
    let result = evaluate_rate(&prep, &drift, &phi, method, hurst.unwrap_or(ctx.cfg().model.hurst), ctx.exec)?;
    Ok(vec![json(".json", &result)?])
}

pub fn evaluate_rate(
    prep: &Prepared,
    drift: &LimitDrift,
    phi: &GridPath,
    method: Method,
    hurst: f64,
    exec: Execution,
) -> CliResult<fracld::rate_fn::RateEvalResult> {
    let drift = drift.clone().with_start(prep.spec.x0().to_vec());
    let ctx = || HurstContext::with_exec(hurst, phi.len(), phi.dt(), exec);
    Ok(match method {
        Method::Explicit => eval_rate_explicit(phi, &drift, &ctx()?)?,
        Method::General => eval_rate_general(phi, &drift, &ctx()?)?,
        Method::FwHalf => eval_rate_fw_half(phi, &drift)?,
        Method::TildeHalf => eval_rate_tilde_half(phi, &drift)?,
    })
}

fn limit_study(ctx: &Ctx, hursts: &[f64], path: &PathSpec) -> CliResult<Vec<Artifact>> {
    let prep = ctx.cfg().prepare()?;
    let drift = prep.drift()?.with_exec(ctx.exec);
    let phi = load_path(ctx, path, &drift)?;
    let study = h_limit_study(&phi, &drift.with_start(prep.spec.x0().to_vec()), hursts)?;
    Ok(vec![csv_rows(".csv", &study.rows)?, json(".json", &study)?])
}

/// `σ̄1` when the slow equation is `dX = √ε σ1 dB^H` with scalar state and
/// `σ1` free of `x`; the endpoint is then Gaussian and rates are explicit.
fn gaussian_endpoint_scale(model: &BuiltinModel, measure: &Measure) -> Option<f64> {
    let d = model.dims();
    let zero = |v: &Vec<Func>| v.iter().all(|f| matches!(f, Func::Zero) || *f == Func::Constant { value: 0.0 });
    if d.slow != 1 || d.fbm != 1 || !zero(&model.b) || !zero(&model.c) || !zero(&model.sigma2) {
        return None;
    }
    if model.sigma1.iter().any(|f| f.depends_on(Var::X)) {
        return None;
    }
    let s = measure.average(|y| {
        let mut o = [0.0];
        model.sigma1(&[0.0], y, &mut o);
        vec![o[0]]
    })[0];
    (s != 0.0).then_some(s)
}

#[derive(Serialize)]
struct LaplaceReport<'a> {
    functional: &'a Functional,
    rows: &'a [fracld::ldp_harness::LaplaceRow],
    /// `ε → 0` limit from the Gaussian endpoint law, when it applies.
    limit: Option<f64>,
}

fn laplace(ctx: &Ctx, name: &str, functional: &Functional, trials: usize) -> CliResult<Vec<Artifact>> {
    let cfg = ctx.cfg();
    let prep = cfg.prepare()?;
    let exp = LaplaceExperiment {
        spec: prep.spec.clone(),
        schedule: cfg.schedule.pairs(),
        functional: functional.clone(),
        trials,
        seed: ctx.seed_for(name),
        grid: cfg.mc_grid()?,
        exec: ctx.exec,
    };
    let rows = estimate_laplace(&exp)?;
    let limit = match (functional, gaussian_endpoint_scale(&prep.model, &prep.measure)) {
        (Functional::TerminalPenalty { rho, target, .. }, Some(s)) => {
            let v = s * s * cfg.grid.horizon.powf(2.0 * cfg.model.hurst);
            Some(gaussian_penalty_value(*rho, target[0], cfg.model.x0[0], v, 0.0))
        }
        (Functional::Constant { value }, _) => Some(*value),
        _ => None,
    };
    Ok(vec![csv_rows(".csv", &rows)?, json(".json", &LaplaceReport { functional, rows: &rows, limit })?])
}

fn rare_event(ctx: &Ctx, name: &str, threshold: f64, component: usize, trials: usize, pilot: usize) -> CliResult<Vec<Artifact>> {
    let cfg = ctx.cfg();
    let prep = cfg.prepare()?;
    let prediction = gaussian_endpoint_scale(&prep.model, &prep.measure)
        .map(|s| gaussian_exceedance_rate(threshold, cfg.model.x0[0], s, cfg.grid.horizon, cfg.model.hurst));
    let exp = RareEventExperiment {
        spec: prep.spec.clone(),
        component,
        threshold,
        schedule: cfg.schedule.pairs(),
        trials,
        seed: ctx.seed_for(name),
        grid: cfg.mc_grid()?,
        exec: ctx.exec,
        prediction,
        pilot_trials: pilot,
    };
    let table = estimate_rare_event(&exp)?;
    Ok(vec![csv_rows(".csv", &table.rows)?, json(".json", &table)?])
}

