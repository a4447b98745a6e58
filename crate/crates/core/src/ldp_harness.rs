//! Plain Monte Carlo checks of the small-noise asymptotics: Laplace-type
//! functionals `-ε log E[e^{-h(X)/ε}]` and exceedance rates
//! `-ε log P(X_T ≥ a)` along an `(ε, η)` schedule.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::multiscale_sim::{simulate_batch, McGrid, Regime, SlowFastSpec};
use crate::rng::derive_seed;

/// Minimum number of trials per schedule point.
pub const MIN_TRIALS: usize = 1000;
/// Default `ε` schedule, paired with `η = ε^{3/2}`.
pub const DEFAULT_EPS: [f64; 4] = [0.1, 0.05, 0.02, 0.01];
/// Default cap of the terminal-penalty functional.
pub const DEFAULT_PENALTY_CAP: f64 = 100.0;

/// `(ε, η)` pairs with `η = ε^power`.
pub fn power_schedule(eps: &[f64], power: f64) -> Vec<(f64, f64)> {
    eps.iter().map(|&e| (e, e.powf(power))).collect()
}

pub fn default_schedule() -> Vec<(f64, f64)> {
    power_schedule(&DEFAULT_EPS, 1.5)
}

/// Checks that `√η/√ε` decreases along the schedule and, for models whose
/// `σ1` sees the fast variable, that `√ε/η^β` does too.
pub fn validate_schedule(spec: &SlowFastSpec, schedule: &[(f64, f64)]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::invalid("empty (eps, eta) schedule"));
    }
    let mut prev: Option<(f64, f64)> = None;
    for &(eps, eta) in schedule {
        spec.with_scales(eps, eta)?;
        let r1 = (eta / eps).sqrt();
        let r2 = match (spec.regime(), spec.beta()) {
            (Regime::FastDiffusion, Some(b)) => eps.sqrt() / eta.powf(b),
            _ => 0.0,
        };
        if let Some((p1, p2)) = prev {
            if r1 >= p1 {
                return Err(Error::invalid(format!(
                    "sqrt(eta/eps) does not decrease at eps = {eps}"
                )));
            }
            if spec.regime() == Regime::FastDiffusion && r2 >= p2 {
                return Err(Error::invalid(format!(
                    "sqrt(eps)/eta^beta does not decrease at eps = {eps}"
                )));
            }
        }
        prev = Some((r1, r2));
    }
    Ok(())
}

/// Bounded continuous functionals of the slow path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Functional {
    /// `min(ρ‖X_T - target‖², cap)`.
    TerminalPenalty {
        rho: f64,
        target: Vec<f64>,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    /// `height · (1 - logistic((X_T[c] - threshold)/width))`: close to zero
    /// past the threshold and close to `height` well below it.
    SmoothedExceedance {
        threshold: f64,
        width: f64,
        height: f64,
        component: usize,
    },
    Constant {
        value: f64,
    },
}

fn default_cap() -> f64 {
    DEFAULT_PENALTY_CAP
}

impl Functional {
    pub fn check(&self, slow: usize) -> Result<()> {
        match self {
            Functional::TerminalPenalty { rho, target, cap } => {
                if target.len() != slow || !(*rho >= 0.0) || !(*cap > 0.0 && cap.is_finite()) {
                    return Err(Error::invalid("terminal penalty needs rho >= 0, a finite cap and a target per slow component"));
                }
            }
            Functional::SmoothedExceedance {
                width,
                height,
                component,
                ..
            } => {
                if !(*width > 0.0) || !(*height >= 0.0 && height.is_finite()) || *component >= slow
                {
                    return Err(Error::invalid("smoothed exceedance needs width > 0, finite height >= 0 and a valid component"));
                }
            }
            Functional::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::invalid("constant functional must be finite"));
                }
            }
        }
        Ok(())
    }

    /// `h` evaluated at the terminal state.
    pub fn eval(&self, xt: &[f64]) -> f64 {
        match self {
            Functional::TerminalPenalty { rho, target, cap } => {
                let d2: f64 = xt.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
                (rho * d2).min(*cap)
            }
            Functional::SmoothedExceedance {
                threshold,
                width,
                height,
                component,
            } => {
                let z = (xt[*component] - threshold) / width;
                height * (1.0 - 1.0 / (1.0 + (-z).exp()))
            }
            Functional::Constant { value } => *value,
        }
    }
}

/// `-ε log E[e^{-ρ(X_T - a)²/ε}]` for a Gaussian endpoint `X_T ~ N(x0, εv)`,
/// and its `ε → 0` limit `ρ(a - x0)²/(1 + 2ρv)`.
pub fn gaussian_penalty_value(rho: f64, a: f64, x0: f64, v: f64, eps: f64) -> f64 {
    let k = 1.0 + 2.0 * rho * v;
    rho * (a - x0).powi(2) / k + 0.5 * eps * k.ln()
}

/// `(a - x0)² / (2 s² T^{2H})`: the exceedance rate of `x0 + √ε s B^H_T`.
pub fn gaussian_exceedance_rate(a: f64, x0: f64, s: f64, horizon: f64, hurst: f64) -> f64 {
    (a - x0).powi(2) / (2.0 * s * s * horizon.powf(2.0 * hurst))
}

/// `P(x0 + √ε s B^H_T ≥ a)`.
pub fn gaussian_exceedance_probability(
    a: f64,
    x0: f64,
    s: f64,
    horizon: f64,
    hurst: f64,
    eps: f64,
) -> f64 {
    let sd = s * eps.sqrt() * horizon.powf(hurst);
    Normal::standard().sf((a - x0) / sd)
}

#[derive(Debug, Clone)]
pub struct LaplaceExperiment {
    /// Template system; `(ε, η)` are replaced along the schedule.
    pub spec: SlowFastSpec,
    pub schedule: Vec<(f64, f64)>,
    pub functional: Functional,
    pub trials: usize,
    pub seed: u64,
    pub grid: McGrid,
    pub exec: Execution,
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRow {
    pub eps: f64,
    pub eta: f64,
    /// `-ε log mean(e^{-h/ε})`.
    pub estimate: f64,
    pub std_error: f64,
    pub trials: usize,
    pub aborted: usize,
}

fn terminal_values(
    spec: &SlowFastSpec,
    grid: McGrid,
    trials: usize,
    seed: u64,
    exec: Execution,
    f: impl Fn(&[f64]) -> f64 + Sync + Send,
) -> Result<(Vec<f64>, usize)> {
    let out = simulate_batch(spec, grid, trials, seed, exec, |r| {
        r.ok().and_then(|tr| {
            let x = tr.x.row(tr.x.len() - 1);
            x.iter().all(|v| v.is_finite()).then(|| f(x))
        })
    })?;
    let aborted = out.iter().filter(|v| v.is_none()).count();
    Ok((out.into_iter().flatten().collect(), aborted))
}

/// Log-sum-exp estimator of `-ε log E[e^{-h/ε}]` with a delta-method
/// standard error.
pub fn laplace_estimate(h: &[f64], eps: f64) -> Result<(f64, f64)> {
    if h.is_empty() {
        return Err(Error::Experiment("no completed trials".into()));
    }
    let z: Vec<f64> = h.iter().map(|v| -v / eps).collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = if w.len() > 1 {
        w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let estimate = -eps * (zmax + mean.ln());
    let se = eps * var.sqrt() / (mean * n.sqrt());
    Ok((estimate, se))
}

pub fn estimate_laplace(exp: &LaplaceExperiment) -> Result<Vec<LaplaceRow>> {
    if exp.trials < MIN_TRIALS {
        return Err(Error::invalid(format!(
            "Laplace experiments need at least {MIN_TRIALS} trials"
        )));
    }
    exp.functional.check(exp.spec.dims().slow)?;
    validate_schedule(&exp.spec, &exp.schedule)?;
    exp.schedule
        .iter()
        .enumerate()
        .map(|(i, &(eps, eta))| {
            let spec = exp.spec.with_scales(eps, eta)?;
            let seed = derive_seed(exp.seed, i as u64);
            let (h, aborted) = terminal_values(&spec, exp.grid, exp.trials, seed, exp.exec, |x| {
                exp.functional.eval(x)
            })?;
            if h.is_empty() {
                return Err(Error::Experiment(format!(
                    "all {} trials aborted at eps = {eps}",
                    exp.trials
                )));
            }
            let (estimate, std_error) = laplace_estimate(&h, eps)?;
            Ok(LaplaceRow {
                eps,
                eta,
                estimate,
                std_error,
                trials: exp.trials,
                aborted,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RareEventExperiment {
    pub spec: SlowFastSpec,
    pub component: usize,
    pub threshold: f64,
    pub schedule: Vec<(f64, f64)>,
    pub trials: usize,
    pub seed: u64,
    pub grid: McGrid,
    pub exec: Execution,
    /// `inf{S(φ) : φ_T ≥ a}` when known in closed form.
    pub prediction: Option<f64>,
    /// Trials of the feasibility pilot at the largest `ε`; zero skips it.
    pub pilot_trials: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RareEventRow {
    pub eps: f64,
    pub eta: f64,
    pub hits: usize,
    pub trials: usize,
    pub aborted: usize,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// `-ε log p̂`, absent when no hits were seen.
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    /// With zero hits, `-ε log` of the Wilson upper limit: a lower bound on the rate.
    pub lower_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RareEventTable {
    pub rows: Vec<RareEventRow>,
    pub prediction: Option<f64>,
    /// Whether successive differences of the estimates shrink.
    pub stabilizing: Option<bool>,
    pub note: &'static str,
}

/// Wilson score interval at `z` standard deviations.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let den = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / den;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / den;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

fn stabilizing(est: &[f64]) -> Option<bool> {
    if est.len() < 3 {
        return None;
    }
    let d: Vec<f64> = est.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    Some(d.windows(2).all(|w| w[1] <= w[0] * 1.5 + 1e-12))
}

pub fn estimate_rare_event(exp: &RareEventExperiment) -> Result<RareEventTable> {
    let slow = exp.spec.dims().slow;
    if exp.component >= slow {
        return Err(Error::invalid("threshold component out of range"));
    }
    if exp.trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    validate_schedule(&exp.spec, &exp.schedule)?;
    let c = exp.component;
    let a = exp.threshold;
    let hit = |x: &[f64]| if x[c] >= a { 1.0 } else { 0.0 };
    if exp.pilot_trials > 0 {
        let &(eps, eta) = exp
            .schedule
            .iter()
            .max_by(|x, y| x.0.total_cmp(&y.0))
            .expect("schedule checked non-empty");
        let spec = exp.spec.with_scales(eps, eta)?;
        let (v, _) = terminal_values(
            &spec,
            exp.grid,
            exp.pilot_trials,
            derive_seed(exp.seed, u64::MAX),
            exp.exec,
            hit,
        )?;
        let p = v.iter().sum::<f64>() / v.len().max(1) as f64;
        if p * (exp.trials as f64) < 10.0 {
            return Err(Error::Experiment(format!(
                "pilot estimates P = {p:.3e} at eps = {eps}; {} trials would see fewer than 10 hits",
                exp.trials
            )));
        }
    }
    let rows = exp
        .schedule
        .iter()
        .enumerate()
        .map(|(i, &(eps, eta))| {
            let spec = exp.spec.with_scales(eps, eta)?;
            let (v, aborted) = terminal_values(
                &spec,
                exp.grid,
                exp.trials,
                derive_seed(exp.seed, i as u64),
                exp.exec,
                hit,
            )?;
            let n = v.len();
            if n == 0 {
                return Err(Error::Experiment(format!(
                    "all {} trials aborted at eps = {eps}",
                    exp.trials
                )));
            }
            let hits = v.iter().filter(|h| **h > 0.0).count();
            let p = hits as f64 / n as f64;
            let (lo, hi) = wilson_interval(hits, n, 1.96);
            let (estimate, std_error, lower_bound) = if hits == 0 {
                (None, None, Some(-eps * hi.ln()))
            } else {
                (
                    Some(-eps * p.ln()),
                    Some(eps * ((1.0 - p) / (p * n as f64)).sqrt()),
                    None,
                )
            };
            Ok(RareEventRow {
                eps,
                eta,
                hits,
                trials: exp.trials,
                aborted,
                p_hat: p,
                wilson_lo: lo,
                wilson_hi: hi,
                estimate,
                std_error,
                lower_bound,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let est: Vec<f64> = rows.iter().filter_map(|r| r.estimate).collect();
    Ok(RareEventTable {
        stabilizing: stabilizing(&est),
        rows,
        prediction: exp.prediction,
        note: "exceedance indicators are not continuous; this is a heuristic companion to the Laplace check",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BuiltinModel, Dims, Func};
    use std::sync::Arc;

    fn linear_fbm(sigma: f64, hurst: f64) -> SlowFastSpec {
        let model = BuiltinModel::new(Dims {
            slow: 1,
            fast: 0,
            fbm: 1,
            bm: 0,
        })
        .with_sigma1(vec![Func::constant(sigma)]);
        SlowFastSpec::new(
            Arc::new(model),
            hurst,
            0.1,
            0.1f64.powf(1.5),
            vec![0.0],
            vec![],
            None,
        )
        .unwrap()
    }

    fn grid() -> McGrid {
        McGrid {
            n: 17,
            horizon: 1.0,
            substeps: Some(1),
        }
    }

    fn laplace(functional: Functional, trials: usize) -> Vec<LaplaceRow> {
        let exp = LaplaceExperiment {
            spec: linear_fbm(1.0, 0.7),
            schedule: power_schedule(&[0.1, 0.01], 1.5),
            functional,
            trials,
            seed: 3,
            grid: grid(),
            exec: Execution::default(),
        };
        estimate_laplace(&exp).unwrap()
    }

    #[test]
    fn constant_functionals_are_exact() {
        for row in laplace(Functional::Constant { value: 0.0 }, 1000) {
            assert_eq!(row.estimate, 0.0);
        }
        for row in laplace(Functional::Constant { value: 0.7 }, 1000) {
            assert!((row.estimate - 0.7).abs() < 1e-12);
            assert!(row.std_error < 1e-12);
        }
    }

    #[test]
    fn gaussian_penalty_matches_closed_form() {
        let (rho, a) = (1.0, 0.5);
        let rows = laplace(
            Functional::TerminalPenalty {
                rho,
                target: vec![a],
                cap: DEFAULT_PENALTY_CAP,
            },
            10_000,
        );
        for r in rows {
            let want = gaussian_penalty_value(rho, a, 0.0, 1.0, r.eps);
            assert!(
                (r.estimate - want).abs() < 4.0 * r.std_error + 0.02 * want,
                "{r:?} vs {want}"
            );
        }
    }

    #[test]
    fn estimator_is_underflow_safe() {
        let (e, se) = laplace_estimate(&[50.0, 60.0], 0.01).unwrap();
        assert!(e.is_finite() && (e - 50.0).abs() < 0.01 && se.is_finite());
    }

    #[test]
    fn threshold_at_start_has_half_probability() {
        let exp = RareEventExperiment {
            spec: linear_fbm(1.0, 0.7),
            component: 0,
            threshold: 0.0,
            schedule: power_schedule(&[0.1, 0.05], 1.5),
            trials: 4000,
            seed: 1,
            grid: grid(),
            exec: Execution::default(),
            prediction: Some(0.0),
            pilot_trials: 200,
        };
        let t = estimate_rare_event(&exp).unwrap();
        for r in &t.rows {
            assert!((r.p_hat - 0.5).abs() < 0.03);
            assert!(r.wilson_lo < 0.5 && r.wilson_hi > 0.5);
        }
    }

    #[test]
    fn zero_hits_give_a_bound_and_pilot_rejects() {
        let mut exp = RareEventExperiment {
            spec: linear_fbm(1.0, 0.7),
            component: 0,
            threshold: 5.0,
            schedule: power_schedule(&[0.01], 1.5),
            trials: 1000,
            seed: 1,
            grid: grid(),
            exec: Execution::default(),
            prediction: None,
            pilot_trials: 0,
        };
        let t = estimate_rare_event(&exp).unwrap();
        assert_eq!(t.rows[0].hits, 0);
        assert!(t.rows[0].estimate.is_none() && t.rows[0].lower_bound.unwrap() > 0.0);
        exp.pilot_trials = 500;
        assert!(matches!(
            estimate_rare_event(&exp),
            Err(Error::Experiment(_))
        ));
    }

    #[test]
    fn schedule_must_shrink() {
        let spec = linear_fbm(1.0, 0.7);
        assert!(validate_schedule(&spec, &default_schedule()).is_ok());
        assert!(validate_schedule(&spec, &[(0.01, 0.001), (0.1, 0.03)]).is_err());
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson_interval(30, 1000, 1.96);
        assert!(lo < 0.03 && 0.03 < hi && lo > 0.0);
        assert_eq!(wilson_interval(0, 100, 1.96).0, 0.0);
    }
}
