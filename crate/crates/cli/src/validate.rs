//! Side-effect-free checks of a configuration before anything runs.

use std::fmt;

use fracld::coefficients::{SlowFastModel, Var};
use fracld::ldp_harness::validate_schedule;
use fracld::multiscale_sim::Regime;
use fracld::poisson_cell::{effective_q, prepare_fast};
use serde::Serialize;

use crate::config::Config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Warn => "warn",
            Status::Fail => "fail",
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn hard_failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| c.status == Status::Fail).collect()
    }

    pub fn passed(&self) -> bool {
        self.hard_failures().is_empty()
    }

    fn push(&mut self, name: &'static str, status: Status, detail: impl Into<String>) {
        self.checks.push(Check { name, status, detail: detail.into() });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{:<5} {:<22} {}", c.status, c.name, c.detail)?;
        }
        Ok(())
    }
}

pub fn validate(cfg: &Config) -> Report {
    let mut r = Report { checks: Vec::new() };
    let model = match cfg.builtin_model() {
        Ok(m) => {
            r.push("coefficients", Status::Pass, "entries match the declared dimensions");
            m
        }
        Err(e) => {
            r.push("coefficients", Status::Fail, e.to_string());
            return r;
        }
    };
    let dims = model.dims();
    let sigma_y = model.sigma1.iter().any(|f| f.depends_on(Var::Y));
    let branch = if dims.fbm > 0 && sigma_y { Regime::FastDiffusion } else { Regime::SlowDiffusion };
    match cfg.spec(std::sync::Arc::new(model.clone())) {
        Ok(_) => r.push(
            "hurst-branch",
            Status::Pass,
            match branch {
                Regime::FastDiffusion => format!("sigma1 sees y; H = {} and beta = {:?} admissible", cfg.model.hurst, cfg.model.beta),
                Regime::SlowDiffusion => format!("sigma1 = sigma1(x); H = {} in (1/2, 1)", cfg.model.hurst),
            },
        ),
        Err(e) => r.push("hurst-branch", Status::Fail, e.to_string()),
    }

    if cfg.experiments.iter().any(|e| e.uses_schedule()) {
        let sched = cfg.schedule.pairs();
        match cfg.spec(std::sync::Arc::new(model.clone())) {
            Ok(spec) => match validate_schedule(&spec, &sched) {
                Ok(()) => r.push("schedule", Status::Pass, format!("{} (eps, eta) pairs, ratios decreasing", sched.len())),
                Err(e) => r.push("schedule", Status::Fail, e.to_string()),
            },
            Err(_) => r.push("schedule", Status::Fail, "model scales invalid"),
        }
    }

    if dims.fast == 0 {
        r.push("centering", Status::Pass, "no fast variable");
        return r;
    }
    match prepare_fast(&model, cfg.tolerances.centering, cfg.tolerances.poisson_points) {
        Ok((mu, psol)) => {
            r.push(
                "centering",
                Status::Pass,
                if psol.is_analytic() {
                    "b is linear in an OU fast variable".to_string()
                } else {
                    format!("cell problem solved, residual {:.2e}", psol.residual())
                },
            );
            r.push("tau-nondegenerate", Status::Pass, "tau^2 > 0 on the truncated domain");
            if dims.bm > 0 {
                let q = effective_q(&model, &psol, &mu, &cfg.model.x0, cfg.tolerances.degeneracy);
                r.push(
                    "qqt-min-eigenvalue",
                    if q.nondegenerate { Status::Pass } else { Status::Warn },
                    format!("{:.4e} at x0", q.min_eigenvalue),
                );
            }
        }
        Err(fracld::Error::Centering { mean }) => {
            r.push("centering", Status::Fail, format!("integral of b against mu is {mean:.3e}"));
        }
        Err(fracld::Error::Degenerate(d)) => r.push("tau-nondegenerate", Status::Fail, d),
        Err(e @ fracld::Error::Truncation(_)) => r.push("domain", Status::Fail, e.to_string()),
        Err(e) => r.push("fast-process", Status::Fail, e.to_string()),
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(hurst: f64, sigma1: &str, b: &str) -> Config {
        let text = format!(
            r#"
[model]
dims = {{ slow = 1, fast = 1, fbm = 1, bm = 1 }}
hurst = {hurst}
eps = 0.01
eta = 0.001
x0 = [0.0]
[model.coefficients]
b = [{b}]
sigma1 = [{sigma1}]
f = [{{ kind = "linear", y = [-1.0] }}]
tau = [{{ kind = "constant", value = 1.4142135623730951 }}]
"#
        );
        toml::from_str(&text).unwrap()
    }

    const LIN_B: &str = r#"{ kind = "linear", y = [2.0] }"#;

    #[test]
    fn ou_centering_passes() {
        let r = validate(&cfg(0.7, r#"{ kind = "constant", value = 1.0 }"#, LIN_B));
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn fast_sigma_needs_large_hurst() {
        let r = validate(&cfg(0.7, r#"{ kind = "cosine" }"#, LIN_B));
        assert!(r.hard_failures().iter().any(|c| c.name == "hurst-branch"));
    }

    #[test]
    fn slow_sigma_allows_small_hurst() {
        let r = validate(&cfg(0.6, r#"{ kind = "cosine", var = "x" }"#, LIN_B));
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn uncentered_b_fails() {
        let r = validate(&cfg(0.7, r#"{ kind = "constant", value = 1.0 }"#, r#"{ kind = "polynomial", coeffs = [0.0, 0.0, 1.0] }"#));
        assert!(r.hard_failures().iter().any(|c| c.name == "centering"), "{r}");
    }
}
