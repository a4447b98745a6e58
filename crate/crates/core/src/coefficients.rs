//! Coefficients of the slow-fast system: a uniform evaluation trait and a
//! small built-in library that configuration files can refer to by name.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of the slow state, fast state, fBm driver and Brownian driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub slow: usize,
    pub fast: usize,
    pub fbm: usize,
    pub bm: usize,
}

/// Coefficient set of the slow-fast system. Matrix-valued coefficients are
/// written row-major into `out`:
///
/// | coefficient | shape |
/// |---|---|
/// | `b(y)`, `c(x,y)` | `slow` |
/// | `sigma1(x,y)` | `slow × fbm` |
/// | `sigma2(x,y)` | `slow × bm` |
/// | `f(y)`, `g(x,y)` | `fast` |
/// | `tau(y)` | `fast × bm` |
pub trait SlowFastModel: Send + Sync {
    fn dims(&self) -> Dims;
    fn b(&self, y: &[f64], out: &mut [f64]);
    fn c(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn sigma1(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn sigma2(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn f(&self, y: &[f64], out: &mut [f64]);
    fn g(&self, x: &[f64], y: &[f64], out: &mut [f64]);
    fn tau(&self, y: &[f64], out: &mut [f64]);

    /// Whether `sigma1` varies with the fast variable. Implementations that
    /// cannot tell should keep the conservative default.
    fn sigma1_depends_on_y(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Var {
    X,
    #[default]
    Y,
}

fn one() -> f64 {
    1.0
}

/// Scalar building block of the built-in coefficients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Func {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `offset + x·coef_x + y·coef_y`; covers OU drifts.
    Linear {
        #[serde(default)]
        x: Vec<f64>,
        #[serde(default)]
        y: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `amp · cos(freq · v + phase)` of one coordinate.
    Cosine {
        #[serde(default = "one")]
        amp: f64,
        #[serde(default = "one")]
        freq: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        var: Var,
        #[serde(default)]
        index: usize,
    },
    /// `Σ_k coeffs[k] v^k` of one coordinate.
    Polynomial {
        coeffs: Vec<f64>,
        #[serde(default)]
        var: Var,
        #[serde(default)]
        index: usize,
    },
}

impl Func {
    pub fn constant(value: f64) -> Self {
        Func::Constant { value }
    }

    pub fn linear(x: Vec<f64>, y: Vec<f64>, offset: f64) -> Self {
        Func::Linear { x, y, offset }
    }

    pub fn cos_y(amp: f64) -> Self {
        Func::Cosine {
            amp,
            freq: 1.0,
            phase: 0.0,
            var: Var::Y,
            index: 0,
        }
    }

    pub fn poly_y(coeffs: Vec<f64>) -> Self {
        Func::Polynomial {
            coeffs,
            var: Var::Y,
            index: 0,
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let coord = |var: Var, i: usize| match var {
            Var::X => x[i],
            Var::Y => y[i],
        };
        match self {
            Func::Zero => 0.0,
            Func::Constant { value } => *value,
            Func::Linear {
                x: cx,
                y: cy,
                offset,
            } => {
                offset
                    + cx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + cy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>()
            }
            Func::Cosine {
                amp,
                freq,
                phase,
                var,
                index,
            } => amp * (freq * coord(*var, *index) + phase).cos(),
            Func::Polynomial { coeffs, var, index } => {
                let v = coord(*var, *index);
                coeffs.iter().rev().fold(0.0, |acc, c| acc * v + c)
            }
        }
    }

    pub fn depends_on(&self, which: Var) -> bool {
        match self {
            Func::Zero | Func::Constant { .. } => false,
            Func::Linear { x, y, .. } => match which {
                Var::X => x.iter().any(|v| *v != 0.0),
                Var::Y => y.iter().any(|v| *v != 0.0),
            },
            Func::Cosine { var, amp, .. } => *var == which && *amp != 0.0,
            Func::Polynomial { var, coeffs, .. } => {
                *var == which && coeffs.iter().skip(1).any(|c| *c != 0.0)
            }
        }
    }

    fn check(&self, slow: usize, fast: usize) -> Result<()> {
        let bound = |var: Var, i: usize| -> Result<()> {
            let lim = if var == Var::X { slow } else { fast };
            if i >= lim {
                return Err(Error::invalid(format!(
                    "coordinate index {i} out of range for {var:?}"
                )));
            }
            Ok(())
        };
        match self {
            Func::Linear { x, y, .. } => {
                if x.len() > slow || y.len() > fast {
                    return Err(Error::invalid(
                        "linear coefficient vector longer than the state",
                    ));
                }
                Ok(())
            }
            Func::Cosine { var, index, .. } | Func::Polynomial { var, index, .. } => {
                bound(*var, *index)
            }
            _ => Ok(()),
        }
    }
}

/// A model assembled from [`Func`] entries; missing coefficients are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinModel {
    pub dims: Dims,
    #[serde(default)]
    pub b: Vec<Func>,
    #[serde(default)]
    pub c: Vec<Func>,
    #[serde(default)]
    pub sigma1: Vec<Func>,
    #[serde(default)]
    pub sigma2: Vec<Func>,
    #[serde(default)]
    pub f: Vec<Func>,
    #[serde(default)]
    pub g: Vec<Func>,
    #[serde(default)]
    pub tau: Vec<Func>,
}

fn fill(funcs: &[Func], x: &[f64], y: &[f64], out: &mut [f64]) {
    if funcs.is_empty() {
        out.fill(0.0);
        return;
    }
    for (o, f) in out.iter_mut().zip(funcs) {
        *o = f.eval(x, y);
    }
}

impl BuiltinModel {
    pub fn new(dims: Dims) -> Self {
        BuiltinModel {
            dims,
            b: vec![],
            c: vec![],
            sigma1: vec![],
            sigma2: vec![],
            f: vec![],
            g: vec![],
            tau: vec![],
        }
    }

    /// Checks entry counts and variable dependencies.
    pub fn validate(&self) -> Result<()> {
        let Dims {
            slow,
            fast,
            fbm,
            bm,
        } = self.dims;
        if slow == 0 {
            return Err(Error::invalid("slow dimension must be at least one"));
        }
        let entries: [(&str, &Vec<Func>, usize); 7] = [
            ("b", &self.b, slow),
            ("c", &self.c, slow),
            ("sigma1", &self.sigma1, slow * fbm),
            ("sigma2", &self.sigma2, slow * bm),
            ("f", &self.f, fast),
            ("g", &self.g, fast),
            ("tau", &self.tau, fast * bm),
        ];
        for (name, funcs, len) in entries {
            if !funcs.is_empty() && funcs.len() != len {
                return Err(Error::invalid(format!(
                    "{name} needs {len} entries, got {}",
                    funcs.len()
                )));
            }
            for f in funcs {
                f.check(slow, fast)?;
            }
        }
        for (name, funcs) in [("b", &self.b), ("f", &self.f), ("tau", &self.tau)] {
            if funcs.iter().any(|f| f.depends_on(Var::X)) {
                return Err(Error::invalid(format!(
                    "{name} may depend on the fast variable only"
                )));
            }
        }
        Ok(())
    }

    pub fn with_b(mut self, v: Vec<Func>) -> Self {
        self.b = v;
        self
    }

    pub fn with_c(mut self, v: Vec<Func>) -> Self {
        self.c = v;
        self
    }

    pub fn with_sigma1(mut self, v: Vec<Func>) -> Self {
        self.sigma1 = v;
        self
    }

    pub fn with_sigma2(mut self, v: Vec<Func>) -> Self {
        self.sigma2 = v;
        self
    }

    pub fn with_f(mut self, v: Vec<Func>) -> Self {
        self.f = v;
        self
    }

    pub fn with_g(mut self, v: Vec<Func>) -> Self {
        self.g = v;
        self
    }

    pub fn with_tau(mut self, v: Vec<Func>) -> Self {
        self.tau = v;
        self
    }

    /// If the fast dynamics are the isotropic OU process `f = -αy`,
    /// `τ = √(2α)·Id` with `b` linear in `y`, returns `(α, Λ)` with
    /// `b(y) = Λy` (`Λ` row-major, `slow × fast`).
    pub fn as_ou(&self) -> Option<(f64, Vec<f64>)> {
        let Dims { slow, fast, bm, .. } = self.dims;
        if fast == 0 || bm != fast || self.f.len() != fast || self.tau.len() != fast * bm {
            return None;
        }
        let mut alpha = None;
        for (i, f) in self.f.iter().enumerate() {
            let Func::Linear { x, y, offset } = f else {
                return None;
            };
            if *offset != 0.0 || x.iter().any(|v| *v != 0.0) {
                return None;
            }
            for (j, c) in y.iter().enumerate() {
                if (j == i) != (*c != 0.0) {
                    return None;
                }
            }
            let a = -y.get(i).copied().unwrap_or(0.0);
            if a <= 0.0 || alpha.is_some_and(|b: f64| (b - a).abs() > 1e-14 * a) {
                return None;
            }
            alpha = Some(a);
        }
        let alpha = alpha?;
        let s = (2.0 * alpha).sqrt();
        for i in 0..fast {
            for j in 0..bm {
                let v = match &self.tau[i * bm + j] {
                    Func::Zero => 0.0,
                    Func::Constant { value } => *value,
                    _ => return None,
                };
                let want = if i == j { s } else { 0.0 };
                if (v - want).abs() > 1e-12 * s {
                    return None;
                }
            }
        }
        let mut lambda = vec![0.0; slow * fast];
        for (r, b) in self.b.iter().enumerate() {
            match b {
                Func::Zero => {}
                Func::Linear { x, y, offset } if *offset == 0.0 && x.iter().all(|v| *v == 0.0) => {
                    for (j, c) in y.iter().enumerate() {
                        lambda[r * fast + j] = *c;
                    }
                }
                _ => return None,
            }
        }
        Some((alpha, lambda))
    }
}

impl SlowFastModel for BuiltinModel {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn b(&self, y: &[f64], out: &mut [f64]) {
        fill(&self.b, &[], y, out)
    }

    fn c(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        fill(&self.c, x, y, out)
    }

    fn sigma1(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        fill(&self.sigma1, x, y, out)
    }

    fn sigma2(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        fill(&self.sigma2, x, y, out)
    }

    fn f(&self, y: &[f64], out: &mut [f64]) {
        fill(&self.f, &[], y, out)
    }

    fn g(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        fill(&self.g, x, y, out)
    }

    fn tau(&self, y: &[f64], out: &mut [f64]) {
        fill(&self.tau, &[], y, out)
    }

    fn sigma1_depends_on_y(&self) -> bool {
        self.sigma1.iter().any(|f| f.depends_on(Var::Y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn func_evaluation() {
        let x = [2.0];
        let y = [0.5];
        assert_eq!(
            Func::linear(vec![-1.0], vec![1.0], 0.25).eval(&x, &y),
            -1.25
        );
        assert_eq!(Func::poly_y(vec![0.0, 0.0, 0.0, 1.0]).eval(&x, &y), 0.125);
        assert!((Func::cos_y(2.0).eval(&x, &y) - 2.0 * 0.5f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn toml_round_trip() {
        let f: Func = toml::from_str("kind = \"linear\"\ny = [-1.0]\n").unwrap();
        assert_eq!(f, Func::linear(vec![], vec![-1.0], 0.0));
    }

    #[test]
    fn ou_detection_and_validation() {
        let d = Dims {
            slow: 1,
            fast: 1,
            fbm: 1,
            bm: 1,
        };
        let m = BuiltinModel::new(d)
            .with_b(vec![Func::linear(vec![], vec![3.0], 0.0)])
            .with_f(vec![Func::linear(vec![], vec![-2.0], 0.0)])
            .with_tau(vec![Func::constant(2.0)]);
        m.validate().unwrap();
        assert_eq!(m.as_ou(), Some((2.0, vec![3.0])));
        assert!(!m.sigma1_depends_on_y());
        let bad = m
            .clone()
            .with_f(vec![Func::linear(vec![1.0], vec![-2.0], 0.0)]);
        assert!(bad.validate().is_err());
        let short = m.with_c(vec![Func::Zero, Func::Zero]);
        assert!(short.validate().is_err());
    }
}
