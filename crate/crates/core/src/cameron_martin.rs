//! Cameron–Martin operators of fractional Brownian motion for `H > 1/2`:
//! `K_H`, its time derivative `K̇_H`, the inverse `K_H^{-1}` and the
//! Cameron–Martin norm.
//!
//! All operators act on paths sampled on `t_k = k·dt`, `k = 0..n`, and
//! treat inputs as piecewise linear between nodes.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frac_calc::{marchaud_delta_unscaled, moment_table};
use crate::grid::GridPath;
use crate::quadrature::{gamma, gl8, incomplete_beta_lower};

/// The constant `c_H` normalizing `K_H`, for `H ∈ (0, 1)`.
pub fn c_h(hurst: f64) -> Result<f64> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::invalid(format!(
            "Hurst index must lie in (0, 1), got {hurst}"
        )));
    }
    let sq = 2.0 * hurst * gamma(1.5 - hurst) * gamma(hurst + 0.5) / gamma(2.0 - 2.0 * hurst);
    Ok(sq.sqrt())
}

/// `H` together with its derived constants and the kernel tables of one grid.
///
/// The `K̇_H` table stores, for every node `t_i`, the weights that map the
/// nodal values of a piecewise-linear `v` to
/// `(1/Γ(H-1/2)) ∫_0^{t_i} z^{1/2-H} (t_i - z)^{H-3/2} v(z) dz · t_i^{H-1/2}`
/// after factoring out `t_i^{H-1/2}`. After the substitution `z = t_i x` the
/// weights do not depend on `dt`.
#[derive(Debug, Clone)]
pub struct HurstContext {
    hurst: f64,
    c_h: f64,
    c_h_gamma: f64,
    n: usize,
    dt: f64,
    kdot: Vec<f64>,
    marchaud: Vec<(f64, f64)>,
    outer: Vec<(f64, f64)>,
}

fn row_offset(i: usize) -> usize {
    (i - 1) * (i + 2) / 2
}

impl HurstContext {
    pub fn new(hurst: f64, n: usize, dt: f64) -> Result<Self> {
        Self::with_exec(hurst, n, dt, Execution::default())
    }

    /// Context for `n` nodes spanning `[0, horizon]`.
    pub fn on_horizon(hurst: f64, n: usize, horizon: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("need at least two grid points"));
        }
        Self::new(hurst, n, horizon / (n - 1) as f64)
    }

    pub fn with_exec(hurst: f64, n: usize, dt: f64, exec: Execution) -> Result<Self> {
        if !(hurst > 0.5 && hurst < 1.0) {
            return Err(Error::invalid(format!(
                "Cameron–Martin operators need H in (1/2, 1), got {hurst}"
            )));
        }
        if n < 3 {
            return Err(Error::invalid("need at least three grid points"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("time step must be positive"));
        }
        let c = c_h(hurst)?;
        let a = 1.5 - hurst;
        let b = hurst - 0.5;
        let rows = kdot_rows(a, b, n, exec);
        let mut kdot = Vec::with_capacity(row_offset(n));
        for r in rows {
            kdot.extend(r);
        }
        Ok(HurstContext {
            hurst,
            c_h: c,
            c_h_gamma: c * gamma(a),
            n,
            dt,
            kdot,
            marchaud: moment_table(n, -hurst - 0.5),
            outer: moment_table(n, hurst - 0.5),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn c_h(&self) -> f64 {
        self.c_h
    }

    /// `c_H Γ(3/2 - H)`, the value of `t^{1/2-H} K̇_H[1](t)`.
    pub fn c_h_gamma(&self) -> f64 {
        self.c_h_gamma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Nodal weights of row `i ≥ 1` (length `i + 1`).
    pub fn kdot_row(&self, i: usize) -> &[f64] {
        let o = row_offset(i);
        &self.kdot[o..o + i + 1]
    }

    /// Factor multiplying [`HurstContext::kdot_row`] at node `i`: `c_H t_i^{H-1/2}`.
    pub fn kdot_scale(&self, i: usize) -> f64 {
        self.c_h * self.time(i).powf(self.hurst - 0.5)
    }

    fn check(&self, p: &GridPath) -> Result<()> {
        if p.len() != self.n {
            return Err(Error::invalid(format!(
                "path has {} points, context expects {}",
                p.len(),
                self.n
            )));
        }
        if p.t0() != 0.0 {
            return Err(Error::invalid(
                "Cameron–Martin operators need paths starting at t = 0",
            ));
        }
        if ((p.dt() - self.dt) / self.dt).abs() > 1e-12 {
            return Err(Error::invalid("path step differs from the context step"));
        }
        if !p.is_finite() {
            return Err(Error::invalid("path contains non-finite values"));
        }
        Ok(())
    }

    /// Inner sums `w_i = Σ_j ω_{ij} v_j`, with the limit `Γ(3/2-H) v_0` at 0.
    fn inner(&self, v: &[f64], exec: Execution) -> Vec<f64> {
        let g = self.c_h_gamma / self.c_h;
        exec.map(self.n, |i| {
            if i == 0 {
                g * v[0]
            } else {
                self.kdot_row(i).iter().zip(v).map(|(w, x)| w * x).sum()
            }
        })
    }

    pub fn kdot_scalar(&self, v: &[f64], exec: Execution) -> Vec<f64> {
        let w = self.inner(v, exec);
        (0..self.n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    self.kdot_scale(i) * w[i]
                }
            })
            .collect()
    }

    pub fn kh_scalar(&self, v: &[f64], exec: Execution) -> Vec<f64> {
        let w = self.inner(v, exec);
        let sc = self.c_h * self.dt.powf(self.hurst + 0.5);
        let mut u = vec![0.0; self.n];
        let mut acc = 0.0;
        for i in 0..self.n - 1 {
            let (i0, i1) = self.outer[i];
            acc += w[i] * i0 + (w[i + 1] - w[i]) * i1;
            u[i + 1] = sc * acc;
        }
        u
    }

    /// `K_H^{-1}` of a path given through `h(t) = t^{1/2-H} u̇(t)` at the nodes.
    fn inverse_from_h(&self, h: &[f64], exec: Execution) -> Vec<f64> {
        let beta = self.hurst - 0.5;
        let delta = marchaud_delta_unscaled(h, &self.marchaud, exec);
        let sc = self.dt.powf(-beta);
        (0..self.n)
            .map(|i| {
                let t = self.time(i);
                let reg = if i == 0 {
                    0.0
                } else {
                    beta * t.powf(beta) * sc * delta[i]
                };
                (h[i] + reg) / self.c_h_gamma
            })
            .collect()
    }

    pub fn kh_inverse_scalar(&self, u: &[f64], exec: Execution) -> Vec<f64> {
        let n = self.n;
        let dt = self.dt;
        let e = 0.5 - self.hurst;
        let mut h = vec![0.0; n];
        // Half-step surrogate at the origin, where t^{1/2-H} is singular.
        h[0] = (0.5 * dt).powf(e) * (u[1] - u[0]) / dt;
        for i in 1..n {
            let d = if i + 1 < n {
                (u[i + 1] - u[i - 1]) / (2.0 * dt)
            } else {
                (3.0 * u[i] - 4.0 * u[i - 1] + u[i - 2]) / (2.0 * dt)
            };
            h[i] = self.time(i).powf(e) * d;
        }
        self.inverse_from_h(&h, exec)
    }

    pub fn kdot_inverse_scalar(&self, udot: &[f64], exec: Execution) -> Vec<f64> {
        let e = 0.5 - self.hurst;
        let mut h: Vec<f64> = (0..self.n)
            .map(|i| {
                if i == 0 {
                    0.0
                } else {
                    self.time(i).powf(e) * udot[i]
                }
            })
            .collect();
        // h is bounded near the origin for admissible inputs; extrapolate.
        h[0] = 2.0 * h[1] - h[2];
        self.inverse_from_h(&h, exec)
    }
}

/// Rows `i = 1..n-1` of the nodal `K̇_H` weights.
fn kdot_rows(a: f64, b: f64, n: usize, exec: Execution) -> Vec<Vec<f64>> {
    let r = gl8();
    let q = r.nodes.len();
    let mut pw = vec![0.0; n * q];
    let mut qw = vec![0.0; n * q];
    for j in 0..n {
        for k in 0..q {
            let x = j as f64 + r.nodes[k];
            pw[j * q + k] = x.powf(a - 1.0);
            qw[j * q + k] = x.powf(b - 1.0);
        }
    }
    let gb = gamma(b);
    let full = gamma(a) * gb;
    exec.map(n - 1, |row| {
        let i = row + 1;
        let mut out = vec![0.0; i + 1];
        let h = 1.0 / i as f64;
        for j in 0..i {
            let m = i - j - 1;
            let (c0, c1) = if i == 1 {
                (full, a * full)
            } else if j == 0 {
                (
                    incomplete_beta_lower(h, a, b),
                    i as f64 * incomplete_beta_lower(h, a + 1.0, b),
                )
            } else if m == 0 {
                let c0 = incomplete_beta_lower(h, b, a);
                (c0, c0 - i as f64 * incomplete_beta_lower(h, b + 1.0, a))
            } else {
                let mut c0 = 0.0;
                let mut c1 = 0.0;
                for k in 0..q {
                    let v = r.weights[k] * pw[j * q + k] * qw[m * q + (q - 1 - k)];
                    c0 += v;
                    c1 += v * r.nodes[k];
                }
                (c0, c1)
            };
            out[j] += (c0 - c1) / gb;
            out[j + 1] += c1 / gb;
        }
        out
    })
}

fn per_component(p: &GridPath, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<GridPath> {
    p.map_components(|c| Ok(f(c)))
}

/// `u = K_H v`, with `u(0) = 0`.
pub fn apply_kh(v: &GridPath, ctx: &HurstContext) -> Result<GridPath> {
    ctx.check(v)?;
    per_component(v, |c| ctx.kh_scalar(c, Execution::default()))
}

/// `K̇_H v = d/dt K_H v`.
pub fn apply_kh_dot(v: &GridPath, ctx: &HurstContext) -> Result<GridPath> {
    ctx.check(v)?;
    per_component(v, |c| ctx.kdot_scalar(c, Execution::default()))
}

fn finite(p: GridPath) -> Result<GridPath> {
    if p.is_finite() {
        Ok(p)
    } else {
        Err(Error::Regularity(
            "inverse Cameron–Martin integral is not finite".into(),
        ))
    }
}

/// `K_H^{-1} u` in the Marchaud form; `u` must vanish at the origin.
pub fn apply_kh_inverse(u: &GridPath, ctx: &HurstContext) -> Result<GridPath> {
    ctx.check(u)?;
    let scale = u.max_abs().max(1.0);
    if u.row(0).iter().any(|x| x.abs() > 1e-12 * scale) {
        return Err(Error::invalid("K_H^{-1} needs u(0) = 0"));
    }
    finite(per_component(u, |c| {
        ctx.kh_inverse_scalar(c, Execution::default())
    })?)
}

/// `K̇_H^{-1} u̇`, i.e. `K_H^{-1}` of the path whose derivative is given.
pub fn apply_kh_dot_inverse(udot: &GridPath, ctx: &HurstContext) -> Result<GridPath> {
    ctx.check(udot)?;
    finite(per_component(udot, |c| {
        ctx.kdot_inverse_scalar(c, Execution::default())
    })?)
}

/// Trapezoid `L²` norm of all components of a path.
pub fn l2_norm(v: &GridPath) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for k in 0..n {
        let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
        s += w * v.row(k).iter().map(|x| x * x).sum::<f64>();
    }
    (s * v.dt()).sqrt()
}

/// Cameron–Martin norm `‖K_H^{-1} u‖_{L²}`.
pub fn hh_norm(u: &GridPath, ctx: &HurstContext) -> Result<f64> {
    Ok(l2_norm(&apply_kh_inverse(u, ctx)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c_h_values() {
        assert_relative_eq!(c_h(0.5).unwrap(), 1.0, epsilon = 1e-14);
        let expect = (1.5 * gamma(0.75) * gamma(1.25) / gamma(0.5)).sqrt();
        assert_relative_eq!(c_h(0.75).unwrap(), expect, epsilon = 1e-15);
        assert!((c_h(0.75).unwrap() - 0.9695).abs() < 1e-4);
        assert!((c_h(0.51).unwrap() * gamma(0.99) - 1.0).abs() < 0.05);
        assert!(c_h(1.0).is_err());
        assert!(c_h(0.0).is_err());
    }

    #[test]
    fn kdot_rows_sum_to_gamma() {
        for &h in &[0.52, 0.7, 0.95] {
            let ctx = HurstContext::new(h, 200, 0.01).unwrap();
            for i in [1, 2, 3, 50, 199] {
                let s: f64 = ctx.kdot_row(i).iter().sum();
                assert_relative_eq!(s, gamma(1.5 - h), max_relative = 1e-11);
                assert!(ctx.kdot_row(i).iter().all(|w| *w >= 0.0));
            }
        }
    }

    #[test]
    fn kdot_monomial_closed_form() {
        // K̇[t^γ](t) = c_H Γ(3/2-H+γ)/Γ(1+γ) t^{γ+H-1/2}; exact for γ = 1 on
        // piecewise-linear data.
        let h = 0.7;
        let ctx = HurstContext::on_horizon(h, 257, 1.0).unwrap();
        let v = GridPath::on_unit(257, 1.0, |t| t).unwrap();
        let kd = apply_kh_dot(&v, &ctx).unwrap();
        for k in [1, 10, 128, 256] {
            let t = kd.time(k);
            let exact = ctx.c_h() * gamma(2.5 - h) / gamma(2.0) * t.powf(0.5 + h);
            assert_relative_eq!(kd.get(k, 0), exact, max_relative = 1e-11);
        }
    }

    #[test]
    fn kh_of_one_and_inverse() {
        let h = 0.75;
        let n = 513;
        let ctx = HurstContext::on_horizon(h, n, 1.0).unwrap();
        let one = GridPath::on_unit(n, 1.0, |_| 1.0).unwrap();
        let u = apply_kh(&one, &ctx).unwrap();
        let cg = ctx.c_h_gamma();
        for k in [0, 7, 512] {
            let t = u.time(k);
            assert_relative_eq!(
                u.get(k, 0),
                cg * t.powf(h + 0.5) / (h + 0.5),
                max_relative = 1e-9,
                epsilon = 1e-300
            );
        }
        let back = apply_kh_inverse(&u, &ctx).unwrap();
        for k in 26..n {
            assert!(
                (back.get(k, 0) - 1.0).abs() < 1e-3,
                "k={k} {}",
                back.get(k, 0)
            );
        }
        assert!((hh_norm(&u, &ctx).unwrap() - 1.0).abs() < 5e-3);
        let zero = GridPath::on_unit(n, 1.0, |_| 0.0).unwrap();
        assert_eq!(apply_kh_inverse(&zero, &ctx).unwrap().max_abs(), 0.0);
        assert_eq!(apply_kh(&zero, &ctx).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn inverse_rejects_nonzero_start() {
        let ctx = HurstContext::on_horizon(0.7, 33, 1.0).unwrap();
        let u = GridPath::on_unit(33, 1.0, |t| 1.0 + t).unwrap();
        assert!(matches!(
            apply_kh_inverse(&u, &ctx),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn kdot_inverse_of_monomial() {
        let h = 0.6;
        let ctx = HurstContext::on_horizon(h, 1025, 1.0).unwrap();
        let udot = GridPath::on_unit(1025, 1.0, |t| t * t).unwrap();
        let v = apply_kh_dot_inverse(&udot, &ctx).unwrap();
        let a = 2.0;
        let coef = gamma(a - h + 1.5) / (ctx.c_h() * gamma(a + 2.0 - 2.0 * h));
        for k in [100, 500, 1024] {
            let t = v.time(k);
            assert_relative_eq!(v.get(k, 0), coef * t.powf(a + 0.5 - h), max_relative = 2e-3);
        }
    }
}
