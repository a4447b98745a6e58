//! Fractional integrals and derivatives of grid paths, the difference-ratio
//! functionals `Δ_α`, `Δ⁻_α` and the Young integral by fractional
//! integration by parts.
//!
//! Every singular kernel is integrated in closed form against the
//! piecewise-linear interpolant of the data, cell by cell.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::GridPath;
use crate::quadrature::{gamma, gl8, linear_power_integral, power_cell_moments};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Left-sided, from the start of the grid.
    Left,
    /// Right-sided, from the end of the grid.
    Right,
}

/// Order and side of a fractional operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracOrder {
    alpha: f64,
    side: Side,
}

impl FracOrder {
    /// An order in `(0, 1]`; `1` is only meaningful for integrals.
    pub fn new(alpha: f64, side: Side) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "fractional order must lie in (0, 1], got {alpha}"
            )));
        }
        Ok(FracOrder { alpha, side })
    }

    pub fn left(alpha: f64) -> Result<Self> {
        Self::new(alpha, Side::Left)
    }

    pub fn right(alpha: f64) -> Result<Self> {
        Self::new(alpha, Side::Right)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn side(&self) -> Side {
        self.side
    }

    fn derivative_order(&self) -> Result<f64> {
        if self.alpha >= 1.0 {
            return Err(Error::invalid("derivative order must lie in (0, 1)"));
        }
        Ok(self.alpha)
    }
}

/// Order of a Young integral matched to an integrator with Hölder exponent
/// `hurst` (the usual choice for an fBm integrator).
pub fn default_young_alpha(hurst: f64) -> f64 {
    (1.0 - hurst + 0.05).clamp(0.01, 0.99)
}

/// Cell moments `(∫_m^{m+1} σ^p, ∫_m^{m+1} (σ-m) σ^p)` for `m = 0..count`.
pub(crate) fn moment_table(count: usize, p: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|m| power_cell_moments(m as f64, p))
        .collect()
}

fn check_grid(f: &GridPath) -> Result<()> {
    if f.len() < 2 {
        return Err(Error::invalid(
            "degenerate grid: at least two points are required",
        ));
    }
    if f.dim() == 0 {
        return Err(Error::invalid("path has no components"));
    }
    Ok(())
}

fn reversed(x: &[f64]) -> Vec<f64> {
    x.iter().rev().copied().collect()
}

/// Left Riemann–Liouville integral of a scalar sequence on a unit-step grid,
/// without the `dt^α` factor: `Γ(α) I^α f(t_n) / dt^α`.
pub(crate) fn rl_left_unscaled(f: &[f64], table: &[(f64, f64)], exec: Execution) -> Vec<f64> {
    exec.map(f.len(), |n| {
        let mut s = 0.0;
        for m in 0..n {
            let (i0, i1) = table[m];
            s += f[n - m] * (i0 - i1) + f[n - m - 1] * i1;
        }
        s
    })
}

/// Riemann–Liouville integral `I^α_{a+} f` or `I^α_{b-} f` on the grid of `f`.
pub fn riemann_liouville(f: &GridPath, order: FracOrder) -> Result<GridPath> {
    riemann_liouville_with(f, order, Execution::default())
}

pub fn riemann_liouville_with(f: &GridPath, order: FracOrder, exec: Execution) -> Result<GridPath> {
    check_grid(f)?;
    let alpha = order.alpha;
    let table = moment_table(f.len(), alpha - 1.0);
    let scale = f.dt().powf(alpha) / gamma(alpha);
    f.map_components(|col| {
        let out = match order.side {
            Side::Left => rl_left_unscaled(col, &table, exec),
            Side::Right => reversed(&rl_left_unscaled(&reversed(col), &table, exec)),
        };
        Ok(out.into_iter().map(|v| v * scale).collect())
    })
}

/// Unscaled left Marchaud sums `Σ_cells ∫ (g_n - g̃(r)) (t_n - r)^{-α-1}` in
/// units of `dt`, for a sequence with `g_0` already subtracted.
pub(crate) fn marchaud_delta_unscaled(
    g: &[f64],
    table: &[(f64, f64)],
    exec: Execution,
) -> Vec<f64> {
    exec.map(g.len(), |n| {
        let mut s = 0.0;
        if n == 0 {
            return s;
        }
        // Singular cell: the numerator vanishes linearly at σ = 0.
        s -= (g[n - 1] - g[n]) * table[0].1;
        for m in 1..n {
            let (i0, i1) = table[m];
            s += (g[n] - g[n - m]) * i0 - (g[n - m - 1] - g[n - m]) * i1;
        }
        s
    })
}

/// A Marchaud derivative split as `regular + boundary · (t-a)^{-α} / Γ(1-α)`,
/// where `boundary` is the value of the path at the base point and
/// `regular` is the derivative of the path with that value removed.
#[derive(Debug, Clone)]
pub struct MarchaudDerivative {
    pub regular: GridPath,
    pub boundary: Vec<f64>,
    pub alpha: f64,
    pub side: Side,
}

impl MarchaudDerivative {
    /// Full derivative on the grid. At the base point the boundary term is
    /// infinite unless the boundary value vanishes.
    pub fn total(&self) -> GridPath {
        let mut out = self.regular.clone();
        let n = out.len();
        let g1 = gamma(1.0 - self.alpha);
        for k in 0..n {
            let dist = match self.side {
                Side::Left => k,
                Side::Right => n - 1 - k,
            } as f64
                * out.dt();
            for (c, b) in self.boundary.iter().enumerate() {
                if *b != 0.0 {
                    out.row_mut(k)[c] += b * dist.powf(-self.alpha) / g1;
                }
            }
        }
        out
    }
}

/// Marchaud derivative in the Weyl form, on the piecewise-linear interpolant.
pub fn marchaud_derivative(f: &GridPath, order: FracOrder) -> Result<MarchaudDerivative> {
    marchaud_derivative_with(f, order, Execution::default())
}

pub fn marchaud_derivative_with(
    f: &GridPath,
    order: FracOrder,
    exec: Execution,
) -> Result<MarchaudDerivative> {
    check_grid(f)?;
    let alpha = order.derivative_order()?;
    let table = moment_table(f.len(), -alpha - 1.0);
    let n = f.len();
    let base = match order.side {
        Side::Left => 0,
        Side::Right => n - 1,
    };
    let boundary = f.row(base).to_vec();
    let dt = f.dt();
    let g1 = gamma(1.0 - alpha);
    let regular = f.map_components(|col| {
        let b = col[base];
        let mut g: Vec<f64> = col.iter().map(|v| v - b).collect();
        if order.side == Side::Right {
            g.reverse();
        }
        let delta = marchaud_delta_unscaled(&g, &table, exec);
        let mut out: Vec<f64> = (0..n)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let tk = k as f64 * dt;
                    (g[k] * tk.powf(-alpha) + alpha * dt.powf(-alpha) * delta[k]) / g1
                }
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regularity("Marchaud integral is not finite".into()));
        }
        if order.side == Side::Right {
            out.reverse();
        }
        Ok(out)
    })?;
    Ok(MarchaudDerivative {
        regular,
        boundary,
        alpha,
        side: order.side,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `Δ_α X_{s,t} = ∫_s^t (X_t - X_r) / (t-r)^{α+1} dr`
    Plus,
    /// `Δ⁻_α X_{s,t} = ∫_s^t (X_r - X_s) / (r-s)^{α+1} dr`
    Minus,
}

/// Linear pieces of the numerator on `[s, t]`, as `(σ_lo, σ_hi, D_lo, D_hi)`
/// with `σ` the distance to the singular end, one entry per component.
fn delta_pieces(
    f: &GridPath,
    s: f64,
    t: f64,
    dir: Direction,
) -> Vec<(f64, f64, Vec<f64>, Vec<f64>)> {
    let d = f.dim();
    let mut knots = vec![s];
    let k0 = ((s - f.t0()) / f.dt()).floor() as i64 + 1;
    let mut k = k0.max(0) as usize;
    while k < f.len() && f.time(k) < t {
        if f.time(k) > s {
            knots.push(f.time(k));
        }
        k += 1;
    }
    knots.push(t);
    let at = |r: f64| {
        let mut v = vec![0.0; d];
        f.interpolate(r, &mut v);
        v
    };
    let xs = at(s);
    let xt = at(t);
    let vals: Vec<Vec<f64>> = knots.iter().map(|&r| at(r)).collect();
    let mut pieces = Vec::with_capacity(knots.len());
    for w in 0..knots.len() - 1 {
        let (ra, rb) = (knots[w], knots[w + 1]);
        let (va, vb) = (&vals[w], &vals[w + 1]);
        let piece = match dir {
            Direction::Plus => {
                let da: Vec<f64> = (0..d).map(|c| xt[c] - vb[c]).collect();
                let db: Vec<f64> = (0..d).map(|c| xt[c] - va[c]).collect();
                (t - rb, t - ra, da, db)
            }
            Direction::Minus => {
                let da: Vec<f64> = (0..d).map(|c| va[c] - xs[c]).collect();
                let db: Vec<f64> = (0..d).map(|c| vb[c] - xs[c]).collect();
                (ra - s, rb - s, da, db)
            }
        };
        pieces.push(piece);
    }
    pieces
}

fn check_interval(f: &GridPath, s: f64, t: f64) -> Result<()> {
    check_grid(f)?;
    if !(s < t) {
        return Err(Error::invalid(format!("need s < t, got s = {s}, t = {t}")));
    }
    let eps = 1e-9 * f.dt();
    if s < f.t0() - eps || t > f.horizon() + eps {
        return Err(Error::invalid("interval leaves the grid range"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "order must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// `∫_lo^hi |A + B(σ-lo)| σ^p dσ` for a scalar linear numerator.
fn abs_linear_power(a: f64, b: f64, lo: f64, hi: f64, p: f64) -> f64 {
    let end = a + b * (hi - lo);
    if a * end >= 0.0 {
        return linear_power_integral(a, b, lo, hi, p).abs();
    }
    let root = lo - a / b;
    linear_power_integral(a, b, lo, root, p).abs()
        + linear_power_integral(0.0, b, root, hi, p).abs()
}

/// Signed `Δ_α f_{s,t}` or `Δ⁻_α f_{s,t}`, one value per component.
pub fn delta_ratio_vec(
    f: &GridPath,
    alpha: f64,
    s: f64,
    t: f64,
    dir: Direction,
) -> Result<Vec<f64>> {
    check_interval(f, s, t)?;
    check_alpha(alpha)?;
    let p = -alpha - 1.0;
    let mut out = vec![0.0; f.dim()];
    for (lo, hi, da, db) in delta_pieces(f, s, t, dir) {
        for c in 0..f.dim() {
            let slope = (db[c] - da[c]) / (hi - lo);
            let a = if lo == 0.0 { 0.0 } else { da[c] };
            out[c] += linear_power_integral(a, slope, lo, hi, p);
        }
    }
    finite_or_regularity(out)
}

/// Absolute variant `|Δ_α| f_{s,t}` or `|Δ⁻_α| f_{s,t}`, using the Euclidean
/// norm of the increment for vector paths.
pub fn delta_ratio_abs(f: &GridPath, alpha: f64, s: f64, t: f64, dir: Direction) -> Result<f64> {
    check_interval(f, s, t)?;
    check_alpha(alpha)?;
    let p = -alpha - 1.0;
    let mut total = 0.0;
    for (lo, hi, da, db) in delta_pieces(f, s, t, dir) {
        total += abs_piece(&da, &db, lo, hi, p);
    }
    finite_or_regularity(vec![total]).map(|v| v[0])
}

pub(crate) fn abs_piece(da: &[f64], db: &[f64], lo: f64, hi: f64, p: f64) -> f64 {
    let h = hi - lo;
    if da.len() == 1 {
        let a = if lo == 0.0 { 0.0 } else { da[0] };
        return abs_linear_power(a, (db[0] - da[0]) / h, lo, hi, p);
    }
    let slope: Vec<f64> = da.iter().zip(db).map(|(a, b)| (b - a) / h).collect();
    if lo == 0.0 {
        // Numerator is exactly σ·slope on the singular piece.
        let norm = slope.iter().map(|v| v * v).sum::<f64>().sqrt();
        return linear_power_integral(0.0, norm, 0.0, hi, p);
    }
    let r = gl8();
    r.nodes
        .iter()
        .zip(&r.weights)
        .map(|(x, w)| {
            let sig = lo + h * x;
            let norm = da
                .iter()
                .zip(&slope)
                .map(|(a, b)| (a + b * h * x).powi(2))
                .sum::<f64>()
                .sqrt();
            w * norm * sig.powf(p)
        })
        .sum::<f64>()
        * h
}

fn finite_or_regularity(v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::Regularity(
            "difference-ratio integral is not finite".into(),
        ))
    }
}

/// Scalar difference-ratio functional covering all four variants. Signed
/// variants require a scalar path; use [`delta_ratio_vec`] for vectors.
pub fn delta_ratio(
    f: &GridPath,
    alpha: f64,
    s: f64,
    t: f64,
    absolute: bool,
    dir: Direction,
) -> Result<f64> {
    if absolute {
        return delta_ratio_abs(f, alpha, s, t, dir);
    }
    if f.dim() != 1 {
        return Err(Error::invalid(
            "signed difference ratio of a vector path: use delta_ratio_vec",
        ));
    }
    Ok(delta_ratio_vec(f, alpha, s, t, dir)?[0])
}

/// Running Young integral `t ↦ ∫_{t0}^t f dg` by fractional integration by
/// parts with order `alpha`.
///
/// A scalar `f` multiplies every component of `g`. Otherwise `f` carries an
/// `m×k` matrix per row (row-major) and `g` has `k` components; the result
/// has `m` components.
pub fn young_integral(f: &GridPath, g: &GridPath, alpha: f64) -> Result<GridPath> {
    young_integral_with(f, g, alpha, Execution::default())
}

pub fn young_integral_with(
    f: &GridPath,
    g: &GridPath,
    alpha: f64,
    exec: Execution,
) -> Result<GridPath> {
    check_grid(f)?;
    check_grid(g)?;
    check_alpha(alpha)?;
    if !f.same_grid(g) {
        return Err(Error::invalid("integrand and integrator must share a grid"));
    }
    let k = g.dim();
    let m = if f.dim() == 1 {
        k
    } else if f.dim().is_multiple_of(k) {
        f.dim() / k
    } else {
        return Err(Error::invalid(format!(
            "integrand dimension {} is not a multiple of integrator dimension {k}",
            f.dim()
        )));
    };
    let plan = YoungPlan::new(f.len(), f.dt(), alpha);
    let df: Vec<(Vec<f64>, f64)> = (0..f.dim())
        .map(|c| plan.left_derivative(&f.component(c), exec))
        .collect::<Result<_>>()?;
    let ig: Vec<Vec<Vec<f64>>> = (0..k)
        .map(|c| plan.right_kernels(&g.component(c), exec))
        .collect::<Result<_>>()?;

    let n = f.len();
    let mut out = vec![0.0; n * m];
    for row in 0..m {
        for (col, kernels) in ig.iter().enumerate() {
            let fi = if f.dim() == 1 { 0 } else { row * k + col };
            let r = plan.combine(&df[fi], kernels, exec);
            for (t, v) in r.into_iter().enumerate() {
                out[t * m + row] += v;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Regularity(
            "Young integral is not finite; the order may not match the path regularity".into(),
        ));
    }
    GridPath::new(f.t0(), f.dt(), m, out)
}

/// Shared tables for the running Young integral.
struct YoungPlan {
    n: usize,
    dt: f64,
    alpha: f64,
    left: Vec<(f64, f64)>,
    right: Vec<(f64, f64)>,
}

impl YoungPlan {
    fn new(n: usize, dt: f64, alpha: f64) -> Self {
        YoungPlan {
            n,
            dt,
            alpha,
            left: moment_table(n, -alpha - 1.0),
            right: moment_table(n, alpha - 2.0),
        }
    }

    /// Regular part of `D^α_{a+} f` at the nodes, and `f(a)`.
    fn left_derivative(&self, f: &[f64], exec: Execution) -> Result<(Vec<f64>, f64)> {
        let a = self.alpha;
        let f0 = f[0];
        let g: Vec<f64> = f.iter().map(|v| v - f0).collect();
        let delta = marchaud_delta_unscaled(&g, &self.left, exec);
        let g1 = gamma(1.0 - a);
        let reg: Vec<f64> = (0..self.n)
            .map(|k| {
                if k == 0 {
                    0.0
                } else {
                    let tk = k as f64 * self.dt;
                    (g[k] * tk.powf(-a) + a * self.dt.powf(-a) * delta[k]) / g1
                }
            })
            .collect();
        if reg.iter().any(|v| !v.is_finite()) {
            return Err(Error::Regularity(
                "left fractional derivative of the integrand diverges".into(),
            ));
        }
        Ok((reg, f0))
    }

    /// For each node `i`, the values `Γ(1-β)·D^β_{t_k-} (g - g(t_k))(t_i)` for
    /// all endpoints `k > i`, with `β = 1-α`, stored as `rows[i][k-i-1]`.
    fn right_kernels(&self, g: &[f64], exec: Execution) -> Result<Vec<Vec<f64>>> {
        let beta = 1.0 - self.alpha;
        let n = self.n;
        let dt = self.dt;
        let sc = dt.powf(-beta);
        let rows = exec.map(n, |i| {
            let mut out = Vec::with_capacity(n - i - 1);
            let mut acc = 0.0;
            for k in i + 1..n {
                // Cell [t_{k-1}, t_k] at distance m = k-1-i from t_i.
                let mm = k - 1 - i;
                let (i0, i1) = self.right[mm];
                let dg = g[k] - g[k - 1];
                if mm == 0 {
                    acc -= dg * i1;
                } else {
                    acc += (g[i] - g[k - 1]) * i0 - dg * i1;
                }
                let dist = (k - i) as f64 * dt;
                let val = (g[i] - g[k]) * dist.powf(-beta) + beta * sc * acc;
                out.push(val);
            }
            out
        });
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Regularity(
                "right fractional derivative of the integrator diverges".into(),
            ));
        }
        Ok(rows)
    }

    /// `∫_a^{t_k} f dg` for every `k`, from the left derivative of `f` and the
    /// right kernels of `g`.
    fn combine(&self, df: &(Vec<f64>, f64), kern: &[Vec<f64>], exec: Execution) -> Vec<f64> {
        let (reg, f0) = (&df.0, df.1);
        let a = self.alpha;
        let n = self.n;
        let dt = self.dt;
        // (-1)^α with the standard right Marchaud derivative reduces to a
        // minus sign; Γ(1-β) = Γ(α) was left out of the kernels.
        let norm = -1.0 / gamma(a);
        let g1 = gamma(1.0 - a);
        // Exact integrals of (t-a)^{-α} against the hat functions.
        let hat = moment_table(n, -a);
        let sc = dt.powf(1.0 - a);
        exec.map(n, |k| {
            if k == 0 {
                return 0.0;
            }
            let mut s = 0.0;
            // The kernel vanishes at i = k, so node k contributes nothing.
            for i in 0..k {
                let kv = kern[i][k - i - 1];
                let w = if i == 0 { 0.5 } else { 1.0 };
                s += w * dt * reg[i] * kv;
                if f0 != 0.0 {
                    // hat_i = rising part on cell i-1 plus falling part on cell i
                    let mut hw = hat[i].0 - hat[i].1;
                    if i > 0 {
                        hw += hat[i - 1].1;
                    }
                    s += f0 / g1 * sc * hw * kv;
                }
            }
            norm * s
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit(n: usize, f: impl Fn(f64) -> f64) -> GridPath {
        GridPath::on_unit(n, 1.0, f).unwrap()
    }

    #[test]
    fn rl_of_one_and_t() {
        let p = riemann_liouville(&unit(101, |_| 1.0), FracOrder::left(0.5).unwrap()).unwrap();
        for k in 0..101 {
            let t = p.time(k);
            assert_relative_eq!(p.get(k, 0), t.sqrt() / gamma(1.5), epsilon = 1e-13);
        }
        let p = riemann_liouville(&unit(101, |t| t), FracOrder::left(0.5).unwrap()).unwrap();
        assert_relative_eq!(p.get(100, 0), 1.0 / gamma(2.5), epsilon = 1e-13);
        let p = riemann_liouville(&unit(11, |_| 1.0), FracOrder::left(1.0).unwrap()).unwrap();
        assert_relative_eq!(p.get(7, 0), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn rl_right_mirrors_left() {
        let f = unit(51, |t| (3.0 * t).sin());
        let r = riemann_liouville(&f, FracOrder::right(0.3).unwrap()).unwrap();
        let g = unit(51, |t| (3.0 * (1.0 - t)).sin());
        let l = riemann_liouville(&g, FracOrder::left(0.3).unwrap()).unwrap();
        for k in 0..51 {
            assert_relative_eq!(r.get(k, 0), l.get(50 - k, 0), epsilon = 1e-13);
        }
    }

    #[test]
    fn degenerate_grid_rejected() {
        let f = GridPath::scalar(0.0, 0.1, vec![1.0]).unwrap();
        assert!(riemann_liouville(&f, FracOrder::left(0.5).unwrap()).is_err());
    }

    #[test]
    fn marchaud_of_linear_and_constant() {
        let d = marchaud_derivative(&unit(65, |t| t), FracOrder::left(0.5).unwrap()).unwrap();
        let tot = d.total();
        for k in 1..65 {
            let t = tot.time(k);
            assert_relative_eq!(tot.get(k, 0), t.sqrt() / gamma(1.5), max_relative = 1e-12);
        }
        let d = marchaud_derivative(&unit(33, |_| 2.0), FracOrder::left(0.3).unwrap()).unwrap();
        assert!(d.regular.max_abs() < 1e-14);
        let tot = d.total();
        assert_relative_eq!(
            tot.get(16, 0),
            2.0 * 0.5f64.powf(-0.3) / gamma(0.7),
            max_relative = 1e-13
        );
    }

    #[test]
    fn marchaud_right_of_linear() {
        // D^α_{1-}(1-t) = (1-t)^{1-α}/Γ(2-α)
        let d =
            marchaud_derivative(&unit(65, |t| 1.0 - t), FracOrder::right(0.4).unwrap()).unwrap();
        let tot = d.total();
        for k in 0..64 {
            let s = 1.0 - tot.time(k);
            assert_relative_eq!(
                tot.get(k, 0),
                s.powf(0.6) / gamma(1.6),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn delta_examples() {
        let f = unit(17, |t| t);
        let v = delta_ratio(&f, 0.25, 0.0, 1.0, false, Direction::Plus).unwrap();
        assert_relative_eq!(v, 4.0 / 3.0, epsilon = 1e-13);
        let a = delta_ratio(&f, 0.25, 0.0, 1.0, true, Direction::Plus).unwrap();
        assert_relative_eq!(a, v, epsilon = 1e-13);
        let m = delta_ratio(&f, 0.25, 0.0, 1.0, false, Direction::Minus).unwrap();
        assert_relative_eq!(m, 4.0 / 3.0, epsilon = 1e-13);
        let c = unit(9, |_| 3.0);
        for dir in [Direction::Plus, Direction::Minus] {
            for abs in [false, true] {
                assert_eq!(delta_ratio(&c, 0.6, 0.1, 0.9, abs, dir).unwrap(), 0.0);
            }
        }
        assert!(delta_ratio(&f, 0.5, 0.5, 0.5, false, Direction::Plus).is_err());
    }

    #[test]
    fn delta_off_grid_endpoints() {
        // Linear path, interval not aligned with the grid.
        let f = unit(11, |t| 2.0 * t);
        let (s, t, a) = (0.13f64, 0.77f64, 0.4f64);
        let exact = 2.0 * (t - s).powf(1.0 - a) / (1.0 - a);
        assert_relative_eq!(
            delta_ratio(&f, a, s, t, false, Direction::Plus).unwrap(),
            exact,
            max_relative = 1e-12
        );
    }

    #[test]
    fn abs_variant_splits_sign_changes() {
        let f = unit(3, |t| (t - 0.5).abs());
        // |Δ⁻| over [0,1] of the tent: numerator |X_r - X_0| = |(|r-1/2| - 1/2)| = r for r<1/2 ...
        let v = delta_ratio_abs(&f, 0.5, 0.0, 1.0, Direction::Minus).unwrap();
        let brute = 2.0 * 0.5f64.sqrt()
            + (1..=2000)
                .map(|i| {
                    let r = 0.5 + (i as f64 - 0.5) / 4000.0;
                    ((r - 0.5) - 0.5_f64).abs() * r.powf(-1.5) / 4000.0
                })
                .sum::<f64>();
        assert_relative_eq!(v, brute, max_relative = 1e-6);
    }

    #[test]
    fn young_smooth_examples() {
        let n = 1025;
        let one = unit(n, |_| 1.0);
        let t2 = unit(n, |t| t * t);
        let r = young_integral(&one, &t2, 0.5).unwrap();
        assert!((r.get(n - 1, 0) - 1.0).abs() < 1e-3);
        let t = unit(n, |t| t);
        let r = young_integral(&t, &t, 0.5).unwrap();
        assert!((r.get(n - 1, 0) - 0.5).abs() < 1e-3);
        let r = young_integral(&t, &t2, 0.5).unwrap();
        assert!((r.get(n - 1, 0) - 2.0 / 3.0).abs() < 1e-3);
        // additivity on the running integral: value at s plus increment equals value at t
        let mid = r.get(512, 0);
        assert!((mid - 2.0 / 3.0 * 0.5f64.powi(3)).abs() < 1e-3);
    }

    #[test]
    fn young_matrix_contraction() {
        let n = 257;
        let g = GridPath::from_components(
            0.0,
            1.0 / 256.0,
            &[
                (0..n).map(|k| k as f64 / 256.0).collect(),
                (0..n).map(|k| (k as f64 / 256.0).powi(2)).collect(),
            ],
        )
        .unwrap();
        // f = [[1, 0], [0, 2]] constant, 2x2 row-major
        let f = GridPath::new(
            0.0,
            1.0 / 256.0,
            4,
            (0..n).flat_map(|_| [1.0, 0.0, 0.0, 2.0]).collect(),
        )
        .unwrap();
        let r = young_integral(&f, &g, 0.4).unwrap();
        assert_eq!(r.dim(), 2);
        assert!((r.get(n - 1, 0) - 1.0).abs() < 2e-3);
        assert!((r.get(n - 1, 1) - 2.0).abs() < 2e-3);
    }
}
