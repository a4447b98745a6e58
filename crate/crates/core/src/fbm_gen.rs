//! Exact fractional Brownian motion sampling by circulant embedding of the
//! increment covariance, and path-regularity diagnostics.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::frac_calc::abs_piece;
use crate::grid::GridPath;
use crate::rng::{bm_stream, fbm_stream, stream_rng, MAX_COMPONENTS};

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocov(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Covariance `R_H(s, t)` of standard fBm.
pub fn fbm_cov(hurst: f64, s: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (s.abs().powf(h2) + t.abs().powf(h2) - (t - s).abs().powf(h2))
}

#[derive(Clone)]
enum Method {
    Circulant {
        sqrt_eig: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky {
        lower: DMatrix<f64>,
    },
}

/// Sampler for scalar fBm on `n` points spanning `[0, horizon]`, caching the
/// spectral factor of the increment covariance.
#[derive(Clone)]
pub struct FbmSampler {
    hurst: f64,
    n: usize,
    dt: f64,
    method: Method,
}

impl std::fmt::Debug for FbmSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbmSampler")
            .field("hurst", &self.hurst)
            .field("n", &self.n)
            .field("dt", &self.dt)
            .field("circulant", &self.is_circulant())
            .finish()
    }
}

impl FbmSampler {
    pub fn new(hurst: f64, n: usize, horizon: f64) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::invalid(format!(
                "Hurst index must lie in (0, 1), got {hurst}"
            )));
        }
        if n < 2 {
            return Err(Error::invalid("need at least two grid points"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let m = n - 1;
        let half = m.next_power_of_two();
        let size = 2 * half;
        let mut row: Vec<Complex<f64>> = (0..size)
            .map(|k| {
                let lag = if k <= half { k } else { size - k };
                Complex::new(fgn_autocov(hurst, lag), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut row);
        let max = row.iter().fold(0.0f64, |a, c| a.max(c.re));
        let method = if row.iter().all(|c| c.re >= -1e-10 * max) {
            Method::Circulant {
                sqrt_eig: row
                    .iter()
                    .map(|c| (c.re.max(0.0) / size as f64).sqrt())
                    .collect(),
                fft,
            }
        } else {
            let cov = DMatrix::from_fn(m, m, |i, j| fgn_autocov(hurst, i.abs_diff(j)));
            let chol = cov.cholesky().ok_or_else(|| {
                Error::Internal("circulant embedding and Cholesky both failed".into())
            })?;
            Method::Cholesky { lower: chol.l() }
        };
        Ok(FbmSampler {
            hurst,
            n,
            dt: horizon / m as f64,
            method,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.method, Method::Circulant { .. })
    }

    /// Increments `B_{t_{k+1}} - B_{t_k}`, `k = 0..n-1`.
    pub fn increments<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.n - 1;
        let scale = self.dt.powf(self.hurst);
        match &self.method {
            Method::Circulant { sqrt_eig, fft } => {
                let mut buf: Vec<Complex<f64>> = sqrt_eig
                    .iter()
                    .map(|s| {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        Complex::new(s * a, s * b)
                    })
                    .collect();
                fft.process(&mut buf);
                buf[..m].iter().map(|c| c.re * scale).collect()
            }
            Method::Cholesky { lower } => {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                (lower * z).iter().map(|v| v * scale).collect()
            }
        }
    }

    /// Levels `B_{t_k}` starting from zero.
    pub fn levels<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        cumulative(&self.increments(rng))
    }

    /// A `dim`-dimensional path with i.i.d. components for `(seed, trial)`.
    pub fn sample(&self, seed: u64, trial: u64, dim: usize) -> Result<GridPath> {
        check_dim(dim)?;
        if dim == 0 {
            return Ok(GridPath::empty(0.0, self.dt, self.n));
        }
        let cols: Vec<Vec<f64>> = (0..dim)
            .map(|c| self.levels(&mut stream_rng(seed, fbm_stream(trial, c))))
            .collect();
        GridPath::from_components(0.0, self.dt, &cols)
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim > MAX_COMPONENTS {
        return Err(Error::invalid(format!(
            "at most {MAX_COMPONENTS} noise components are supported"
        )));
    }
    Ok(())
}

fn cumulative(incr: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(incr.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for d in incr {
        acc += d;
        out.push(acc);
    }
    out
}

/// A `dim`-dimensional fBm on `n` points of `[0, horizon]`.
pub fn sample_fbm(hurst: f64, n: usize, horizon: f64, dim: usize, seed: u64) -> Result<GridPath> {
    FbmSampler::new(hurst, n, horizon)?.sample(seed, 0, dim)
}

/// Independent fBm and Brownian drivers on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub bh: GridPath,
    pub w: GridPath,
    pub seed: u64,
    pub hurst: f64,
}

impl NoiseBundle {
    /// All-zero drivers, for deterministic runs.
    pub fn zero(hurst: f64, n: usize, dt: f64, k: usize, ell: usize) -> Self {
        let mk = |d: usize| {
            if d == 0 {
                GridPath::empty(0.0, dt, n)
            } else {
                GridPath::zeros(0.0, dt, n, d)
            }
        };
        NoiseBundle {
            bh: mk(k),
            w: mk(ell),
            seed: 0,
            hurst,
        }
    }

    pub fn len(&self) -> usize {
        self.bh.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bh.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.bh.dt()
    }
}

/// Reusable sampler of noise bundles for Monte Carlo.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    fbm: FbmSampler,
    k: usize,
    ell: usize,
}

impl NoiseSampler {
    pub fn new(hurst: f64, n: usize, horizon: f64, k: usize, ell: usize) -> Result<Self> {
        check_dim(k)?;
        check_dim(ell)?;
        Ok(NoiseSampler {
            fbm: FbmSampler::new(hurst, n, horizon)?,
            k,
            ell,
        })
    }

    pub fn fbm(&self) -> &FbmSampler {
        &self.fbm
    }

    pub fn bundle(&self, seed: u64, trial: u64) -> Result<NoiseBundle> {
        let n = self.fbm.n;
        let dt = self.fbm.dt;
        let bh = self.fbm.sample(seed, trial, self.k)?;
        let w = if self.ell == 0 {
            GridPath::empty(0.0, dt, n)
        } else {
            let sd = dt.sqrt();
            let cols: Vec<Vec<f64>> = (0..self.ell)
                .map(|c| {
                    let mut rng = stream_rng(seed, bm_stream(trial, c));
                    let incr: Vec<f64> = (0..n - 1)
                        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    cumulative(&incr)
                })
                .collect();
            GridPath::from_components(0.0, dt, &cols)?
        };
        Ok(NoiseBundle {
            bh,
            w,
            seed,
            hurst: self.fbm.hurst,
        })
    }
}

/// Noise bundle with `k` fBm and `ell` Brownian components.
pub fn sample_noise_bundle(
    hurst: f64,
    n: usize,
    horizon: f64,
    k: usize,
    ell: usize,
    seed: u64,
) -> Result<NoiseBundle> {
    NoiseSampler::new(hurst, n, horizon, k, ell)?.bundle(seed, 0)
}

/// Grid maxima of the Hölder seminorm and the two `W^{α,∞}`-type norms.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PathNorms {
    pub holder_seminorm: f64,
    pub w0_norm: f64,
    pub wt_norm: f64,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Evaluates [`PathNorms`] on the grid in `O(n²)` operations.
pub fn path_norms(f: &GridPath, alpha: f64) -> Result<PathNorms> {
    path_norms_with(f, alpha, Execution::default())
}

pub fn path_norms_with(f: &GridPath, alpha: f64, exec: Execution) -> Result<PathNorms> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "order must lie in (0, 1), got {alpha}"
        )));
    }
    if f.dim() == 0 || f.len() < 2 {
        return Err(Error::invalid(
            "path norms need a non-empty path with two or more points",
        ));
    }
    let n = f.len();
    let dt = f.dt();
    let p = -alpha - 1.0;
    let sc = dt.powf(-alpha);
    let d = f.dim();
    let zero = vec![0.0; d];
    // Row s: sup over t > s of the Hölder quotient and of the W_T quantity.
    let rows = exec.map(n, |s| {
        let xs = f.row(s);
        let mut holder = 0.0f64;
        let mut wt = 0.0f64;
        let mut acc = 0.0;
        for t in s + 1..n {
            let mm = (t - 1 - s) as f64;
            let da: Vec<f64> = f.row(t - 1).iter().zip(xs).map(|(a, b)| a - b).collect();
            let db: Vec<f64> = f.row(t).iter().zip(xs).map(|(a, b)| a - b).collect();
            acc += abs_piece(&da, &db, mm, mm + 1.0, p);
            let q = dist(f.row(t), xs) / ((t - s) as f64 * dt).powf(alpha);
            holder = holder.max(q);
            wt = wt.max(q + sc * acc);
        }
        // |Δ_α| X_{0,s}: numerator X_s - X_r over r ∈ [0, s].
        let mut w0 = 0.0;
        for m in 0..s {
            let da: Vec<f64> = xs.iter().zip(f.row(s - m)).map(|(a, b)| a - b).collect();
            let db: Vec<f64> = xs
                .iter()
                .zip(f.row(s - m - 1))
                .map(|(a, b)| a - b)
                .collect();
            w0 += abs_piece(&da, &db, m as f64, m as f64 + 1.0, p);
        }
        (holder, wt, dist(xs, &zero) + sc * w0)
    });
    let mut out = PathNorms {
        holder_seminorm: 0.0,
        w0_norm: 0.0,
        wt_norm: 0.0,
    };
    for (h, wt, w0) in rows {
        out.holder_seminorm = out.holder_seminorm.max(h);
        out.wt_norm = out.wt_norm.max(wt);
        out.w0_norm = out.w0_norm.max(w0);
    }
    if !(out.holder_seminorm.is_finite() && out.wt_norm.is_finite() && out.w0_norm.is_finite()) {
        return Err(Error::Regularity("path norm is not finite".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_formula() {
        assert!((fbm_cov(0.7, 0.5, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(fgn_autocov(0.5, 3), 0.0);
        assert_eq!(fgn_autocov(0.3, 0), 1.0);
    }

    #[test]
    fn deterministic_and_starts_at_zero() {
        let a = sample_fbm(0.7, 100, 1.0, 2, 11).unwrap();
        let b = sample_fbm(0.7, 100, 1.0, 2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.row(0), &[0.0, 0.0]);
        assert_ne!(a.component(0), a.component(1));
    }

    #[test]
    fn embedding_is_nonnegative_across_h() {
        for &h in &[0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
            assert!(FbmSampler::new(h, 1000, 1.0).unwrap().is_circulant());
        }
    }

    #[test]
    fn empty_brownian_part() {
        let b = sample_noise_bundle(0.7, 50, 1.0, 1, 0, 3).unwrap();
        assert_eq!(b.w.dim(), 0);
        assert_eq!(b.w.len(), 50);
        let c = sample_noise_bundle(0.7, 50, 1.0, 1, 2, 3).unwrap();
        assert_eq!(b.bh, c.bh);
    }

    #[test]
    fn norms_of_simple_paths() {
        let c = GridPath::on_unit(20, 1.0, |_| -2.0).unwrap();
        let r = path_norms(&c, 0.5).unwrap();
        assert_eq!(r.holder_seminorm, 0.0);
        assert_eq!(r.w0_norm, 2.0);
        assert_eq!(r.wt_norm, 0.0);
        let t = GridPath::on_unit(65, 1.0, |t| t).unwrap();
        let r = path_norms(&t, 0.5).unwrap();
        assert!((r.holder_seminorm - 1.0).abs() < 1e-12);
        // |Δ_α| t at t=1 is 1/(1-α) = 2, plus |X_1| = 1.
        assert!((r.w0_norm - 3.0).abs() < 1e-12);
    }
}
