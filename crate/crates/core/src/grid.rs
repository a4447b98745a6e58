use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values of a `dim`-dimensional path on the uniform grid `t0 + k·dt`.
///
/// Storage is row-major: row `k` holds the vector at time `t0 + k·dt`.
/// `dim == 0` is allowed for empty noise components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    t0: f64,
    dt: f64,
    dim: usize,
    values: Vec<f64>,
    len: usize,
}

impl GridPath {
    pub fn new(t0: f64, dt: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("start time must be finite"));
        }
        if dim == 0 {
            return Err(Error::invalid(
                "use GridPath::empty for zero-dimensional paths",
            ));
        }
        if values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "{} values do not form rows of dimension {dim}",
                values.len()
            )));
        }
        let len = values.len() / dim;
        Ok(GridPath {
            t0,
            dt,
            dim,
            values,
            len,
        })
    }

    pub fn scalar(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        Self::new(t0, dt, 1, values)
    }

    /// A path with `len` grid points and no components.
    pub fn empty(t0: f64, dt: f64, len: usize) -> Self {
        GridPath {
            t0,
            dt,
            dim: 0,
            values: Vec::new(),
            len,
        }
    }

    pub fn zeros(t0: f64, dt: f64, len: usize, dim: usize) -> Self {
        GridPath {
            t0,
            dt,
            dim,
            values: vec![0.0; len * dim],
            len,
        }
    }

    /// Samples `f` at the `n` points of `[t0, t0 + (n-1)·dt]`.
    pub fn from_fn(t0: f64, dt: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = (0..n).map(|k| f(t0 + k as f64 * dt)).collect();
        Self::scalar(t0, dt, values)
    }

    /// `n` points spanning `[0, horizon]`.
    pub fn on_unit(n: usize, horizon: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("need at least two grid points"));
        }
        Self::from_fn(0.0, horizon / (n - 1) as f64, n, f)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.values[k * d..(k + 1) * d]
    }

    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.values[k * self.dim + c]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|k| self.get(k, c)).collect()
    }

    /// Builds a path from per-component columns of equal length.
    pub fn from_components(t0: f64, dt: f64, cols: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = cols.first() else {
            return Err(Error::invalid("no components"));
        };
        let n = first.len();
        if cols.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("components differ in length"));
        }
        let d = cols.len();
        let mut values = vec![0.0; n * d];
        for (c, col) in cols.iter().enumerate() {
            for (k, v) in col.iter().enumerate() {
                values[k * d + c] = *v;
            }
        }
        Self::new(t0, dt, d, values)
    }

    /// Applies `f` to each component column and reassembles the path.
    pub fn map_components(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let cols = (0..self.dim)
            .map(|c| f(&self.component(c)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_components(self.t0, self.dt, &cols)
    }

    /// Piecewise-linear interpolation, clamped to the grid range.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let x = ((t - self.t0) / self.dt).clamp(0.0, (self.len - 1) as f64);
        let k = (x.floor() as usize).min(self.len.saturating_sub(2));
        let w = x - k as f64;
        if self.len == 1 {
            out.copy_from_slice(self.row(0));
            return;
        }
        let (a, b) = (self.row(k), self.row(k + 1));
        for c in 0..self.dim {
            out[c] = a[c] + w * (b[c] - a[c]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same grid with new values.
    pub fn with_values(&self, dim: usize, values: Vec<f64>) -> Result<Self> {
        let p = Self::new(self.t0, self.dt, dim, values)?;
        if p.len != self.len {
            return Err(Error::invalid("length mismatch"));
        }
        Ok(p)
    }

    pub fn same_grid(&self, other: &GridPath) -> bool {
        self.len == other.len && self.t0 == other.t0 && self.dt == other.dt
    }

    /// Every `step`-th point, starting at the first.
    pub fn subsample(&self, step: usize) -> Self {
        let step = step.max(1);
        let rows: Vec<usize> = (0..self.len).step_by(step).collect();
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &k in &rows {
            values.extend_from_slice(self.row(k));
        }
        GridPath {
            t0: self.t0,
            dt: self.dt * step as f64,
            dim: self.dim,
            values,
            len: rows.len(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|c| format!("v{c}")));
        wr.write_record(&header)?;
        let mut rec = Vec::with_capacity(self.dim + 1);
        for k in 0..self.len {
            rec.clear();
            rec.push(self.time(k).to_string());
            rec.extend(self.row(k).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV layout written by [`GridPath::write_csv`]. The grid
    /// origin and step are taken from the first two time stamps.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::invalid("first CSV column must be `t`"));
        }
        let dim = headers.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != dim + 1 {
                return Err(Error::invalid("ragged CSV row"));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number `{s}`: {e}")))
            };
            times.push(parse(&rec[0])?);
            for field in rec.iter().skip(1) {
                values.push(parse(field)?);
            }
        }
        if times.len() < 2 {
            return Err(Error::invalid("CSV path needs at least two rows"));
        }
        let t0 = times[0];
        let dt = (times[times.len() - 1] - t0) / (times.len() - 1) as f64;
        let path = Self::new(t0, dt, dim, values)?;
        let tol = 1e-9 * dt.max(1.0);
        if times
            .iter()
            .enumerate()
            .any(|(k, t)| (path.time(k) - t).abs() > tol * (k as f64 + 1.0))
        {
            return Err(Error::invalid("CSV time column is not a uniform grid"));
        }
        // Prefer the exact step recorded in the second row when it reproduces the grid.
        let dt1 = times[1] - t0;
        if dt1 > 0.0 && (t0 + (times.len() - 1) as f64 * dt1) == times[times.len() - 1] {
            return Self::new(t0, dt1, dim, path.values);
        }
        Ok(path)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let p = GridPath::new(
            0.0,
            1.0 / 3.0,
            2,
            vec![0.1, -2.5e-300, 1.0 / 7.0, f64::MAX, 3.0, -0.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let q = GridPath::read_csv(&buf[..]).unwrap();
        assert_eq!(p.values(), q.values());
        assert_eq!(p.dt(), q.dt());
        assert!(String::from_utf8(buf).unwrap().starts_with("t,v0,v1\n"));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(GridPath::scalar(0.0, 0.0, vec![1.0]).is_err());
        assert!(GridPath::scalar(0.0, 1.0, vec![]).is_err());
        assert!(GridPath::new(0.0, 1.0, 2, vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn interpolation_is_linear_between_nodes() {
        let p = GridPath::on_unit(11, 1.0, |t| 2.0 * t).unwrap();
        let mut out = [0.0];
        p.interpolate(0.37, &mut out);
        assert!((out[0] - 0.74).abs() < 1e-14);
        p.interpolate(2.0, &mut out);
        assert_eq!(out[0], 2.0);
    }
}
