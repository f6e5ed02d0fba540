//! Uniform tensor meshes, time grids, nodal fields and trapezoidal quadrature.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MAX_DIM;

/// Node ordering is row-major: the last axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorMesh {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    weights: Vec<f64>,
}

impl TensorMesh {
    pub fn new(bounds: &[(f64, f64)], counts: &[usize]) -> Result<Self> {
        let n = bounds.len();
        if n == 0 || n > MAX_DIM || counts.len() != n {
            return Err(Error::invalid(format!("mesh needs 1..={MAX_DIM} axes with matching counts")));
        }
        for (i, (&(a, b), &c)) in bounds.iter().zip(counts).enumerate() {
            if !(a.is_finite() && b.is_finite() && a < b) {
                return Err(Error::invalid(format!("axis {i}: bounds ({a}, {b}) must satisfy a < b")));
            }
            if c < 3 {
                return Err(Error::invalid(format!("axis {i}: node count {c} below 3")));
            }
        }
        let lower: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let upper: Vec<f64> = bounds.iter().map(|b| b.1).collect();
        let h: Vec<f64> = (0..n).map(|i| (upper[i] - lower[i]) / (counts[i] - 1) as f64).collect();
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let len: usize = counts.iter().product();
        let mut mesh = Self { lower, upper, counts: counts.to_vec(), h, strides, weights: Vec::new() };
        let axis_w: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                (0..mesh.counts[a])
                    .map(|i| if i == 0 || i + 1 == mesh.counts[a] { 0.5 * mesh.h[a] } else { mesh.h[a] })
                    .collect()
            })
            .collect();
        mesh.weights = (0..len)
            .map(|idx| {
                let mi = mesh.multi_index(idx);
                (0..n).map(|a| axis_w[a][mi[a]]).product()
            })
            .collect();
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn spacing(&self) -> &[f64] {
        &self.h
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.lower.iter().copied().zip(self.upper.iter().copied()).collect()
    }

    /// Trapezoidal quadrature weights (tensor product).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(a, b)| b - a).product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.upper[axis]
        } else {
            self.lower[axis] + i as f64 * self.h[axis]
        }
    }

    pub fn axis_nodes(&self, axis: usize) -> Vec<f64> {
        (0..self.counts[axis]).map(|i| self.coord(axis, i)).collect()
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for a in 0..self.dim() {
            out[a] = idx / self.strides[a];
            idx %= self.strides[a];
        }
        out
    }

    pub fn flat_index(&self, mi: &[usize]) -> usize {
        mi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let mi = self.multi_index(idx);
        for a in 0..self.dim() {
            out[a] = self.coord(a, mi[a]);
        }
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn moment(&self, density: &[f64], axis: usize) -> f64 {
        let mut acc = 0.0;
        for (idx, (d, w)) in density.iter().zip(&self.weights).enumerate() {
            let i = (idx / self.strides[axis]) % self.counts[axis];
            acc += d * w * self.coord(axis, i);
        }
        acc
    }

    /// Multilinear interpolation; points outside the domain are clamped to it.
    pub fn interpolate(&self, values: &[f64], point: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for a in 0..n {
            let x = point[a].clamp(self.lower[a], self.upper[a]);
            let t = (x - self.lower[a]) / self.h[a];
            let i = (t.floor() as usize).min(self.counts[a] - 2);
            base[a] = i;
            frac[a] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx += (base[a] + bit) * self.strides[a];
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }

    /// Index of the node exactly at `point`, if any.
    pub fn locate_node(&self, point: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for a in 0..self.dim() {
            let t = (point[a] - self.lower[a]) / self.h[a];
            let i = t.round();
            if i < 0.0 || i as usize >= self.counts[a] || (t - i).abs() > 1e-9 {
                return None;
            }
            idx += i as usize * self.strides[a];
        }
        Some(idx)
    }

    /// Mesh made of the selected axes.
    pub fn restrict(&self, axes: &[usize]) -> Result<Self> {
        let bounds: Vec<_> = axes.iter().map(|&a| (self.lower[a], self.upper[a])).collect();
        let counts: Vec<_> = axes.iter().map(|&a| self.counts[a]).collect();
        Self::new(&bounds, &counts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(t0 < t_end && dt > 0.0) {
            return Err(Error::invalid(format!("time grid needs t < T and Δs > 0, got ({t0}, {t_end}, {dt})")));
        }
        let ratio = (t_end - t0) / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) || steps < 1.0 {
            return Err(Error::invalid(format!("Δs = {dt} does not divide the horizon length {}", t_end - t0)));
        }
        Ok(Self { t0, t_end, dt, steps: steps as usize })
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.steps {
            self.t_end
        } else {
            self.t0 + m as f64 * self.dt
        }
    }

    /// Coefficient evaluation time for the step m → m+1.
    pub fn midpoint(&self, m: usize) -> f64 {
        self.t0 + (m as f64 + 0.5) * self.dt
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Trapezoidal weights over the stored time levels.
    pub fn weights(&self) -> Vec<f64> {
        (0..=self.steps).map(|m| if m == 0 || m == self.steps { 0.5 * self.dt } else { self.dt }).collect()
    }
}

/// Nodal values of shape (time level, node).
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub mesh: Arc<TensorMesh>,
    pub grid: TimeGrid,
    pub units: String,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(mesh: Arc<TensorMesh>, grid: TimeGrid, units: &str) -> Self {
        let len = mesh.len() * grid.len();
        Self { mesh, grid, units: units.to_string(), values: vec![0.0; len] }
    }

    pub fn from_values(mesh: Arc<TensorMesh>, grid: TimeGrid, units: &str, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.len() * grid.len() {
            return Err(Error::invalid("field values do not match mesh × time grid"));
        }
        Ok(Self { mesh, grid, units: units.to_string(), values })
    }

    pub fn nodes(&self) -> usize {
        self.mesh.len()
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        let n = self.mesh.len();
        &self.values[m * n..(m + 1) * n]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        let n = self.mesh.len();
        &mut self.values[m * n..(m + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes `<base>.bin` (little-endian f64, row-major over (time, node))
    /// and `<base>.json` describing the layout. Returns both paths.
    pub fn dump(&self, dir: &Path, base: &str) -> Result<Vec<std::path::PathBuf>> {
        let bin = dir.join(format!("{base}.bin"));
        let json = dir.join(format!("{base}.json"));
        let mut bytes = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&bin, bytes)?;
        let meta = FieldMeta {
            lower: self.mesh.lower.clone(),
            upper: self.mesh.upper.clone(),
            counts: self.mesh.counts.clone(),
            t0: self.grid.t0,
            t_end: self.grid.t_end,
            dt: self.grid.dt,
            time_levels: self.grid.len(),
            units: self.units.clone(),
            layout: "little-endian f64, row-major (time, node), last axis fastest".into(),
        };
        std::fs::write(&json, serde_json::to_string_pretty(&meta)?)?;
        Ok(vec![bin, json])
    }

    pub fn load(dir: &Path, base: &str) -> Result<Self> {
        let meta: FieldMeta = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{base}.json")))?)?;
        let bytes = std::fs::read(dir.join(format!("{base}.bin")))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid("field dump length is not a multiple of 8"));
        }
        let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let bounds: Vec<_> = meta.lower.iter().copied().zip(meta.upper.iter().copied()).collect();
        let mesh = Arc::new(TensorMesh::new(&bounds, &meta.counts)?);
        let grid = TimeGrid::new(meta.t0, meta.t_end, meta.dt)?;
        Field::from_values(mesh, grid, &meta.units, values)
    }
}

#[derive(Serialize, Deserialize)]
struct FieldMeta {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    t0: f64,
    t_end: f64,
    dt: f64,
    time_levels: usize,
    units: String,
    layout: String,
}
