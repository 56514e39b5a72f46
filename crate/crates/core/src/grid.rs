//! Periodic tensor grids stored row-major in flat complex buffers, with FFT plans.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft as FftPlan, FftPlanner};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    lengths: Vec<f64>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, lengths: Vec<f64>) -> Result<Self> {
        if shape.len() != lengths.len() || shape.is_empty() {
            return Err(Error::GridMismatch(format!(
                "shape {shape:?} and lengths {lengths:?} disagree"
            )));
        }
        if let Some(n) = shape.iter().find(|n| !n.is_power_of_two()) {
            return Err(Error::GridMismatch(format!("axis size {n} is not a power of two")));
        }
        if lengths.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::GridMismatch(format!("non-positive period in {lengths:?}")));
        }
        Ok(Self { shape, lengths })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.len()]
    }

    /// Signed Fourier index of position `i` on `axis`; the Nyquist slot maps to `-n/2`.
    pub fn mode_index(&self, axis: usize, i: usize) -> i64 {
        let n = self.shape[axis];
        if i < n.div_ceil(2) {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    pub fn is_nyquist(&self, axis: usize, i: usize) -> bool {
        let n = self.shape[axis];
        n > 1 && i == n / 2
    }

    /// Angular wavenumber used by derivatives; zero on the Nyquist slot.
    pub fn wavenumber(&self, axis: usize, i: usize) -> f64 {
        if self.is_nyquist(axis, i) {
            0.0
        } else {
            2.0 * std::f64::consts::PI / self.lengths[axis] * self.mode_index(axis, i) as f64
        }
    }

    pub fn wavenumbers(&self, axis: usize) -> Vec<f64> {
        (0..self.shape[axis]).map(|i| self.wavenumber(axis, i)).collect()
    }

    /// Two-thirds rule: keep indices with `3|m| < n`.
    pub fn dealias_keep(&self, axis: usize, i: usize) -> bool {
        let n = self.shape[axis] as i64;
        n == 1 || 3 * self.mode_index(axis, i).abs() < n
    }

    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let n = self.shape[axis];
        let h = self.lengths[axis] / n as f64;
        (0..n).map(|i| i as f64 * h).collect()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.shape[axis] as f64
    }

    /// Flat index of a multi-index.
    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Stable fingerprint used in run manifests.
    pub fn describe(&self) -> String {
        format!("shape={:?};lengths={:?}", self.shape, self.lengths)
    }
}

/// Visit every grid point in row-major order with its multi-index.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(flat, &idx);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
}

/// Planned multi-dimensional FFT over a [`Grid`]; the inverse is normalized.
#[derive(Clone)]
pub struct Fft {
    grid: Grid,
    forward: Vec<Arc<dyn FftPlan<f64>>>,
    inverse: Vec<Arc<dyn FftPlan<f64>>>,
}

impl std::fmt::Debug for Fft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft").field("grid", &self.grid).finish()
    }
}

impl Fft {
    pub fn new(grid: &Grid) -> Self {
        let mut planner = FftPlanner::new();
        let forward = grid.shape().iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = grid.shape().iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self {
            grid: grid.clone(),
            forward,
            inverse,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        for ax in 0..self.grid.ndim() {
            self.along_axis(data, ax, &self.forward[ax]);
        }
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.grid.len(), "buffer does not match grid");
        for ax in 0..self.grid.ndim() {
            self.along_axis(data, ax, &self.inverse[ax]);
        }
        let scale = 1.0 / self.grid.len() as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }

    fn along_axis(&self, data: &mut [Complex64], axis: usize, plan: &Arc<dyn FftPlan<f64>>) {
        let shape = self.grid.shape();
        let n = shape[axis];
        if n == 1 {
            return;
        }
        let stride: usize = shape[axis + 1..].iter().product();
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        if stride == 1 {
            plan.process_with_scratch(data, &mut scratch);
            return;
        }
        let block = n * stride;
        let mut buf = vec![Complex64::default(); block];
        for chunk in data.chunks_exact_mut(block) {
            for i in 0..n {
                for s in 0..stride {
                    buf[s * n + i] = chunk[i * stride + s];
                }
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for i in 0..n {
                for s in 0..stride {
                    chunk[i * stride + s] = buf[s * n + i];
                }
            }
        }
    }

    /// Spectral derivative along `axis` of a physical-space field.
    pub fn derivative(&self, field: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut hat = field.to_vec();
        self.forward(&mut hat);
        let k = self.grid.wavenumbers(axis);
        let shape = self.grid.shape().to_vec();
        for_each_index(&shape, |flat, idx| {
            hat[flat] *= Complex64::new(0.0, k[idx[axis]]);
        });
        self.inverse(&mut hat);
        hat
    }

    /// Multiply the spectrum by `symbol(wavenumbers)` and return to physical space.
    pub fn apply_symbol(
        &self,
        field: &[Complex64],
        symbol: impl Fn(&[f64]) -> Complex64,
    ) -> Vec<Complex64> {
        let mut hat = field.to_vec();
        self.forward(&mut hat);
        let ks: Vec<Vec<f64>> = (0..self.grid.ndim()).map(|a| self.grid.wavenumbers(a)).collect();
        let shape = self.grid.shape().to_vec();
        let mut kv = vec![0.0; shape.len()];
        for_each_index(&shape, |flat, idx| {
            for (a, &i) in idx.iter().enumerate() {
                kv[a] = ks[a][i];
            }
            hat[flat] *= symbol(&kv);
        });
        self.inverse(&mut hat);
        hat
    }
}

pub fn sup_norm(field: &[Complex64]) -> f64 {
    field.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Root-mean-square over grid points.
pub fn rms(field: &[Complex64]) -> f64 {
    if field.is_empty() {
        return 0.0;
    }
    (field.iter().map(|z| z.norm_sqr()).sum::<f64>() / field.len() as f64).sqrt()
}
