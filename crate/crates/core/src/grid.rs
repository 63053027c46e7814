//! Periodic box discretization of R^d and the spectral services built on it.
//!
//! The box is `[-L, L)^d` sampled with `n` points per axis. Flat sample
//! indices are row-major with the last axis fastest. Transforms use the
//! unitary DFT normalization, so Parseval holds with the same `h^d` weight on
//! both sides.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::par;

pub type C64 = Complex64;

pub const MAX_DIM: usize = 3;

pub struct Grid {
    dim: usize,
    n: usize,
    half_length: f64,
    spacing: f64,
    /// Wavenumbers per axis in DFT index order (0, 1, .., n/2-1, -n/2, .., -1).
    wavenumbers: Vec<f64>,
    /// |xi|^2 for every flat index.
    k2: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("half_length", &self.half_length)
            .finish()
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_length: f64) -> Result<Arc<Self>> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "points per axis {n} must be a power of two >= 8"
            )));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidGrid(format!("half length {half_length}")));
        }
        let spacing = 2.0 * half_length / n as f64;
        let dk = PI / half_length;
        let wavenumbers: Vec<f64> = (0..n)
            .map(|m| {
                let m = m as i64;
                let signed = if m < (n / 2) as i64 { m } else { m - n as i64 };
                dk * signed as f64
            })
            .collect();
        let len = n.pow(dim as u32);
        let mut k2 = vec![0.0; len];
        for (flat, slot) in k2.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut rest = flat;
            for _ in 0..dim {
                let k = wavenumbers[rest % n];
                acc += k * k;
                rest /= n;
            }
            *slot = acc;
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Arc::new(Self {
            dim,
            n,
            half_length,
            spacing,
            wavenumbers,
            k2,
            forward,
            inverse,
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Total number of samples `n^d`.
    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dim == other.dim && self.n == other.n && self.half_length == other.half_length
    }

    /// Sample coordinate `-L + k h` along one axis.
    pub fn coordinate(&self, k: usize) -> f64 {
        -self.half_length + k as f64 * self.spacing
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn wavenumber_squared(&self) -> &[f64] {
        &self.k2
    }

    /// Per-axis sample indices of a flat index, axis 0 first.
    pub fn unflatten(&self, flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        let mut rest = flat;
        for axis in (0..self.dim).rev() {
            idx[axis] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .take(self.dim)
            .fold(0, |acc, &i| acc * self.n + (i % self.n))
    }

    /// Position of a flat index.
    pub fn point(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.unflatten(flat);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = self.coordinate(idx[axis]);
        }
        x
    }

    /// Wave vector of a flat spectral index.
    pub fn wavevector(&self, flat: usize) -> [f64; MAX_DIM] {
        let idx = self.unflatten(flat);
        let mut k = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            k[axis] = self.wavenumbers[idx[axis]];
        }
        k
    }

    /// Flat index of `flat` translated by `shift` samples per axis, periodically.
    pub fn shifted(&self, flat: usize, shift: &[i64; MAX_DIM]) -> usize {
        let idx = self.unflatten(flat);
        let n = self.n as i64;
        let mut out = 0usize;
        for axis in 0..self.dim {
            let k = (idx[axis] as i64 + shift[axis]).rem_euclid(n);
            out = out * self.n + k as usize;
        }
        out
    }

    /// Offset multi-index of a flat index interpreted as a signed displacement
    /// in `[-n/2, n/2)` per axis.
    pub fn signed_offset(&self, flat: usize) -> [i64; MAX_DIM] {
        let idx = self.unflatten(flat);
        let mut off = [0i64; MAX_DIM];
        let half = (self.n / 2) as i64;
        for axis in 0..self.dim {
            let m = idx[axis] as i64;
            off[axis] = if m < half { m } else { m - self.n as i64 };
        }
        off
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::ShapeMismatch {
                expected: self.len(),
                found: len,
            });
        }
        Ok(())
    }

    fn transform_in_place(&self, data: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let len = data.len();
        for axis in 0..self.dim {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            if stride == 1 {
                par::for_each_chunk_mut(data, n, |_, line| plan.process(line));
            } else {
                let block = n * stride;
                // gather the strided lines of each block, transform, scatter back
                par::for_each_chunk_mut(data, block, |_, chunk| {
                    let mut lines = vec![C64::new(0.0, 0.0); block];
                    for o in 0..stride {
                        for k in 0..n {
                            lines[o * n + k] = chunk[o + k * stride];
                        }
                    }
                    plan.process(&mut lines);
                    for o in 0..stride {
                        for k in 0..n {
                            chunk[o + k * stride] = lines[o * n + k];
                        }
                    }
                });
            }
        }
        let scale = 1.0 / (len as f64).sqrt();
        data.iter_mut().for_each(|v| *v *= scale);
    }

    /// Unitary forward DFT in place.
    pub fn forward_in_place(&self, data: &mut [C64]) -> Result<()> {
        self.check_len(data.len())?;
        self.transform_in_place(data, &self.forward);
        Ok(())
    }

    /// Unitary inverse DFT in place.
    pub fn inverse_in_place(&self, data: &mut [C64]) -> Result<()> {
        self.check_len(data.len())?;
        self.transform_in_place(data, &self.inverse);
        Ok(())
    }

    /// Multiplies the spectrum of `data` by a precomputed symbol table.
    pub fn apply_symbol_in_place(&self, data: &mut [C64], symbol: &[C64]) -> Result<()> {
        self.check_len(symbol.len())?;
        self.forward_in_place(data)?;
        data.iter_mut().zip(symbol).for_each(|(v, s)| *v *= s);
        self.inverse_in_place(data)
    }

    /// Multiplies the spectrum of `data` by `symbol(wavevector)`.
    pub fn apply_multiplier_in_place<F>(&self, data: &mut [C64], symbol: F) -> Result<()>
    where
        F: Fn([f64; MAX_DIM]) -> C64,
    {
        self.forward_in_place(data)?;
        for (flat, v) in data.iter_mut().enumerate() {
            *v *= symbol(self.wavevector(flat));
        }
        self.inverse_in_place(data)
    }

    /// Symbol table of the free propagator `e^{i t Delta}`, i.e. `e^{-i t |xi|^2}`.
    pub fn free_symbol(&self, t: f64) -> Vec<C64> {
        self.k2
            .iter()
            .map(|&k2| C64::from_polar(1.0, -t * k2))
            .collect()
    }

    pub fn free_propagate_in_place(&self, data: &mut [C64], t: f64) -> Result<()> {
        if t == 0.0 {
            return self.check_len(data.len());
        }
        let symbol = self.free_symbol(t);
        self.apply_symbol_in_place(data, &symbol)
    }

    /// Spectral `d/dx_axis`.
    pub fn derivative_in_place(&self, data: &mut [C64], axis: usize) -> Result<()> {
        self.check_axis(axis)?;
        self.apply_multiplier_in_place(data, |k| C64::new(0.0, k[axis]))
    }

    /// Spectral translation `f(x) -> f(x - shift)`.
    pub fn translate_in_place(&self, data: &mut [C64], shift: &[f64; MAX_DIM]) -> Result<()> {
        let dim = self.dim;
        self.apply_multiplier_in_place(data, |k| {
            let phase: f64 = (0..dim).map(|a| k[a] * shift[a]).sum();
            C64::from_polar(1.0, -phase)
        })
    }

    pub(crate) fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            return Err(Error::InvalidParameter(format!(
                "axis {axis} out of range for dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    /// Weighted inner product `<a, b> = h^d sum conj(a) b`.
    pub fn inner(&self, a: &[C64], b: &[C64]) -> C64 {
        let s: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        s * self.cell_volume()
    }

    pub fn norm(&self, a: &[C64]) -> f64 {
        (a.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.cell_volume()).sqrt()
    }

    /// Riemann-sum `L^p` norm of samples; `p = inf` is the max modulus.
    pub fn lp_norm_slice(&self, a: &[C64], p: f64) -> f64 {
        lp_norm_weighted(a.iter().map(|v| v.norm()), p, self.cell_volume())
    }
}

/// `(w sum |v|^p)^(1/p)`, or `max |v|` for infinite `p`.
pub(crate) fn lp_norm_weighted<I>(values: I, p: f64, weight: f64) -> f64
where
    I: Iterator<Item = f64>,
{
    if p.is_infinite() {
        values.fold(0.0, f64::max)
    } else if p == 2.0 {
        (values.map(|v| v * v).sum::<f64>() * weight).sqrt()
    } else if p == 1.0 {
        values.sum::<f64>() * weight
    } else {
        (values.map(|v| v.powf(p)).sum::<f64>() * weight).powf(1.0 / p)
    }
}

/// Complex samples on a grid.
#[derive(Clone, Debug)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: Vec<C64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: Vec<C64>) -> Result<Self> {
        grid.check_len(values.len())?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<Grid>) -> Self {
        let values = vec![C64::new(0.0, 0.0); grid.len()];
        Self { grid, values }
    }

    /// Samples `f` at every grid point.
    pub fn from_fn<F>(grid: Arc<Grid>, f: F) -> Self
    where
        F: Fn([f64; MAX_DIM]) -> C64 + Sync + Send,
    {
        let values = par::map_range(grid.len(), |i| f(grid.point(i)));
        Self { grid, values }
    }

    pub fn from_real(grid: Arc<Grid>, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn scale(mut self, s: C64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= s);
        self
    }

    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.grid.cell_volume()
    }

    /// Translation by whole grid steps, `f(x) -> f(x - shift h)`.
    pub fn roll(&self, shift: &[i64; MAX_DIM]) -> Self {
        let neg = [-shift[0], -shift[1], -shift[2]];
        let values = (0..self.grid.len())
            .map(|i| self.values[self.grid.shifted(i, &neg)])
            .collect();
        Self {
            grid: self.grid.clone(),
            values,
        }
    }
}

pub fn forward_transform(f: &GridFunction) -> Result<GridFunction> {
    let mut out = f.clone();
    f.grid.forward_in_place(&mut out.values)?;
    Ok(out)
}

pub fn inverse_transform(f: &GridFunction) -> Result<GridFunction> {
    let mut out = f.clone();
    f.grid.inverse_in_place(&mut out.values)?;
    Ok(out)
}

/// Applies `e^{i t Delta}` (symbol `e^{-i t |xi|^2}`).
pub fn apply_free_propagator(f: &GridFunction, t: f64) -> Result<GridFunction> {
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("propagation time {t}")));
    }
    let mut out = f.clone();
    f.grid.free_propagate_in_place(&mut out.values, t)?;
    Ok(out)
}

pub fn derivative(f: &GridFunction, axis: usize) -> Result<GridFunction> {
    let mut out = f.clone();
    f.grid.derivative_in_place(&mut out.values, axis)?;
    Ok(out)
}

pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("Lebesgue exponent {p} < 1")));
    }
    Ok(f.grid.lp_norm_slice(&f.values, p))
}

/// Two-body potential `v` in `v * rho`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PotentialSpec {
    None,
    /// Contact interaction, `v * rho = rho`.
    Delta,
    /// `|x|^{-a}`.
    Riesz { a: f64 },
}

/// Fourier symbol constant of `|x|^{-a}` in `d` dimensions:
/// the transform is `c |xi|^{a-d}`.
pub fn riesz_constant(d: usize, a: f64) -> f64 {
    let d = d as f64;
    2f64.powf(d - a) * PI.powf(d / 2.0) * gamma((d - a) / 2.0) / gamma(a / 2.0)
}

/// Value used for the zero mode of the Riesz symbol: the symbol at the first
/// nonzero wavenumber `pi / L`. Any finite choice shifts `v * rho` by a constant.
pub fn riesz_zero_mode(grid: &Grid, a: f64) -> f64 {
    riesz_constant(grid.dim(), a) * (PI / grid.half_length()).powf(a - grid.dim() as f64)
}

pub fn convolve_potential(rho: &GridFunction, spec: PotentialSpec) -> Result<GridFunction> {
    let grid = rho.grid.clone();
    match spec {
        PotentialSpec::None => Ok(GridFunction::zeros(grid)),
        PotentialSpec::Delta => Ok(rho.clone()),
        PotentialSpec::Riesz { a } => {
            let d = grid.dim() as f64;
            if !(a > 1.0 && a < d) {
                return Err(Error::InadmissiblePotential(format!(
                    "Riesz exponent {a} must lie in (1, {d})"
                )));
            }
            let c = riesz_constant(grid.dim(), a);
            let zero = riesz_zero_mode(&grid, a);
            let symbol: Vec<C64> = grid
                .wavenumber_squared()
                .iter()
                .map(|&k2| {
                    if k2 == 0.0 {
                        C64::new(zero, 0.0)
                    } else {
                        C64::new(c * k2.powf((a - d) / 2.0), 0.0)
                    }
                })
                .collect();
            let mut out = rho.clone();
            grid.apply_symbol_in_place(&mut out.values, &symbol)?;
            Ok(out)
        }
    }
}
