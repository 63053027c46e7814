//! Finite-rank operators `K = sum_i c_i |l_i><r_i|` on the one-particle grid
//! space, with kernel `K(x, y) = sum_i c_i l_i(x) conj(r_i(y))`.
//!
//! Trace-class and Hilbert-Schmidt quantities are computed from the small
//! `R x R` Gram data of the orbital families; dense kernels are never formed
//! here except by [`FiniteRankOperator::dense_kernel`], which exists for test
//! oracles on small grids.

use std::sync::Arc;

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::grid::{lp_norm_weighted, Grid, GridFunction, C64, MAX_DIM};
use crate::par;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Relative singular value below which a direction is treated as exactly zero.
const NUMERICAL_ZERO: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Term {
    pub coeff: C64,
    pub left: Vec<C64>,
    pub right: Vec<C64>,
}

#[derive(Clone, Debug)]
pub struct FiniteRankOperator {
    grid: Arc<Grid>,
    terms: Vec<Term>,
    self_adjoint: bool,
    nonneg: bool,
}

impl FiniteRankOperator {
    pub fn zero(grid: Arc<Grid>) -> Self {
        Self {
            grid,
            terms: Vec::new(),
            self_adjoint: true,
            nonneg: true,
        }
    }

    /// General operator from terms; no structural flags are assumed.
    pub fn from_terms(grid: Arc<Grid>, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            check_len(&grid, &t.left)?;
            check_len(&grid, &t.right)?;
        }
        Ok(Self {
            grid,
            terms,
            self_adjoint: false,
            nonneg: false,
        })
    }

    pub fn rank_one(grid: Arc<Grid>, coeff: C64, left: Vec<C64>, right: Vec<C64>) -> Result<Self> {
        Self::from_terms(
            grid,
            vec![Term {
                coeff,
                left,
                right,
            }],
        )
    }

    /// `sum_i w_i |u_i><u_i|` with real weights; nonneg if every weight is.
    pub fn hermitian(grid: Arc<Grid>, weights: &[f64], orbitals: Vec<Vec<C64>>) -> Result<Self> {
        if weights.len() != orbitals.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} orbitals",
                weights.len(),
                orbitals.len()
            )));
        }
        let nonneg = weights.iter().all(|&w| w >= 0.0);
        let mut terms = Vec::with_capacity(weights.len());
        for (&w, u) in weights.iter().zip(orbitals) {
            check_len(&grid, &u)?;
            terms.push(Term {
                coeff: C64::new(w, 0.0),
                left: u.clone(),
                right: u,
            });
        }
        Ok(Self {
            grid,
            terms,
            self_adjoint: true,
            nonneg,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [Term] {
        &mut self.terms
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.self_adjoint
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    /// Overrides the structural flags, e.g. after applying the same unitary to
    /// both orbital families.
    pub fn with_flags(mut self, self_adjoint: bool, nonneg: bool) -> Self {
        self.self_adjoint = self_adjoint;
        self.nonneg = nonneg && self_adjoint;
        self
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid.same_as(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn adjoint(&self) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                coeff: t.coeff.conj(),
                left: t.right.clone(),
                right: t.left.clone(),
            })
            .collect();
        Self {
            grid: self.grid.clone(),
            terms,
            self_adjoint: self.self_adjoint,
            nonneg: self.nonneg,
        }
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.terms.iter_mut().for_each(|t| t.coeff *= s);
        out.self_adjoint = self.self_adjoint && s.im == 0.0;
        out.nonneg = self.nonneg && s.im == 0.0 && s.re >= 0.0;
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Ok(Self {
            grid: self.grid.clone(),
            terms,
            self_adjoint: self.self_adjoint && other.self_adjoint,
            nonneg: self.nonneg && other.nonneg,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    /// Product `self * other`. The result has rank `min(R_A, R_B)`: the inner
    /// Gram matrix `<r^A_i, l^B_j>` is folded into one of the orbital families.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.same_grid(other)?;
        let grid = self.grid.clone();
        let gram: Vec<Vec<C64>> = self
            .terms
            .iter()
            .map(|a| other.terms.iter().map(|b| grid.inner(&a.right, &b.left)).collect())
            .collect();
        let n = grid.len();
        let terms = if self.rank() <= other.rank() {
            // a_i |l^A_i> < sum_j conj(b_j G_ij) r^B_j |
            par::map_range(self.rank(), |i| {
                let mut w = vec![ZERO; n];
                for (j, b) in other.terms.iter().enumerate() {
                    let f = (b.coeff * gram[i][j]).conj();
                    axpy(&mut w, f, &b.right);
                }
                Term {
                    coeff: self.terms[i].coeff,
                    left: self.terms[i].left.clone(),
                    right: w,
                }
            })
        } else {
            // < r^B_j | with | sum_i a_i G_ij l^A_i >
            par::map_range(other.rank(), |j| {
                let mut w = vec![ZERO; n];
                for (i, a) in self.terms.iter().enumerate() {
                    axpy(&mut w, a.coeff * gram[i][j], &a.left);
                }
                Term {
                    coeff: other.terms[j].coeff,
                    left: w,
                    right: other.terms[j].right.clone(),
                }
            })
        };
        Ok(Self {
            grid,
            terms,
            self_adjoint: false,
            nonneg: false,
        })
    }

    /// Commutator `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.compose(other)?.sub(&other.compose(self)?)
    }

    /// Kernel value at flat sample indices `(x, y)`.
    pub fn kernel(&self, x: usize, y: usize) -> C64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.left[x] * t.right[y].conj())
            .sum()
    }

    /// Dense `N x N` kernel matrix, row `x`, column `y`. Oracle use only.
    pub fn dense_kernel(&self) -> Vec<C64> {
        let n = self.grid.len();
        let mut k = vec![ZERO; n * n];
        for t in &self.terms {
            for x in 0..n {
                let lx = t.coeff * t.left[x];
                for y in 0..n {
                    k[x * n + y] += lx * t.right[y].conj();
                }
            }
        }
        k
    }

    /// Diagonal density `rho(x) = K(x, x)`.
    pub fn den(&self) -> GridFunction {
        let n = self.grid.len();
        let mut rho = vec![ZERO; n];
        for t in &self.terms {
            for (x, r) in rho.iter_mut().enumerate() {
                *r += t.coeff * t.left[x] * t.right[x].conj();
            }
        }
        GridFunction::new(self.grid.clone(), rho).expect("density has grid length")
    }

    pub fn trace(&self) -> C64 {
        self.terms
            .iter()
            .map(|t| t.coeff * self.grid.inner(&t.right, &t.left))
            .sum()
    }

    /// `Tr(A^* B)`.
    pub fn hs_inner(&self, other: &Self) -> Result<C64> {
        self.same_grid(other)?;
        let g = &self.grid;
        let mut acc = ZERO;
        for a in &self.terms {
            for b in &other.terms {
                acc += a.coeff.conj() * b.coeff * g.inner(&a.left, &b.left) * g.inner(&b.right, &a.right);
            }
        }
        Ok(acc)
    }

    /// Hilbert-Schmidt norm from the orthonormalized core, which stays accurate
    /// for differences of nearly equal operators.
    pub fn hs_norm(&self) -> f64 {
        let core = self.core();
        core.matrix.norm_l2()
    }

    /// `||A - B||_{I^2}`.
    pub fn hs_distance(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.hs_norm())
    }

    /// Singular values in descending order.
    pub fn singular_values(&self) -> Result<Vec<f64>> {
        let core = self.core();
        if is_empty(&core.matrix) {
            return Ok(Vec::new());
        }
        let svd = core.matrix.svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let mut s: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        Ok(s)
    }

    /// Schatten `I^r` norm; `r = inf` is the operator norm.
    pub fn schatten_norm(&self, r: f64) -> Result<f64> {
        if !(r >= 1.0) {
            return Err(Error::InvalidParameter(format!("Schatten index {r} < 1")));
        }
        let s = self.singular_values()?;
        Ok(lp_norm_weighted(s.into_iter(), r, 1.0))
    }

    /// Orthonormal factorization `K = Q_L M Q_R^*`.
    fn core(&self) -> Core {
        let g = &self.grid;
        let lefts: Vec<&[C64]> = self.terms.iter().map(|t| t.left.as_slice()).collect();
        let rights: Vec<&[C64]> = self.terms.iter().map(|t| t.right.as_slice()).collect();
        let (ql, rl) = orthonormalize(g, &lefts);
        let (qr, rr) = orthonormalize(g, &rights);
        let coeffs: Vec<C64> = self.terms.iter().map(|t| t.coeff).collect();
        let matrix = weighted_product(&rl, &coeffs, &rr);
        Core {
            left: ql,
            right: qr,
            matrix,
        }
    }

    /// Truncates to the smallest rank with `||A - A'||_{I^2} <= tol ||A||_{I^2}`.
    /// Both orbital families come back orthonormal. Self-adjoint inputs are
    /// diagonalized in a shared basis so the flags survive.
    pub fn compress(&self, tol: f64) -> Result<Self> {
        if !(tol >= 0.0) {
            return Err(Error::InvalidParameter(format!("compression tolerance {tol}")));
        }
        if self.terms.is_empty() {
            return Ok(self.clone());
        }
        if self.self_adjoint {
            return self.compress_hermitian(tol);
        }
        let core = self.core();
        if is_empty(&core.matrix) {
            return Ok(Self::zero(self.grid.clone()));
        }
        let svd = core.matrix.svd().map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let (u, v) = (svd.U(), svd.V());
        let sigma: Vec<f64> = svd.S().column_vector().iter().map(|z| z.re).collect();
        let keep = truncation_order(&sigma, tol);
        let n = self.grid.len();
        let terms = par::map_slice(&keep, |&k| {
            let mut left = vec![ZERO; n];
            for (a, q) in core.left.iter().enumerate() {
                axpy(&mut left, u[(a, k)], q);
            }
            let mut right = vec![ZERO; n];
            for (b, q) in core.right.iter().enumerate() {
                axpy(&mut right, v[(b, k)], q);
            }
            Term {
                coeff: C64::new(sigma[k], 0.0),
                left,
                right,
            }
        });
        Ok(Self {
            grid: self.grid.clone(),
            terms,
            self_adjoint: false,
            nonneg: false,
        })
    }

    fn compress_hermitian(&self, tol: f64) -> Result<Self> {
        let g = &self.grid;
        let mut all: Vec<&[C64]> = self.terms.iter().map(|t| t.left.as_slice()).collect();
        all.extend(self.terms.iter().map(|t| t.right.as_slice()));
        let (q, r) = orthonormalize(g, &all);
        let rank = self.rank();
        if q.is_empty() {
            return Ok(Self::zero(g.clone()).with_flags(true, self.nonneg));
        }
        let rl = r.as_ref().subcols(0, rank).to_owned();
        let rr = r.as_ref().subcols(rank, rank).to_owned();
        let coeffs: Vec<C64> = self.terms.iter().map(|t| t.coeff).collect();
        let m = weighted_product(&rl, &coeffs, &rr);
        let m = Mat::from_fn(m.nrows(), m.ncols(), |i, j| (m[(i, j)] + m[(j, i)].conj()) * 0.5);
        let eig = m
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("{e:?}")))?;
        let lambda: Vec<f64> = eig.S().column_vector().iter().map(|z| z.re).collect();
        let vectors = eig.U();
        let magnitudes: Vec<f64> = lambda.iter().map(|l| l.abs()).collect();
        let mut keep = truncation_order(&magnitudes, tol);
        if self.nonneg {
            keep.retain(|&k| lambda[k] > 0.0);
        }
        let n = g.len();
        let terms = par::map_slice(&keep, |&k| {
            let mut u = vec![ZERO; n];
            for (a, qa) in q.iter().enumerate() {
                axpy(&mut u, vectors[(a, k)], qa);
            }
            Term {
                coeff: C64::new(lambda[k], 0.0),
                left: u.clone(),
                right: u,
            }
        });
        Ok(Self {
            grid: g.clone(),
            terms,
            self_adjoint: true,
            nonneg: self.nonneg,
        })
    }

    /// Eigen-decomposition of a self-adjoint operator as `(eigenvalue, eigenvector)`
    /// pairs, descending.
    pub fn hermitian_eigen(&self) -> Result<Vec<(f64, Vec<C64>)>> {
        if !self.self_adjoint {
            return Err(Error::InvalidParameter(
                "eigen-decomposition needs a self-adjoint operator".into(),
            ));
        }
        let c = self.compress_hermitian(0.0)?;
        let mut pairs: Vec<(f64, Vec<C64>)> = c
            .terms
            .into_iter()
            .map(|t| (t.coeff.re, t.left))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        Ok(pairs)
    }

    /// Nonnegative square root of a nonnegative self-adjoint operator.
    pub fn sqrt_nonneg(&self) -> Result<Self> {
        if !(self.self_adjoint && self.nonneg) {
            return Err(Error::InvalidParameter(
                "square root needs a nonnegative self-adjoint operator".into(),
            ));
        }
        let pairs = self.hermitian_eigen()?;
        let weights: Vec<f64> = pairs.iter().map(|(l, _)| l.max(0.0).sqrt()).collect();
        let orbitals = pairs.into_iter().map(|(_, u)| u).collect();
        Self::hermitian(self.grid.clone(), &weights, orbitals)
    }

    /// Applies `f` to every left and right orbital. When `f` is a unitary this
    /// is the conjugation `U K U^*`.
    pub fn map_orbitals<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&mut Vec<C64>) -> Result<()> + Sync + Send,
    {
        let mut out = self.clone();
        out.map_orbitals_in_place(f)?;
        Ok(out)
    }

    pub fn map_orbitals_in_place<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&mut Vec<C64>) -> Result<()> + Sync + Send,
    {
        let mut slots: Vec<(&mut Vec<C64>, Result<()>)> = Vec::with_capacity(2 * self.terms.len());
        for t in self.terms.iter_mut() {
            slots.push((&mut t.left, Ok(())));
            slots.push((&mut t.right, Ok(())));
        }
        par::for_each_mut(&mut slots, |(v, r)| *r = f(v));
        slots.into_iter().map(|(_, r)| r).collect()
    }

    /// Left multiplication by the operator acting on orbitals: `|f l><r|`.
    pub fn map_left<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&mut Vec<C64>) -> Result<()>,
    {
        let mut out = self.clone();
        for t in out.terms.iter_mut() {
            f(&mut t.left)?;
        }
        out.self_adjoint = false;
        out.nonneg = false;
        Ok(out)
    }

    /// Right multiplication `K A` expressed through `A^*` on the right orbitals.
    pub fn map_right<F>(&self, f: F) -> Result<Self>
    where
        F: Fn(&mut Vec<C64>) -> Result<()>,
    {
        let mut out = self.clone();
        for t in out.terms.iter_mut() {
            f(&mut t.right)?;
        }
        out.self_adjoint = false;
        out.nonneg = false;
        Ok(out)
    }

    /// Commutator `[f, K]` with a multiplication operator.
    pub fn commutator_with_multiplier(&self, f: &[C64]) -> Result<Self> {
        check_len(&self.grid, f)?;
        let left = self.map_left(|v| {
            v.iter_mut().zip(f).for_each(|(a, b)| *a *= b);
            Ok(())
        })?;
        // K f = sum c |l><conj(f) r|
        let right = self.map_right(|v| {
            v.iter_mut().zip(f).for_each(|(a, b)| *a *= b.conj());
            Ok(())
        })?;
        left.sub(&right)
    }

    /// Row of the kernel in relative/center coordinates for a signed offset
    /// `r = y - x` given as the flat index `offset` (see [`Grid::signed_offset`]):
    /// entry `k` is `K(x_k, x_k + r)`, i.e. the value at center `c = x_k + r/2`.
    pub fn rc_row(&self, offset: usize) -> Vec<C64> {
        let g = &self.grid;
        let shift = g.signed_offset(offset);
        let n = g.len();
        let mut row = vec![ZERO; n];
        for t in &self.terms {
            for (k, v) in row.iter_mut().enumerate() {
                *v += t.coeff * t.left[k] * t.right[g.shifted(k, &shift)].conj();
            }
        }
        row
    }

    pub fn to_rc(&self) -> RCKernel {
        let rows = par::map_range(self.grid.len(), |m| self.rc_row(m));
        RCKernel {
            grid: self.grid.clone(),
            rows,
        }
    }

    /// Mixed norm `|| ||K~(r, .)||_{L^p_c} ||_{L^q_r}`, streamed row by row.
    pub fn local_norm_rc(&self, q: f64, p: f64) -> Result<f64> {
        check_exponent(q)?;
        check_exponent(p)?;
        let w = self.grid.cell_volume();
        let row_norms = par::map_range(self.grid.len(), |m| {
            lp_norm_weighted(self.rc_row(m).iter().map(|v| v.norm()), p, w)
        });
        Ok(lp_norm_weighted(row_norms.into_iter(), q, w))
    }

    /// `|| ||K(x, .)||_{L^2_y} ||_{L^s_x}`, from the right-orbital Gram matrix.
    pub fn mixed_norm_xy(&self, s: f64) -> Result<f64> {
        check_exponent(s)?;
        let f = self.row_l2_squared();
        Ok(lp_norm_weighted(
            f.iter().map(|v| v.max(0.0).sqrt()),
            s,
            self.grid.cell_volume(),
        ))
    }

    /// `x -> int |K(x, y)|^2 dy`.
    pub fn row_l2_squared(&self) -> Vec<f64> {
        let g = &self.grid;
        let r = self.rank();
        let gram: Vec<Vec<C64>> = (0..r)
            .map(|i| (0..r).map(|j| g.inner(&self.terms[i].right, &self.terms[j].right)).collect())
            .collect();
        par::map_range(g.len(), |x| {
            let mut acc = ZERO;
            for i in 0..r {
                let a = self.terms[i].coeff * self.terms[i].left[x];
                for j in 0..r {
                    let b = (self.terms[j].coeff * self.terms[j].left[x]).conj();
                    acc += a * b * gram[i][j];
                }
            }
            acc.re
        })
    }

    /// `(int int |K(x, y)|^s dx dy)^{1/s}`; the max modulus for `s = inf`.
    pub fn gamma_local_norm(&self, s: f64) -> Result<f64> {
        check_exponent(s)?;
        let g = &self.grid;
        let n = g.len();
        let w = g.cell_volume();
        let partial = par::map_range(n, |x| {
            let coeffs: Vec<C64> = self.terms.iter().map(|t| t.coeff * t.left[x]).collect();
            let row = (0..n).map(|y| {
                self.terms
                    .iter()
                    .zip(&coeffs)
                    .map(|(t, c)| c * t.right[y].conj())
                    .sum::<C64>()
                    .norm()
            });
            if s.is_infinite() {
                row.fold(0.0, f64::max)
            } else {
                row.map(|v| v.powf(s)).sum::<f64>()
            }
        });
        if s.is_infinite() {
            Ok(partial.into_iter().fold(0.0, f64::max))
        } else {
            Ok((partial.into_iter().sum::<f64>() * w * w).powf(1.0 / s))
        }
    }
}

/// Kernel in `(r, c)` coordinates: `rows[m][k] = K(x_k, x_k + r_m)`, where
/// `r_m` is the signed grid offset of flat index `m` and the center of entry
/// `k` is `c = x_k + r_m / 2` (periodic wrap for `x_k + r_m`).
#[derive(Clone, Debug)]
pub struct RCKernel {
    grid: Arc<Grid>,
    rows: Vec<Vec<C64>>,
}

impl RCKernel {
    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn rows(&self) -> &[Vec<C64>] {
        &self.rows
    }

    pub fn value(&self, offset: usize, k: usize) -> C64 {
        self.rows[offset][k]
    }

    /// Relative coordinate `r` of a row.
    pub fn relative(&self, offset: usize) -> [f64; MAX_DIM] {
        let off = self.grid.signed_offset(offset);
        let h = self.grid.spacing();
        [off[0] as f64 * h, off[1] as f64 * h, off[2] as f64 * h]
    }

    /// Center coordinate `c` of an entry.
    pub fn center(&self, offset: usize, k: usize) -> [f64; MAX_DIM] {
        let x = self.grid.point(k);
        let r = self.relative(offset);
        [x[0] + r[0] / 2.0, x[1] + r[1] / 2.0, x[2] + r[2] / 2.0]
    }
}

struct Core {
    left: Vec<Vec<C64>>,
    right: Vec<Vec<C64>>,
    matrix: Mat<C64>,
}

fn check_len(grid: &Grid, v: &[C64]) -> Result<()> {
    if v.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            found: v.len(),
        });
    }
    Ok(())
}

fn check_exponent(p: f64) -> Result<()> {
    if p >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("Lebesgue exponent {p} < 1")))
    }
}

pub(crate) fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    if a == ZERO {
        return;
    }
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

fn is_empty(m: &Mat<C64>) -> bool {
    m.nrows() == 0 || m.ncols() == 0
}

/// `R_L diag(c) R_R^*`.
fn weighted_product(rl: &Mat<C64>, c: &[C64], rr: &Mat<C64>) -> Mat<C64> {
    Mat::from_fn(rl.nrows(), rr.nrows(), |a, b| {
        c.iter()
            .enumerate()
            .map(|(i, ci)| rl[(a, i)] * ci * rr[(b, i)].conj())
            .sum()
    })
}

/// Indices to keep, in descending order of `values`, so that the discarded
/// tail satisfies `sqrt(sum tail^2) <= tol * sqrt(sum all^2)`. Numerically
/// zero values are always discarded.
fn truncation_order(values: &[f64], tol: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let max = order.first().map(|&i| values[i]).unwrap_or(0.0);
    if max <= 0.0 {
        return Vec::new();
    }
    let total: f64 = values.iter().map(|v| v * v).sum();
    let budget = tol * tol * total;
    let mut tail = 0.0;
    let mut keep = order.len();
    while keep > 0 {
        let v = values[order[keep - 1]];
        if v > NUMERICAL_ZERO * max && tail + v * v > budget {
            break;
        }
        tail += v * v;
        keep -= 1;
    }
    order.truncate(keep);
    order
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Returns an
/// orthonormal family `Q` and coefficients `R` (`k x m`) with `v_i = sum_j R[j, i] q_j`.
fn orthonormalize(grid: &Grid, vectors: &[&[C64]]) -> (Vec<Vec<C64>>, Mat<C64>) {
    let m = vectors.len();
    let mut q: Vec<Vec<C64>> = Vec::new();
    let mut coeffs: Vec<Vec<C64>> = Vec::with_capacity(m);
    let max_norm = vectors.iter().map(|v| grid.norm(v)).fold(0.0, f64::max);
    for v in vectors {
        let mut w = v.to_vec();
        let mut c = vec![ZERO; q.len()];
        for _pass in 0..2 {
            for (j, qj) in q.iter().enumerate() {
                let proj = grid.inner(qj, &w);
                axpy(&mut w, -proj, qj);
                c[j] += proj;
            }
        }
        let norm = grid.norm(&w);
        if norm > NUMERICAL_ZERO * max_norm && norm > 0.0 {
            w.iter_mut().for_each(|x| *x /= norm);
            q.push(w);
            c.push(C64::new(norm, 0.0));
        }
        coeffs.push(c);
    }
    let k = q.len();
    let r = Mat::from_fn(k, m, |j, i| coeffs[i].get(j).copied().unwrap_or(ZERO));
    (q, r)
}
