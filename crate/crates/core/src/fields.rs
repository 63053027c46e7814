//! Commutator vector fields `J_l = [x_l - 2 t p_l, .]` and `D_l = [d_l, .]`,
//! the gauge conjugation `U_t`, Galilean boosts and the weighted norms built
//! from them.
//!
//! Sign conventions: `p = -i d`, the free flow is `alpha_t(k) = e^{it Lap} k e^{-it Lap}`,
//! and `j_t = x - 2tp = x + 2it d` so that `J_t alpha_t = alpha_t J_0`.
//! With `U_t = e^{-i|x|^2/4t}` one has `J_t k = 2it U_t^* D(U_t k U_t^*) U_t`.

use crate::error::{Error, Result};
use crate::grid::{Grid, C64, MAX_DIM};
use crate::operator::{FiniteRankOperator, Term};

/// Compression applied after every field application.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankBudget {
    pub max_rank: usize,
    pub tol: f64,
}

impl Default for RankBudget {
    fn default() -> Self {
        Self {
            max_rank: 256,
            tol: 1e-12,
        }
    }
}

impl RankBudget {
    fn enforce(&self, op: FiniteRankOperator) -> Result<FiniteRankOperator> {
        let c = op.compress(self.tol)?;
        if c.rank() > self.max_rank {
            return Err(Error::RankBudget {
                rank: c.rank(),
                budget: self.max_rank,
            });
        }
        Ok(c)
    }
}

/// `(x_l - 2 t p_l) phi`.
pub fn j_apply(grid: &Grid, phi: &[C64], t: f64, axis: usize) -> Result<Vec<C64>> {
    grid.check_axis(axis)?;
    if !t.is_finite() {
        return Err(Error::NonFinite { time: t });
    }
    let mut out = phi.to_vec();
    if t != 0.0 {
        grid.derivative_in_place(&mut out, axis)?;
    } else if phi.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            expected: grid.len(),
            found: phi.len(),
        });
    }
    let c = C64::new(0.0, 2.0 * t);
    for (i, (o, f)) in out.iter_mut().zip(phi).enumerate() {
        let x = grid.point(i)[axis];
        *o = if t != 0.0 { c * *o + x * f } else { x * f };
    }
    Ok(out)
}

fn derivative(grid: &Grid, phi: &[C64], axis: usize) -> Result<Vec<C64>> {
    let mut out = phi.to_vec();
    grid.derivative_in_place(&mut out, axis)?;
    Ok(out)
}

/// `[A, k]` for an orbital operator `A` with `A^* = sign * A`:
/// `sum c (|A l><r| - |l><A^* r|)`.
fn orbital_commutator<F>(kappa: &FiniteRankOperator, apply: F, sign: f64) -> Result<FiniteRankOperator>
where
    F: Fn(&[C64]) -> Result<Vec<C64>>,
{
    let mut terms = Vec::with_capacity(2 * kappa.rank());
    for t in kappa.terms() {
        terms.push(Term {
            coeff: t.coeff,
            left: apply(&t.left)?,
            right: t.right.clone(),
        });
        terms.push(Term {
            coeff: -t.coeff * sign,
            left: t.left.clone(),
            right: apply(&t.right)?,
        });
    }
    FiniteRankOperator::from_terms(kappa.grid().clone(), terms)
}

/// `J_l k` without compression; rank `2R`.
pub fn j_commutator_raw(kappa: &FiniteRankOperator, t: f64, axis: usize) -> Result<FiniteRankOperator> {
    let g = kappa.grid().clone();
    // j is symmetric
    orbital_commutator(kappa, |v| j_apply(&g, v, t, axis), 1.0)
}

pub fn j_commutator(
    kappa: &FiniteRankOperator,
    t: f64,
    axis: usize,
    budget: &RankBudget,
) -> Result<FiniteRankOperator> {
    budget.enforce(j_commutator_raw(kappa, t, axis)?)
}

/// `D_l k` without compression; kernel `(d_x + d_y) K`.
pub fn d_commutator_raw(kappa: &FiniteRankOperator, axis: usize) -> Result<FiniteRankOperator> {
    let g = kappa.grid().clone();
    g.check_axis(axis)?;
    // d is antisymmetric: k d = -sum c |l><d r|
    orbital_commutator(kappa, |v| derivative(&g, v, axis), -1.0)
}

pub fn d_commutator(kappa: &FiniteRankOperator, axis: usize, budget: &RankBudget) -> Result<FiniteRankOperator> {
    budget.enforce(d_commutator_raw(kappa, axis)?)
}

/// Phase `e^{-i|x|^2/4t}` on the grid.
pub fn gauge_phase(grid: &Grid, t: f64) -> Result<Vec<C64>> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::InvalidParameter(format!("gauge conjugation at t = {t}")));
    }
    Ok((0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            C64::from_polar(1.0, -r2 / (4.0 * t))
        })
        .collect())
}

/// `U_t k U_t^*`.
pub fn gauge_conjugate(kappa: &FiniteRankOperator, t: f64) -> Result<FiniteRankOperator> {
    let phase = gauge_phase(kappa.grid(), t)?;
    let out = kappa.map_orbitals(|v| {
        v.iter_mut().zip(&phase).for_each(|(a, p)| *a *= p);
        Ok(())
    })?;
    Ok(out.with_flags(kappa.is_self_adjoint(), kappa.is_nonneg()))
}

/// `U k U^{-1}` with `U = e^{i(v.x - |v|^2 t)} e^{-2t v.grad}`.
pub fn boost(kappa: &FiniteRankOperator, v: [f64; MAX_DIM], t: f64) -> Result<FiniteRankOperator> {
    let g = kappa.grid().clone();
    let v2 = v.iter().map(|c| c * c).sum::<f64>();
    let shift = [2.0 * v[0] * t, 2.0 * v[1] * t, 2.0 * v[2] * t];
    let moves = shift.iter().any(|s| *s != 0.0);
    let phase: Vec<C64> = (0..g.len())
        .map(|i| {
            let p = g.point(i);
            C64::from_polar(1.0, v[0] * p[0] + v[1] * p[1] + v[2] * p[2] - v2 * t)
        })
        .collect();
    let out = kappa.map_orbitals(|f| {
        if moves {
            g.translate_in_place(f, &shift)?;
        }
        f.iter_mut().zip(&phase).for_each(|(a, p)| *a *= p);
        Ok(())
    })?;
    Ok(out.with_flags(kappa.is_self_adjoint(), kappa.is_nonneg()))
}

/// Multi-indices of order `<= s` as lists of axes, e.g. `[0, 1]` for `J_0 J_1`.
fn multi_indices(dim: usize, s: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for a in 0..dim {
        if s >= 1 {
            out.push(vec![a]);
        }
    }
    if s >= 2 {
        for a in 0..dim {
            for b in a..dim {
                out.push(vec![a, b]);
            }
        }
    }
    out
}

fn weighted_norm<F>(kappa: &FiniteRankOperator, s: usize, field: F) -> Result<f64>
where
    F: Fn(&FiniteRankOperator, usize) -> Result<FiniteRankOperator>,
{
    if s > 2 {
        return Err(Error::InvalidParameter(format!("weighted norm order {s} > 2")));
    }
    let dim = kappa.grid().dim();
    let firsts: Vec<FiniteRankOperator> = if s >= 1 {
        (0..dim).map(|a| field(kappa, a)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let mut total = 0.0;
    for alpha in multi_indices(dim, s) {
        total += match alpha.as_slice() {
            [] => kappa.hs_norm(),
            [a] => firsts[*a].hs_norm(),
            [a, b] => field(&firsts[*a], *b)?.hs_norm(),
            _ => unreachable!(),
        };
    }
    Ok(total)
}

/// `sum_{|alpha| <= s} ||J^alpha k||_{I^2}`.
pub fn weighted_norm_w(kappa: &FiniteRankOperator, s: usize, t: f64, budget: &RankBudget) -> Result<f64> {
    weighted_norm(kappa, s, |k, a| j_commutator(k, t, a, budget))
}

/// `sum_{|alpha| <= s} ||D^alpha k||_{I^2}`.
pub fn weighted_norm_v(kappa: &FiniteRankOperator, s: usize, budget: &RankBudget) -> Result<f64> {
    weighted_norm(kappa, s, |k, a| d_commutator(k, a, budget))
}

fn japanese_bracket(grid: &Grid, b: f64) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            (1.0 + p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).powf(b / 2.0)
        })
        .collect()
}

/// `||<x>^b k||_{I^2}`.
pub fn weight_x_norm(kappa: &FiniteRankOperator, b: f64) -> Result<f64> {
    let w = japanese_bracket(kappa.grid(), b);
    let out = kappa.map_left(|v| {
        v.iter_mut().zip(&w).for_each(|(a, c)| *a *= c);
        Ok(())
    })?;
    Ok(out.hs_norm())
}

/// `||<grad>^b k||_{I^2}` through the Fourier multiplier `(1 + |xi|^2)^{b/2}`.
pub fn weight_grad_norm(kappa: &FiniteRankOperator, b: f64) -> Result<f64> {
    let g = kappa.grid().clone();
    let out = kappa.map_left(|v| g.apply_multiplier_in_place(v, |xi| {
        let k2 = xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2];
        C64::new((1.0 + k2).powf(b / 2.0), 0.0)
    }))?;
    Ok(out.hs_norm())
}

/// `||<x>^b g <x>^b||_{I^1}` for `g = k^* k`, which equals `||k <x>^b||_{I^2}^2`.
pub fn gamma_weight_trace(kappa: &FiniteRankOperator, b: f64) -> Result<f64> {
    let w = japanese_bracket(kappa.grid(), b);
    let out = kappa.map_right(|v| {
        v.iter_mut().zip(&w).for_each(|(a, c)| *a *= c);
        Ok(())
    })?;
    Ok(out.hs_norm().powi(2))
}

/// Free flow `alpha_t(k)`: both orbital families propagated by `e^{it Lap}`.
pub fn free_flow(kappa: &FiniteRankOperator, t: f64) -> Result<FiniteRankOperator> {
    let g = kappa.grid().clone();
    if !t.is_finite() {
        return Err(Error::NonFinite { time: t });
    }
    let out = kappa.map_orbitals(|v| g.free_propagate_in_place(v, t))?;
    Ok(out.with_flags(kappa.is_self_adjoint(), kappa.is_nonneg()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn gaussian(grid: &Grid, center: [f64; 2], width: f64, freq: [f64; 2]) -> Vec<C64> {
        let v: Vec<C64> = (0..grid.len())
            .map(|i| {
                let p = grid.point(i);
                let mut r2 = 0.0;
                let mut ph = 0.0;
                for a in 0..grid.dim() {
                    r2 += (p[a] - center[a]).powi(2);
                    ph += freq[a] * p[a];
                }
                C64::from_polar((-r2 / (2.0 * width * width)).exp(), ph)
            })
            .collect();
        let n = grid.norm(&v);
        v.into_iter().map(|z| z / n).collect()
    }

    fn random_op(grid: &Arc<Grid>, rank: usize, rng: &mut ChaCha8Rng) -> FiniteRankOperator {
        let orb = |rng: &mut ChaCha8Rng| {
            gaussian(
                grid,
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                rng.random_range(1.0..1.5),
                [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            )
        };
        let terms = (0..rank)
            .map(|_| Term {
                coeff: C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                left: orb(rng),
                right: orb(rng),
            })
            .collect();
        FiniteRankOperator::from_terms(grid.clone(), terms).unwrap()
    }

    fn line() -> Arc<Grid> {
        Grid::new(1, 512, 40.0).unwrap()
    }

    #[test]
    fn j_on_simple_inputs() {
        let g = line();
        let phi = gaussian(&g, [0.5, 0.0], 1.0, [0.0, 0.0]);
        let j0 = j_apply(&g, &phi, 0.0, 0).unwrap();
        for i in 0..g.len() {
            assert!((j0[i] - phi[i] * g.point(i)[0]).norm() < 1e-15);
        }
        // plane wave on an integer mode
        let xi0 = 5.0 * PI / g.half_length();
        let wave: Vec<C64> = (0..g.len()).map(|i| C64::from_polar(1.0, xi0 * g.point(i)[0])).collect();
        let t = 1.3;
        let jw = j_apply(&g, &wave, t, 0).unwrap();
        for i in 0..g.len() {
            let want = wave[i] * (g.point(i)[0] - 2.0 * t * xi0);
            assert!((jw[i] - want).norm() < 1e-10);
        }
        // Gaussian phi = c exp(-x^2/2): j phi = (x + 2it phi'/phi) phi = x (1 - 2it) phi
        let std = gaussian(&g, [0.0, 0.0], 1.0, [0.0, 0.0]);
        let j1 = j_apply(&g, &std, 1.0, 0).unwrap();
        for i in 0..g.len() {
            let x = g.point(i)[0];
            assert!((j1[i] - std[i] * C64::new(x, -2.0 * x)).norm() < 1e-10);
        }
        assert!(j_apply(&g, &std, 1.0, 1).is_err());
    }

    #[test]
    fn j_commutator_of_gaussian_projection() {
        let g = line();
        let phi = gaussian(&g, [0.0, 0.0], 1.0, [0.0, 0.0]);
        let p = FiniteRankOperator::hermitian(g.clone(), &[1.0], vec![phi]).unwrap();
        let b = RankBudget::default();
        let j = j_commutator(&p, 0.0, 0, &b).unwrap();
        assert!(j.rank() <= 2);
        assert!((j.hs_norm() - 1.0).abs() < 1e-10);
        for t in [0.7, 2.5] {
            let plus = j_commutator(&p, t, 0, &b).unwrap().hs_norm();
            let minus = j_commutator(&p, -t, 0, &b).unwrap().hs_norm();
            assert!((plus - minus).abs() < 1e-10);
        }
        let tight = RankBudget { max_rank: 1, tol: 1e-12 };
        assert!(matches!(j_commutator(&p, 0.0, 0, &tight), Err(Error::RankBudget { .. })));
    }

    #[test]
    fn d_commutator_is_the_diagonal_derivative() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = random_op(&g, 2, &mut rng);
        let dk = d_commutator_raw(&k, 0).unwrap();
        let n = g.len();
        let kd = k.dense_kernel();
        let dd = dk.dense_kernel();
        // (d_x + d_y) K via spectral derivative of rows and columns
        let mut want = vec![C64::new(0.0, 0.0); n * n];
        for x in 0..n {
            let mut row: Vec<C64> = (0..n).map(|y| kd[x * n + y]).collect();
            g.derivative_in_place(&mut row, 0).unwrap();
            for y in 0..n {
                want[x * n + y] += row[y];
            }
        }
        for y in 0..n {
            let mut col: Vec<C64> = (0..n).map(|x| kd[x * n + y]).collect();
            g.derivative_in_place(&mut col, 0).unwrap();
            for x in 0..n {
                want[x * n + y] += col[x];
            }
        }
        let err = dd.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn d_kills_translation_invariant_operators() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let modes: Vec<Vec<C64>> = [-3i32, 0, 2]
            .iter()
            .map(|&m| {
                let xi = m as f64 * PI / g.half_length();
                (0..g.len()).map(|i| C64::from_polar(1.0, xi * g.point(i)[0])).collect()
            })
            .collect();
        let k = FiniteRankOperator::hermitian(g.clone(), &[1.0, 0.5, 2.0], modes).unwrap();
        assert!(d_commutator_raw(&k, 0).unwrap().hs_norm() < 1e-10 * k.hs_norm());
    }

    #[test]
    fn d_is_the_center_derivative_in_rc_coordinates() {
        // products of orbitals must be resolved, so the grid is finer than the orbitals need
        let g = Grid::new(2, 128, 12.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = random_op(&g, 2, &mut rng);
        for axis in 0..2 {
            let dk = d_commutator_raw(&k, axis).unwrap();
            for m in [0usize, 5, 37, 200] {
                let mut row = k.rc_row(m);
                g.derivative_in_place(&mut row, axis).unwrap();
                let drow = dk.rc_row(m);
                let err = row.iter().zip(&drow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(err < 1e-8, "{err}");
            }
        }
    }

    #[test]
    fn gauge_conjugation() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = random_op(&g, 3, &mut rng);
        let u = gauge_conjugate(&k, 1.7).unwrap();
        assert!((u.hs_norm() - k.hs_norm()).abs() < 1e-12);
        let (a, b) = (k.den(), u.den());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() < 1e-14);
        }
        let back = gauge_conjugate(&u, -1.7).unwrap();
        assert!(back.hs_distance(&k).unwrap() < 1e-12);
        assert!(gauge_conjugate(&k, 0.0).is_err());
    }

    #[test]
    fn boosts() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let k = random_op(&g, 2, &mut rng);
        assert!(boost(&k, [0.0; 3], 3.0).unwrap().hs_distance(&k).unwrap() < 1e-14);
        let v = [0.3, 0.0, 0.0];
        let t = 1.5;
        let b = boost(&k, v, t).unwrap();
        assert!((b.hs_norm() - k.hs_norm()).abs() < 1e-10);
        let mut shifted: Vec<C64> = k.den().into_values();
        g.translate_in_place(&mut shifted, &[2.0 * v[0] * t, 0.0, 0.0]).unwrap();
        for (x, y) in b.den().values().iter().zip(&shifted) {
            assert!((x - y).norm() < 1e-8);
        }
    }

    #[test]
    fn weighted_norms() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let k = random_op(&g, 2, &mut rng);
        let b = RankBudget::default();
        assert!((weighted_norm_w(&k, 0, 2.0, &b).unwrap() - k.hs_norm()).abs() < 1e-14);
        assert!((weighted_norm_v(&k, 0, &b).unwrap() - k.hs_norm()).abs() < 1e-14);
        // at t = 0 the fields are [x, .]
        let w1 = weighted_norm_w(&k, 1, 0.0, &b).unwrap();
        let xk = orbital_commutator(
            &k,
            |v| Ok(v.iter().enumerate().map(|(i, a)| a * g.point(i)[0]).collect()),
            1.0,
        )
        .unwrap();
        assert!((w1 - k.hs_norm() - xk.hs_norm()).abs() < 1e-10);
        // J-D identity at the level of norms
        let t = 2.0;
        let lhs = weighted_norm_w(&k, 1, t, &b).unwrap() - k.hs_norm();
        let u = gauge_conjugate(&k, t).unwrap();
        let rhs = 2.0 * t * (weighted_norm_v(&u, 1, &b).unwrap() - u.hs_norm());
        assert!((lhs - rhs).abs() < 1e-6 * lhs);
        assert!(weighted_norm_w(&k, 3, t, &b).is_err());
    }

    #[test]
    fn weighted_norms_are_norms() {
        let g = Grid::new(2, 32, 7.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let b = RankBudget::default();
        for _ in 0..3 {
            let x = random_op(&g, 2, &mut rng);
            let y = random_op(&g, 2, &mut rng);
            let s = C64::new(-0.6, 1.1);
            for order in 0..=2 {
                let w = |k: &FiniteRankOperator| weighted_norm_w(k, order, 1.0, &b).unwrap();
                let v = |k: &FiniteRankOperator| weighted_norm_v(k, order, &b).unwrap();
                assert!((w(&x.scale(s)) - s.norm() * w(&x)).abs() < 1e-9 * w(&x));
                assert!((v(&x.scale(s)) - s.norm() * v(&x)).abs() < 1e-9 * v(&x));
                let sum = x.add(&y).unwrap();
                assert!(w(&sum) <= w(&x) + w(&y) + 1e-10);
                assert!(v(&sum) <= v(&x) + v(&y) + 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_leibniz() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for t in [0.0, 1.0, 3.0] {
            let a = random_op(&g, 2, &mut rng);
            let b = random_op(&g, 2, &mut rng);
            let lhs = j_commutator_raw(&a.commutator(&b).unwrap(), t, 0).unwrap();
            let ja = j_commutator_raw(&a, t, 0).unwrap();
            let jb = j_commutator_raw(&b, t, 0).unwrap();
            let rhs = ja.commutator(&b).unwrap().add(&a.commutator(&jb).unwrap()).unwrap();
            let scale = a.hs_norm() * b.hs_norm() * (1.0 + ja.hs_norm() + jb.hs_norm());
            assert!(lhs.hs_distance(&rhs).unwrap() <= 1e-10 * scale);
        }
    }

    #[test]
    fn j_d_identity() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let k = random_op(&g, 3, &mut rng);
        for t in [0.5, 1.0, 2.0] {
            let j = j_commutator_raw(&k, t, 0).unwrap();
            let u = gauge_conjugate(&k, t).unwrap();
            let du = d_commutator_raw(&u, 0).unwrap();
            let back = gauge_conjugate(&du, -t).unwrap().scale(C64::new(0.0, 2.0 * t));
            let rel = j.hs_distance(&back).unwrap() / j.hs_norm();
            assert!(rel < 1e-6, "t = {t}: {rel}");
        }
    }

    #[test]
    fn free_flow_commutes_with_j() {
        let g = line();
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let k0 = random_op(&g, 2, &mut rng);
        for t in [0.5, 2.0] {
            let lhs = j_commutator_raw(&free_flow(&k0, t).unwrap(), t, 0).unwrap();
            let rhs = free_flow(&j_commutator_raw(&k0, 0.0, 0).unwrap(), t).unwrap();
            assert!(lhs.hs_distance(&rhs).unwrap() < 1e-8 * rhs.hs_norm());
        }
    }

    #[test]
    fn position_and_frequency_weights() {
        let g = line();
        assert_eq!(weight_x_norm(&FiniteRankOperator::zero(g.clone()), 1.0).unwrap(), 0.0);
        let phi = gaussian(&g, [0.3, 0.0], 1.2, [0.0, 0.0]);
        let p = FiniteRankOperator::hermitian(g.clone(), &[1.0], vec![phi.clone()]).unwrap();
        let quad: f64 = (0..g.len())
            .map(|i| (1.0 + g.point(i)[0].powi(2)) * phi[i].norm_sqr() * g.spacing())
            .sum();
        assert!((weight_x_norm(&p, 1.0).unwrap().powi(2) - quad).abs() < 1e-10);
        assert!((gamma_weight_trace(&p, 1.0).unwrap() - quad).abs() < 1e-10);

        let xi0 = 4.0 * PI / g.half_length();
        let wave: Vec<C64> = (0..g.len()).map(|i| C64::from_polar(1.0, xi0 * g.point(i)[0])).collect();
        let nrm = g.norm(&wave);
        let wave: Vec<C64> = wave.into_iter().map(|z| z / nrm).collect();
        let m = FiniteRankOperator::hermitian(g.clone(), &[1.0], vec![wave]).unwrap();
        for b in [1.0, 2.0] {
            let got = weight_grad_norm(&m, b).unwrap();
            assert!((got - (1.0 + xi0 * xi0).powf(b / 2.0)).abs() < 1e-10);
        }
    }
}
