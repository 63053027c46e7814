//! Self-interaction `g(rho) = l1 v * rho + l2 rho^beta`, its Gateaux
//! derivatives, the interaction energy, and the admissibility and range
//! classifiers.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{convolve_potential, GridFunction, PotentialSpec, C64};
use crate::par;

/// Densities below `-NEGATIVE_TOLERANCE * max(1, max rho)` are rejected.
pub const NEGATIVE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfInteraction {
    pub lambda1: f64,
    pub potential: PotentialSpec,
    pub lambda2: f64,
    pub beta: f64,
    /// Floor for `rho^{beta - k}` in derivative evaluations.
    pub eps_reg: f64,
}

impl Default for SelfInteraction {
    fn default() -> Self {
        Self::free()
    }
}

impl SelfInteraction {
    pub fn free() -> Self {
        Self {
            lambda1: 0.0,
            potential: PotentialSpec::None,
            lambda2: 0.0,
            beta: 1.0,
            eps_reg: 1e-12,
        }
    }

    pub fn hartree(lambda1: f64, potential: PotentialSpec) -> Self {
        Self {
            lambda1,
            potential,
            ..Self::free()
        }
    }

    pub fn power(lambda2: f64, beta: f64) -> Self {
        Self {
            lambda2,
            beta,
            ..Self::free()
        }
    }

    pub fn with_power(mut self, lambda2: f64, beta: f64) -> Self {
        self.lambda2 = lambda2;
        self.beta = beta;
        self
    }

    fn has_potential(&self) -> bool {
        self.lambda1 != 0.0 && self.potential != PotentialSpec::None
    }

    fn has_power(&self) -> bool {
        self.lambda2 != 0.0
    }

    pub fn is_free(&self) -> bool {
        !self.has_potential() && !self.has_power()
    }

    /// `g(rho)`, real valued.
    pub fn evaluate_g(&self, rho: &GridFunction) -> Result<GridFunction> {
        let r = checked_density(rho)?;
        let mut out = vec![C64::new(0.0, 0.0); r.len()];
        if self.has_potential() {
            let conv = convolve_potential(&real_function(rho, &r), self.potential)?;
            for (o, c) in out.iter_mut().zip(conv.values()) {
                *o = C64::new(self.lambda1 * c.re, 0.0);
            }
        }
        if self.has_power() {
            let (l2, beta) = (self.lambda2, self.beta);
            let power = par::map_slice(&r, |&v| l2 * pow0(v, beta));
            for (o, p) in out.iter_mut().zip(power) {
                o.re += p;
            }
        }
        GridFunction::new(rho.grid().clone(), out)
    }

    /// `dg(rho) xi`; `xi` may be complex.
    pub fn dg(&self, rho: &GridFunction, xi: &GridFunction) -> Result<GridFunction> {
        same_shape(rho, xi)?;
        let r = checked_density(rho)?;
        let mut out = GridFunction::zeros(rho.grid().clone());
        if self.has_potential() {
            let conv = convolve_potential(xi, self.potential)?;
            for (o, c) in out.values_mut().iter_mut().zip(conv.values()) {
                *o += self.lambda1 * c;
            }
        }
        if self.has_power() {
            let f = self.lambda2 * self.beta;
            for ((o, &p), x) in out.values_mut().iter_mut().zip(&r).zip(xi.values()) {
                *o += f * self.power_factor(p, 1) * x;
            }
        }
        Ok(out)
    }

    /// `d^2 g(rho) xi eta`; the Hartree part is linear and drops out.
    pub fn d2g(&self, rho: &GridFunction, xi: &GridFunction, eta: &GridFunction) -> Result<GridFunction> {
        same_shape(rho, xi)?;
        same_shape(rho, eta)?;
        let r = checked_density(rho)?;
        let mut out = GridFunction::zeros(rho.grid().clone());
        if self.has_power() {
            let f = self.lambda2 * self.beta * (self.beta - 1.0);
            for (((o, &p), x), y) in out
                .values_mut()
                .iter_mut()
                .zip(&r)
                .zip(xi.values())
                .zip(eta.values())
            {
                *o = f * self.power_factor(p, 2) * x * y;
            }
        }
        Ok(out)
    }

    /// `rho^{beta - k}`, floored at `eps_reg` when the exponent is negative.
    fn power_factor(&self, rho: f64, k: i32) -> f64 {
        let e = self.beta - k as f64;
        if e < 0.0 {
            rho.max(self.eps_reg).powf(e)
        } else {
            pow0(rho, e)
        }
    }

    /// `G(rho) = 1/2 l1 int rho v*rho + l2/(beta+1) int rho^{beta+1}`.
    pub fn interaction_energy(&self, rho: &GridFunction) -> Result<f64> {
        let r = checked_density(rho)?;
        let w = rho.grid().cell_volume();
        let mut e = 0.0;
        if self.has_potential() {
            let conv = convolve_potential(&real_function(rho, &r), self.potential)?;
            let s: f64 = r.iter().zip(conv.values()).map(|(a, c)| a * c.re).sum();
            e += 0.5 * self.lambda1 * s * w;
        }
        if self.has_power() {
            let b = self.beta + 1.0;
            let s: f64 = r.iter().map(|&v| pow0(v, b)).sum();
            e += self.lambda2 / b * s * w;
        }
        Ok(e)
    }

    /// Scaling class of the interaction; the worst component wins. Runs with
    /// a negative power coupling are classed long range regardless of `beta`.
    pub fn classify_range(&self, dim: usize) -> RangeClass {
        let d = dim as f64;
        let mut class = RangeClass::ShortRange;
        if self.has_potential() {
            let alpha = match self.potential {
                PotentialSpec::Riesz { a } => a,
                PotentialSpec::Delta => d,
                PotentialSpec::None => unreachable!(),
            };
            class = class.max(compare(alpha, 1.0));
        }
        if self.has_power() {
            class = class.max(compare(self.beta, 1.0 / d));
            if self.lambda2 < 0.0 {
                class = RangeClass::LongRange;
            }
        }
        class
    }

    pub fn check_admissibility(&self, dim: usize) -> AdmissibilityReport {
        let d = dim as f64;
        let mut warnings = Vec::new();
        let mut report = AdmissibilityReport {
            dim,
            si2_potential: None,
            si2_power: None,
            g_condbeta: None,
            witness: None,
            pqcond1: None,
            pqcond: None,
            convolution_omitted: false,
            admissible: true,
            warnings: Vec::new(),
        };
        if self.has_potential() {
            if dim == 1 {
                report.convolution_omitted = true;
                report.admissible = false;
                warnings.push("the convolution term is not admissible for d = 1".to_string());
            } else {
                match self.potential {
                    PotentialSpec::Riesz { a } => {
                        // |x|^{-a} lies in L^{d/a}_w; need d/a in (1, d)
                        let ok = a > 1.0 && a < d;
                        report.si2_potential = Some(ok);
                        if ok {
                            let p = d;
                            let q = 1.0 / (1.0 / p + 1.0 - a / d);
                            let q_prime = 2.0;
                            let w = Witness { p, q, q_prime };
                            let q_cap = if dim >= 3 { d / (d - 2.0) } else { f64::INFINITY };
                            report.pqcond1 = Some(p >= d && q <= q_cap + 1e-12 && (1.0..=2.0).contains(&q_prime));
                            report.pqcond = Some(
                                1.0 + 1.0 / p - 1.0 / q > 1.0 / d && 2.0 + 1.0 / p - 2.0 / q_prime > 1.0 / d,
                            );
                            report.witness = Some(w);
                        } else {
                            report.admissible = false;
                            warnings.push(format!("Riesz exponent {a} outside (1, {dim})"));
                        }
                    }
                    PotentialSpec::Delta => {
                        report.si2_potential = Some(false);
                        report.admissible = false;
                        warnings.push("contact potential is outside the weak-Lebesgue class".to_string());
                    }
                    PotentialSpec::None => {}
                }
            }
        }
        if self.has_power() {
            let b = self.beta;
            let si2 = b > 1.0 / (d.min(2.0));
            let cb = match dim {
                1 => b > 1.0,
                2 => b > 0.5,
                _ => b >= 0.5,
            };
            report.si2_power = Some(si2);
            report.g_condbeta = Some(cb);
            if !si2 && cb {
                warnings.push(format!("beta = {b} is admitted only by the wider exponent condition"));
            }
            if !si2 && !cb {
                report.admissible = false;
                warnings.push(format!("beta = {b} is below the admissible range for d = {dim}"));
            }
        }
        report.warnings = warnings;
        report
    }
}

/// Exponents `(p, q, q')` realizing the derivative bounds for a Riesz potential.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Witness {
    pub p: f64,
    pub q: f64,
    pub q_prime: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityReport {
    pub dim: usize,
    pub si2_potential: Option<bool>,
    pub si2_power: Option<bool>,
    pub g_condbeta: Option<bool>,
    pub witness: Option<Witness>,
    pub pqcond1: Option<bool>,
    pub pqcond: Option<bool>,
    pub convolution_omitted: bool,
    pub admissible: bool,
    pub warnings: Vec<String>,
}

impl AdmissibilityReport {
    /// Admissible but only through the wider exponent condition.
    pub fn has_warning(&self) -> bool {
        !self.warnings.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RangeClass {
    ShortRange,
    Critical,
    LongRange,
}

impl RangeClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RangeClass::ShortRange => "short_range",
            RangeClass::Critical => "critical",
            RangeClass::LongRange => "long_range",
        }
    }
}

impl fmt::Display for RangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn compare(exponent: f64, threshold: f64) -> RangeClass {
    if (exponent - threshold).abs() <= 1e-12 {
        RangeClass::Critical
    } else if exponent > threshold {
        RangeClass::ShortRange
    } else {
        RangeClass::LongRange
    }
}

/// Writes `beta` as `p/q` with `q <= max_den` when that is exact to 1e-12.
pub fn rational_exponent(beta: f64, max_den: u64) -> Option<(i64, u64)> {
    (1..=max_den).find_map(|q| {
        let p = (beta * q as f64).round();
        ((beta - p / q as f64).abs() <= 1e-12).then_some((p as i64, q))
    })
}

fn pow0(v: f64, e: f64) -> f64 {
    if v == 0.0 {
        if e == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        v.powf(e)
    }
}

fn same_shape(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if !a.grid().same_as(b.grid()) {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// Real parts, with small negative values clamped to zero.
fn checked_density(rho: &GridFunction) -> Result<Vec<f64>> {
    let mut r = rho.real_parts();
    let max = r.iter().copied().fold(0.0, f64::max);
    let floor = -NEGATIVE_TOLERANCE * max.max(1.0);
    for (i, v) in r.iter_mut().enumerate() {
        if !v.is_finite() || *v < floor {
            return Err(Error::NegativeDensity { index: i, value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(r)
}

fn real_function(rho: &GridFunction, r: &[f64]) -> GridFunction {
    GridFunction::from_real(rho.grid().clone(), r).expect("same grid length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, MAX_DIM};
    use std::sync::Arc;

    fn bump(grid: &Arc<Grid>, scale: f64) -> GridFunction {
        GridFunction::from_fn(grid.clone(), |p: [f64; MAX_DIM]| {
            let r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            C64::new(0.2 + scale * (-r2).exp(), 0.0)
        })
    }

    fn max_diff(a: &GridFunction, b: &GridFunction) -> f64 {
        a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn trivial_evaluations() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let rho = bump(&g, 1.0);
        let zero = SelfInteraction::free().evaluate_g(&rho).unwrap();
        assert!(zero.values().iter().all(|v| v.norm() == 0.0));
        let c = GridFunction::from_real(g.clone(), &vec![0.7; g.len()]).unwrap();
        let sq = SelfInteraction::power(1.0, 2.0).evaluate_g(&c).unwrap();
        assert!(sq.values().iter().all(|v| (v.re - 0.49).abs() < 1e-15));
        assert_eq!(SelfInteraction::free().interaction_energy(&rho).unwrap(), 0.0);
    }

    #[test]
    fn rejects_corrupted_density() {
        let g = Grid::new(1, 16, 4.0).unwrap();
        let mut v = vec![0.5; 16];
        v[3] = -1e-13;
        let ok = GridFunction::from_real(g.clone(), &v).unwrap();
        assert!(SelfInteraction::power(1.0, 2.0).evaluate_g(&ok).is_ok());
        v[3] = -1e-3;
        let bad = GridFunction::from_real(g.clone(), &v).unwrap();
        assert!(matches!(
            SelfInteraction::power(1.0, 2.0).evaluate_g(&bad),
            Err(Error::NegativeDensity { index: 3, .. })
        ));
    }

    #[test]
    fn contact_energy_of_constant() {
        let g = Grid::new(2, 16, 3.0).unwrap();
        let c = 0.4;
        let rho = GridFunction::from_real(g.clone(), &vec![c; g.len()]).unwrap();
        let e = SelfInteraction::hartree(1.0, PotentialSpec::Delta).interaction_energy(&rho).unwrap();
        assert!((e - 0.5 * c * c * 36.0).abs() < 1e-12);
    }

    #[test]
    fn hartree_part_is_the_scaled_convolution() {
        let g = Grid::new(2, 64, 10.0).unwrap();
        let rho = bump(&g, 1.0);
        let s = SelfInteraction::hartree(0.5, PotentialSpec::Riesz { a: 1.5 });
        let got = s.evaluate_g(&rho).unwrap();
        let conv = convolve_potential(&rho, PotentialSpec::Riesz { a: 1.5 }).unwrap();
        for (a, b) in got.values().iter().zip(conv.values()) {
            assert!((a.re - 0.5 * b.re).abs() < 1e-12);
            assert_eq!(a.im, 0.0);
        }
    }

    #[test]
    fn derivatives_by_central_differences() {
        let g = Grid::new(2, 32, 5.0).unwrap();
        let rho = bump(&g, 1.0);
        let xi = GridFunction::from_fn(g.clone(), |p: [f64; MAX_DIM]| C64::new((p[0] * 0.7).cos() * 0.1, 0.0));
        let eta = GridFunction::from_fn(g.clone(), |p: [f64; MAX_DIM]| C64::new((p[1] * 0.3).sin() * 0.1, 0.0));
        let cases = [
            SelfInteraction::power(1.3, 2.0),
            SelfInteraction::power(-0.7, 5.0 / 3.0),
            SelfInteraction::power(1.0, 0.75),
            SelfInteraction::hartree(0.8, PotentialSpec::Riesz { a: 1.5 }).with_power(0.3, 1.5),
        ];
        for s in cases {
            let shifted = |h: f64, dir: &GridFunction| {
                let v: Vec<C64> = rho.values().iter().zip(dir.values()).map(|(a, b)| a + h * b).collect();
                GridFunction::new(g.clone(), v).unwrap()
            };
            let dg = s.dg(&rho, &xi).unwrap();
            let mut errs = Vec::new();
            for h in [1e-3, 1e-4] {
                let p = s.evaluate_g(&shifted(h, &xi)).unwrap();
                let m = s.evaluate_g(&shifted(-h, &xi)).unwrap();
                let fd: Vec<C64> = p.values().iter().zip(m.values()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                let fd = GridFunction::new(g.clone(), fd).unwrap();
                errs.push(max_diff(&fd, &dg));
            }
            assert!(errs[0] < 1e-5, "{s:?}: {errs:?}");
            assert!(errs[1] < errs[0] / 50.0 || errs[1] < 1e-9, "{s:?}: {errs:?}");

            let d2 = s.d2g(&rho, &xi, &eta).unwrap();
            let h = 1e-4;
            let p = s.dg(&shifted(h, &eta), &xi).unwrap();
            let m = s.dg(&shifted(-h, &eta), &xi).unwrap();
            let fd: Vec<C64> = p.values().iter().zip(m.values()).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            let fd = GridFunction::new(g.clone(), fd).unwrap();
            assert!(max_diff(&fd, &d2) < 1e-6, "{s:?}");
        }
        // Hartree second derivative vanishes, power beta = 2 derivative is exact
        let h = SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a: 1.5 });
        assert!(h.d2g(&rho, &xi, &eta).unwrap().values().iter().all(|v| v.norm() == 0.0));
        let sq = SelfInteraction::power(0.9, 2.0).dg(&rho, &xi).unwrap();
        for ((a, r), x) in sq.values().iter().zip(rho.values()).zip(xi.values()) {
            assert!((a - 2.0 * 0.9 * r * x).norm() < 1e-14);
        }
    }

    #[test]
    fn energy_is_an_antiderivative_of_g() {
        let g = Grid::new(2, 32, 5.0).unwrap();
        let rho = bump(&g, 1.0);
        let xi = GridFunction::from_fn(g.clone(), |p: [f64; MAX_DIM]| C64::new((-(p[0] - 0.5).powi(2) - p[1] * p[1]).exp(), 0.0));
        let s = SelfInteraction::hartree(0.6, PotentialSpec::Riesz { a: 1.2 }).with_power(0.4, 4.0 / 3.0);
        let e0 = s.interaction_energy(&rho).unwrap();
        let gr = s.evaluate_g(&rho).unwrap();
        let want: f64 = gr.values().iter().zip(xi.values()).map(|(a, b)| a.re * b.re).sum::<f64>() * g.cell_volume();
        let mut prev = f64::INFINITY;
        for h in [1e-2, 1e-3, 1e-4] {
            let v: Vec<C64> = rho.values().iter().zip(xi.values()).map(|(a, b)| a + h * b).collect();
            let e1 = s.interaction_energy(&GridFunction::new(g.clone(), v).unwrap()).unwrap();
            let err = ((e1 - e0) / h - want).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn covariance() {
        let g = Grid::new(2, 32, 5.0).unwrap();
        let rho = bump(&g, 1.0);
        let s = SelfInteraction::hartree(0.6, PotentialSpec::Riesz { a: 1.5 }).with_power(0.4, 2.0);
        let shift = [3i64, -2, 0];
        let a = s.evaluate_g(&rho.roll(&shift)).unwrap();
        let b = s.evaluate_g(&rho).unwrap().roll(&shift);
        assert!(max_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn range_classes() {
        let riesz = |a| SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a });
        assert_eq!(riesz(1.0).classify_range(3), RangeClass::Critical);
        assert_eq!(riesz(1.5).classify_range(3), RangeClass::ShortRange);
        assert_eq!(riesz(0.5).classify_range(3), RangeClass::LongRange);
        assert_eq!(SelfInteraction::power(1.0, 2.0).classify_range(1).as_str(), "short_range");
        assert_eq!(SelfInteraction::power(1.0, 0.4).classify_range(2).as_str(), "long_range");
        assert_eq!(SelfInteraction::power(1.0, 1.0 / 3.0).classify_range(3).as_str(), "critical");
        assert_eq!(SelfInteraction::power(-1.0, 2.0).classify_range(1), RangeClass::LongRange);
        let delta = SelfInteraction::hartree(1.0, PotentialSpec::Delta);
        assert_eq!(delta.classify_range(1), RangeClass::Critical);
        assert_eq!(delta.classify_range(2), RangeClass::ShortRange);
        assert_eq!(riesz(1.5).with_power(1.0, 0.4).classify_range(2), RangeClass::LongRange);
        assert_eq!(SelfInteraction::free().classify_range(2), RangeClass::ShortRange);
    }

    #[test]
    fn admissibility() {
        let r = SelfInteraction::power(1.0, 2.0).check_admissibility(1);
        assert!(r.admissible && r.si2_power == Some(true) && r.g_condbeta == Some(true));
        let r = SelfInteraction::power(1.0, 0.5).check_admissibility(2);
        assert_eq!(r.g_condbeta, Some(false));
        assert!(!r.admissible);
        let r = SelfInteraction::power(1.0, 0.5).check_admissibility(3);
        assert_eq!((r.si2_power, r.g_condbeta), (Some(false), Some(true)));
        assert!(r.admissible && r.has_warning());

        let r = SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a: 1.5 }).check_admissibility(3);
        let w = r.witness.unwrap();
        assert!(r.admissible && r.pqcond == Some(true) && r.pqcond1 == Some(true));
        assert!((1.0 + 1.0 / w.p - 1.0 / w.q - 0.5).abs() < 1e-12);
        for a in [1.1, 1.9, 2.9] {
            let r = SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a }).check_admissibility(3);
            assert_eq!((r.pqcond, r.pqcond1), (Some(true), Some(true)), "a = {a}");
        }
        assert!(!SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a: 1.5 }).check_admissibility(1).admissible);
        assert!(!SelfInteraction::hartree(1.0, PotentialSpec::Riesz { a: 0.8 }).check_admissibility(2).admissible);
    }

    #[test]
    fn rational_exponents() {
        assert_eq!(rational_exponent(2.0, 8), Some((2, 1)));
        assert_eq!(rational_exponent(1.0 / 3.0, 8), Some((1, 3)));
        assert_eq!(rational_exponent(0.375, 8), Some((3, 8)));
        assert_eq!(rational_exponent(0.1, 8), None);
        assert_eq!(rational_exponent(std::f64::consts::PI, 8), None);
    }
}
