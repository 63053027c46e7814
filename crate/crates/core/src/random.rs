//! Seeded generators for initial data and for the random operator families
//! used by the property suites.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grid::{Grid, C64, MAX_DIM};
use crate::operator::{FiniteRankOperator, Term};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `exp(-|x - c|^2 / 2w^2 + i v.x)`, normalized in `L^2`.
pub fn gaussian_orbital(grid: &Grid, center: [f64; MAX_DIM], width: f64, velocity: [f64; MAX_DIM]) -> Vec<C64> {
    let d = grid.dim();
    let v: Vec<C64> = (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let (mut r2, mut ph) = (0.0, 0.0);
            for a in 0..d {
                r2 += (p[a] - center[a]).powi(2);
                ph += velocity[a] * p[a];
            }
            C64::from_polar((-r2 / (2.0 * width * width)).exp(), ph)
        })
        .collect();
    let n = grid.norm(&v);
    v.into_iter().map(|z| z / n).collect()
}

/// Mixture-of-Gaussians initial data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureParams {
    pub rank: usize,
    pub width: f64,
    /// Centers are drawn from `[-spread, spread]^d`; `None` means `L/8`.
    pub center_spread: Option<f64>,
    pub max_velocity: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            rank: 1,
            width: 1.0,
            center_spread: None,
            max_velocity: 2.0,
        }
    }
}

/// `gamma_0 = sum w_i |phi_i><phi_i|` with `Tr gamma_0 = 1`, returned as its
/// nonnegative square root `kappa_0`.
pub fn gaussian_mixture(grid: &Arc<Grid>, params: &MixtureParams, rng: &mut SeededRng) -> Result<FiniteRankOperator> {
    if params.rank == 0 || !(params.width > 0.0) || !(params.max_velocity >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad mixture parameters {params:?}")));
    }
    let d = grid.dim();
    let spread = params.center_spread.unwrap_or(grid.half_length() / 8.0);
    let mut weights = Vec::with_capacity(params.rank);
    let mut orbitals = Vec::with_capacity(params.rank);
    for _ in 0..params.rank {
        let mut center = [0.0; MAX_DIM];
        for c in center.iter_mut().take(d) {
            *c = if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
        }
        let velocity = random_in_ball(d, params.max_velocity, rng);
        orbitals.push(gaussian_orbital(grid, center, params.width, velocity));
        weights.push(rng.random_range(0.2..1.0));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    FiniteRankOperator::hermitian(grid.clone(), &weights, orbitals)?.sqrt_nonneg()
}

fn random_in_ball(d: usize, radius: f64, rng: &mut SeededRng) -> [f64; MAX_DIM] {
    let mut v = [0.0; MAX_DIM];
    if radius == 0.0 {
        return v;
    }
    let mut norm = 0.0;
    for c in v.iter_mut().take(d) {
        *c = rng.sample(StandardNormal);
        norm += *c * *c;
    }
    let norm = norm.sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
    v.iter_mut().for_each(|c| *c *= r / norm);
    v
}

/// General (non-self-adjoint) random operators for the property suites.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomOperatorParams {
    pub max_rank: usize,
    pub center_range: f64,
    pub freq_range: f64,
    pub width_min: f64,
    pub width_max: f64,
}

impl Default for RandomOperatorParams {
    fn default() -> Self {
        Self {
            max_rank: 4,
            center_range: 2.0,
            freq_range: 1.0,
            width_min: 1.0,
            width_max: 1.5,
        }
    }
}

pub fn random_operator(grid: &Arc<Grid>, params: &RandomOperatorParams, rng: &mut SeededRng) -> FiniteRankOperator {
    let rank = rng.random_range(1..=params.max_rank.max(1));
    let d = grid.dim();
    let orbital = |rng: &mut SeededRng| {
        let mut c = [0.0; MAX_DIM];
        let mut v = [0.0; MAX_DIM];
        for a in 0..d {
            c[a] = rng.random_range(-params.center_range..=params.center_range);
            v[a] = rng.random_range(-params.freq_range..=params.freq_range);
        }
        let w = rng.random_range(params.width_min..=params.width_max);
        gaussian_orbital(grid, c, w, v)
    };
    let terms = (0..rank)
        .map(|_| {
            let coeff = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let left = orbital(rng);
            let right = orbital(rng);
            Term { coeff, left, right }
        })
        .collect();
    FiniteRankOperator::from_terms(grid.clone(), terms).expect("orbitals sampled on the grid")
}

/// Random real-valued smooth multiplier, for the product estimate.
pub fn random_multiplier(grid: &Grid, rng: &mut SeededRng) -> Vec<C64> {
    let d = grid.dim();
    let mut k = [0.0; MAX_DIM];
    let mut c = [0.0; MAX_DIM];
    for a in 0..d {
        k[a] = rng.random_range(-1.5..1.5);
        c[a] = rng.random_range(-2.0..2.0);
    }
    let amp = rng.random_range(0.5..2.0);
    let width = rng.random_range(1.0..4.0);
    (0..grid.len())
        .map(|i| {
            let p = grid.point(i);
            let (mut r2, mut ph) = (0.0, 0.0);
            for a in 0..d {
                r2 += (p[a] - c[a]).powi(2);
                ph += k[a] * p[a];
            }
            C64::new(amp * (-r2 / (2.0 * width * width)).exp() * (1.0 + 0.5 * ph.cos()), 0.0)
        })
        .collect()
}
