//! Gaussian probabilities of axis-aligned, possibly unbounded boxes.
//!
//! Uses the separation-of-variables transform with variable prioritization
//! (Genz & Bretz) and a randomly shifted Richtmyer lattice with antithetic
//! baker-transformed points. The lattice is extensible, so each refinement
//! round doubles the number of points and keeps the earlier sums.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::lti::GaussianDist;
use crate::pmf::Pmf;

const SHIFTS: usize = 8;
const FIRST_ROUND: usize = 64;
const ERROR_FACTOR: f64 = 3.0;

/// Box `{x : lower < x <= upper}` (componentwise), infinite ends allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperRect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl HyperRect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::dim("upper", lower.len(), upper.len()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l.is_nan() || u.is_nan() || l >= u) {
            return Err(Error::InvalidArgument(
                "hyperrectangle needs lower < upper in every coordinate".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| l < v && v <= u)
    }

    /// Concatenation of boxes over disjoint coordinate blocks.
    pub fn product(parts: &[&HyperRect]) -> HyperRect {
        HyperRect {
            lower: parts.iter().flat_map(|p| p.lower.iter().copied()).collect(),
            upper: parts.iter().flat_map(|p| p.upper.iter().copied()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub abs_tol: f64,
    /// Upper bound on integrand evaluations per box.
    pub max_points: usize,
    pub seed: u64,
    /// Rescale product-cell pmfs so every per-stage marginal matches the
    /// directly integrated marginal of that stage.
    pub calibrate_margins: bool,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            max_points: 1 << 20,
            seed: 0,
            calibrate_margins: true,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(Error::InvalidArgument("integration abs_tol must be > 0".into()));
        }
        if self.max_points < 2 * SHIFTS * FIRST_ROUND {
            return Err(Error::InvalidArgument(format!(
                "integration max_points must be >= {}",
                2 * SHIFTS * FIRST_ROUND
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectProb {
    pub probability: f64,
    pub error: f64,
    pub evaluations: usize,
    pub budget_exceeded: bool,
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `1 - Φ(x)` without cancellation.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

#[inline]
pub fn normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `Φ(hi) - Φ(lo)`, evaluated in the tail that keeps precision.
#[inline]
fn interval_prob(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        (normal_sf(lo) - normal_sf(hi)).max(0.0)
    } else {
        (normal_cdf(hi) - normal_cdf(lo)).max(0.0)
    }
}

/// Inverse-CDF draw from `N(0,1)` truncated to `(lo, hi]`.
#[inline]
fn truncated_draw(lo: f64, hi: f64, w: f64) -> f64 {
    const TINY: f64 = f64::MIN_POSITIVE;
    const ALMOST_ONE: f64 = 1.0 - f64::EPSILON;
    if lo > 0.0 {
        let cl = normal_sf(lo);
        let ch = normal_sf(hi);
        let u = (cl - w * (cl - ch)).clamp(TINY, ALMOST_ONE);
        -normal_quantile(u)
    } else {
        let dl = normal_cdf(lo);
        let dh = normal_cdf(hi);
        let u = (dl + w * (dh - dl)).clamp(TINY, ALMOST_ONE);
        normal_quantile(u)
    }
}

fn truncated_mean(lo: f64, hi: f64) -> f64 {
    let p = interval_prob(lo, hi);
    if p > 1e-300 {
        (normal_pdf(lo) - normal_pdf(hi)) / p
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo
    } else {
        hi
    }
}

fn first_primes(n: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(n);
    let mut c = 2u64;
    while primes.len() < n {
        if primes.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            primes.push(c);
        }
        c += 1;
    }
    primes
}

/// SplitMix64 finalizer; decorrelates per-cell seeds.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reordered Cholesky factor and limits for one box.
struct Prepared {
    chol: DMatrix<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Prepared {
    /// Cholesky with Genz–Bretz prioritization: at each step pick the
    /// remaining variable with the smallest conditional interval mass.
    fn new(cov: &DMatrix<f64>, mut lower: Vec<f64>, mut upper: Vec<f64>) -> Result<Self> {
        let m = lower.len();
        let mut c = cov.clone();
        let mut l = DMatrix::<f64>::zeros(m, m);
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut best = (i, f64::INFINITY, 0.0, 0.0);
            for j in i..m {
                let s: f64 = (0..i).map(|k| l[(j, k)] * y[k]).sum();
                let var = c[(j, j)] - (0..i).map(|k| l[(j, k)].powi(2)).sum::<f64>();
                if var <= 0.0 {
                    continue;
                }
                let den = var.sqrt();
                let lo = (lower[j] - s) / den;
                let hi = (upper[j] - s) / den;
                let p = interval_prob(lo, hi);
                if p < best.1 {
                    best = (j, p, lo, hi);
                }
            }
            if best.1.is_infinite() {
                return Err(Error::NotPositiveDefinite {
                    field: "integration covariance",
                    min_eigenvalue: 0.0,
                });
            }
            let j = best.0;
            if j != i {
                c.swap_rows(i, j);
                c.swap_columns(i, j);
                l.swap_rows(i, j);
                lower.swap(i, j);
                upper.swap(i, j);
            }
            let diag2 = c[(i, i)] - (0..i).map(|k| l[(i, k)].powi(2)).sum::<f64>();
            if !(diag2 > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    field: "integration covariance",
                    min_eigenvalue: diag2,
                });
            }
            let d = diag2.sqrt();
            l[(i, i)] = d;
            for r in i + 1..m {
                let s: f64 = (0..i).map(|k| l[(r, k)] * l[(i, k)]).sum();
                l[(r, i)] = (c[(r, i)] - s) / d;
            }
            y[i] = truncated_mean(best.2, best.3);
        }
        Ok(Self {
            chol: l,
            lower,
            upper,
        })
    }

    /// Integrand at `w ∈ [0,1]^(m-1)`; `y` is scratch of length `m`.
    #[inline]
    fn integrand(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let m = self.lower.len();
        let mut f = 1.0;
        for i in 0..m {
            let row = self.chol.row(i);
            let s: f64 = (0..i).map(|k| row[k] * y[k]).sum();
            let d = row[i];
            let lo = (self.lower[i] - s) / d;
            let hi = (self.upper[i] - s) / d;
            let p = interval_prob(lo, hi);
            f *= p;
            if f == 0.0 {
                return 0.0;
            }
            if i + 1 < m {
                y[i] = truncated_draw(lo, hi, w[i]);
            }
        }
        f
    }
}

/// Probability of a box under a Gaussian, with a QMC error estimate.
pub fn rect_prob(g: &GaussianDist, r: &HyperRect, cfg: &IntegrationConfig) -> Result<RectProb> {
    MvnIntegrator::new(g)?.prob(r, cfg, cfg.seed)
}

/// Shared setup for many boxes under one Gaussian.
pub struct MvnIntegrator<'a> {
    g: &'a GaussianDist,
}

impl<'a> MvnIntegrator<'a> {
    pub fn new(g: &'a GaussianDist) -> Result<Self> {
        if g.dim() > 0 && g.cov().clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                field: "integration covariance",
                min_eigenvalue: crate::lti::min_eigenvalue(g.cov()),
            });
        }
        Ok(Self { g })
    }

    pub fn prob(&self, r: &HyperRect, cfg: &IntegrationConfig, seed: u64) -> Result<RectProb> {
        cfg.validate()?;
        let g = self.g;
        if r.dim() != g.dim() {
            return Err(Error::dim("rect", g.dim(), r.dim()));
        }
        // Coordinates unbounded on both sides integrate to one exactly.
        let active: Vec<usize> = (0..r.dim())
            .filter(|&i| r.lower[i].is_finite() || r.upper[i].is_finite())
            .collect();
        let exact = |p: f64| RectProb {
            probability: p,
            error: 0.0,
            evaluations: 0,
            budget_exceeded: false,
        };
        if active.is_empty() {
            return Ok(exact(1.0));
        }
        let lower: Vec<f64> = active.iter().map(|&i| r.lower[i] - g.mean()[i]).collect();
        let upper: Vec<f64> = active.iter().map(|&i| r.upper[i] - g.mean()[i]).collect();
        let cov = DMatrix::from_fn(active.len(), active.len(), |i, j| {
            g.cov()[(active[i], active[j])]
        });
        if active.len() == 1 {
            let sd = cov[(0, 0)].sqrt();
            return Ok(exact(interval_prob(lower[0] / sd, upper[0] / sd)));
        }

        let prep = Prepared::new(&cov, lower, upper)?;
        Ok(qmc(&prep, cfg, seed))
    }
}

fn qmc(prep: &Prepared, cfg: &IntegrationConfig, seed: u64) -> RectProb {
    let m = prep.lower.len();
    let dim = m - 1;
    let gen: Vec<f64> = first_primes(dim)
        .into_iter()
        .map(|p| (p as f64).sqrt().fract())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<Vec<f64>> = (0..SHIFTS)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = [0.0f64; SHIFTS];
    let mut n_done = 0usize;
    let mut n_target = FIRST_ROUND;
    let mut w = vec![0.0; dim];
    let mut wa = vec![0.0; dim];
    let mut y = vec![0.0; m];
    loop {
        for (s, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for i in n_done + 1..=n_target {
                let fi = i as f64;
                for k in 0..dim {
                    let x = (fi * gen[k] + shift[k]).fract();
                    let t = (2.0 * x - 1.0).abs();
                    w[k] = t;
                    wa[k] = 1.0 - t;
                }
                acc += 0.5 * (prep.integrand(&w, &mut y) + prep.integrand(&wa, &mut y));
            }
            sums[s] += acc;
        }
        n_done = n_target;
        let means: Vec<f64> = sums.iter().map(|s| s / n_done as f64).collect();
        let est = means.iter().sum::<f64>() / SHIFTS as f64;
        let var = means.iter().map(|v| (v - est).powi(2)).sum::<f64>()
            / (SHIFTS * (SHIFTS - 1)) as f64;
        let error = ERROR_FACTOR * var.sqrt();
        let evaluations = 2 * SHIFTS * n_done;
        let converged = error <= cfg.abs_tol;
        if converged || 2 * evaluations > cfg.max_points {
            return RectProb {
                probability: est.clamp(0.0, 1.0),
                error,
                evaluations,
                budget_exceeded: !converged,
            };
        }
        n_target *= 2;
    }
}

/// Discretization of a Gaussian over a partition into boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct CellIntegration {
    /// Renormalized pmf (negatives clipped, sum exactly one up to rounding).
    pub pmf: Pmf,
    /// Per-cell estimates before renormalization.
    pub raw: Vec<f64>,
    pub errors: Vec<f64>,
    pub budget_exceeded: usize,
}

impl CellIntegration {
    pub fn raw_sum(&self) -> f64 {
        self.raw.iter().sum()
    }
}

/// Integrates every cell; cell `i` uses a seed derived from `(cfg.seed, i)`,
/// so results do not depend on evaluation order or thread count.
pub fn cell_pmf(
    g: &GaussianDist,
    cells: &[HyperRect],
    cfg: &IntegrationConfig,
) -> Result<CellIntegration> {
    cfg.validate()?;
    if cells.is_empty() {
        return Err(Error::InvalidArgument("no cells to integrate".into()));
    }
    let integrator = MvnIntegrator::new(g)?;
    let results: Vec<RectProb> = cells
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            integrator
                .prob(r, cfg, mix_seed(cfg.seed, i as u64))
                .map_err(|e| Error::Cell {
                    cell: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let raw: Vec<f64> = results.iter().map(|r| r.probability).collect();
    let errors: Vec<f64> = results.iter().map(|r| r.error).collect();
    let sum: f64 = raw.iter().sum();
    let bound = cells.len() as f64 * cfg.abs_tol;
    if (sum - 1.0).abs() > bound.max(1e-12) {
        return Err(Error::InvalidPmf(format!(
            "cell probabilities sum to {sum}, outside 1 ± {bound:e}; cells do not partition the space"
        )));
    }
    let clipped: Vec<f64> = raw.iter().map(|&p| p.max(0.0)).collect();
    let pmf = Pmf::normalized(clipped)?;
    Ok(CellIntegration {
        pmf,
        raw,
        errors,
        budget_exceeded: results.iter().filter(|r| r.budget_exceeded).count(),
    })
}
