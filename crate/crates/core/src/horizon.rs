//! Receding-horizon pipeline: per-window pmfs, per-window programs, and
//! closed-loop simulation of the released stream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::cache::{cache_key, WindowCache};
use crate::error::{Error, Result};
use crate::info::{stage_cost_tables, CostData};
use crate::lti::{lifted_joint_window, GaussianDist, LtiSystem, SystemSpec};
use crate::mvn::{cell_pmf, mix_seed, CellIntegration, HyperRect, IntegrationConfig};
use crate::pmf::{calibrate_margins, factorize, Pmf};
use crate::quantization::{NoiseAlphabet, QuantizerSpec, RectQuantizer};
use crate::signal::InputSignal;
use crate::solver::{solve_sweep, DistortionBudget, Solution, SolverConfig};

const CACHE_FORMAT: u32 = 1;
const NOISE_STREAM: u64 = 0x5EE_D0F0_015E;

/// Everything that defines the family of window programs.
#[derive(Debug, Clone)]
pub struct Pipeline {
    system: LtiSystem,
    sensor: RectQuantizer,
    private: RectQuantizer,
    horizon: usize,
    n_v: usize,
    input: InputSignal,
    integration: IntegrationConfig,
    solver: SolverConfig,
}

/// Integrated pmf and program data for one window.
#[derive(Debug, Clone)]
pub struct WindowData {
    pub k: usize,
    pub gaussian: GaussianDist,
    pub cells: CellIntegration,
    pub cost: CostData,
    pub from_cache: bool,
}

impl WindowData {
    /// `p(ỹ_k^{k+K-1}, s̃_k^{k+K-1})`, `ỹ` block fastest.
    pub fn joint(&self) -> &Pmf {
        &self.cells.pmf
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub k: usize,
    pub epsilon: DistortionBudget,
    pub q_star: Pmf,
    pub objective: f64,
    pub baseline: f64,
    pub distortion: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Marginal of the first noise symbol, the only one ever applied.
    pub first_stage: Vec<f64>,
    /// Predicted `E‖Z(k) − Ỹ(k)‖²` for the applied symbol.
    pub step_distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub y_tilde: Vec<f64>,
    pub y_index: usize,
    pub s: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub s_index: usize,
    pub v: usize,
    pub z: Vec<f64>,
    pub z_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<Step>,
}

#[derive(Serialize)]
struct SolutionKey<'a> {
    format: u32,
    window: String,
    solver: &'a SolverConfig,
    n_v: usize,
    epsilons: Vec<String>,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    format: u32,
    system: SystemSpec,
    k: usize,
    horizon: usize,
    sensor: QuantizerSpec,
    private: QuantizerSpec,
    integration: &'a IntegrationConfig,
    inputs: Vec<Vec<f64>>,
}

impl Pipeline {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: LtiSystem,
        sensor: RectQuantizer,
        private: RectQuantizer,
        horizon: usize,
        n_v: usize,
        input: InputSignal,
        integration: IntegrationConfig,
        solver: SolverConfig,
    ) -> Result<Self> {
        if sensor.dims() != system.ny() {
            return Err(Error::dim("sensor quantizer", system.ny(), sensor.dims()));
        }
        if private.dims() != system.ns() {
            return Err(Error::dim("private quantizer", system.ns(), private.dims()));
        }
        input.validate()?;
        if input.dim() != system.nu() {
            return Err(Error::dim("input signal", system.nu(), input.dim()));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon K must be >= 1".into()));
        }
        NoiseAlphabet::new(n_v, sensor.len())?;
        integration.validate()?;
        solver.validate()?;
        Ok(Self {
            system,
            sensor,
            private,
            horizon,
            n_v,
            input,
            integration,
            solver,
        })
    }

    pub fn system(&self) -> &LtiSystem {
        &self.system
    }
    pub fn sensor(&self) -> &RectQuantizer {
        &self.sensor
    }
    pub fn private(&self) -> &RectQuantizer {
        &self.private
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn n_v(&self) -> usize {
        self.n_v
    }
    pub fn input(&self) -> &InputSignal {
        &self.input
    }
    pub fn integration(&self) -> &IntegrationConfig {
        &self.integration
    }
    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    fn inputs_for(&self, k: usize) -> Vec<DVector<f64>> {
        self.input.sequence((k + self.horizon).saturating_sub(2))
    }

    /// Lifted Gaussian of `(Y_k^{k+K-1}, S_k^{k+K-1})`.
    pub fn window_gaussian(&self, k: usize) -> Result<GaussianDist> {
        lifted_joint_window(&self.system, k, self.horizon, &self.inputs_for(k))
    }

    /// Product cells ordered like the joint pmf: sensor stages first, the
    /// first stage varying fastest, then private stages.
    pub fn joint_cells(&self) -> Result<Vec<HyperRect>> {
        let n_y = self.sensor.len();
        let n_s = self.private.len();
        let k = self.horizon as u32;
        let ycells: Vec<HyperRect> = (0..n_y).map(|i| self.sensor.cell(i)).collect::<Result<_>>()?;
        let scells: Vec<HyperRect> = (0..n_s).map(|i| self.private.cell(i)).collect::<Result<_>>()?;
        let (ny_k, ns_k) = (n_y.pow(k), n_s.pow(k));
        let mut out = Vec::with_capacity(ny_k * ns_k);
        for s in 0..ns_k {
            for y in 0..ny_k {
                let mut parts = Vec::with_capacity(2 * self.horizon);
                let mut rest = y;
                for _ in 0..self.horizon {
                    parts.push(&ycells[rest % n_y]);
                    rest /= n_y;
                }
                let mut rest = s;
                for _ in 0..self.horizon {
                    parts.push(&scells[rest % n_s]);
                    rest /= n_s;
                }
                out.push(HyperRect::product(&parts));
            }
        }
        Ok(out)
    }

    /// Cache key of window `k`.
    pub fn window_key(&self, k: usize) -> Result<String> {
        cache_key(&KeyMaterial {
            format: CACHE_FORMAT,
            system: self.system.to_spec(),
            k,
            horizon: self.horizon,
            sensor: self.sensor.to_spec(),
            private: self.private.to_spec(),
            integration: &self.integration,
            inputs: self
                .inputs_for(k)
                .iter()
                .map(|u| u.iter().copied().collect())
                .collect(),
        })
    }

    /// Integrates window `k`, consulting `cache` first when given.
    pub fn window(&self, k: usize, cache: Option<&WindowCache>) -> Result<WindowData> {
        self.window_inner(k, cache).map_err(|e| Error::Window {
            k,
            source: Box::new(e),
        })
    }

    fn window_inner(&self, k: usize, cache: Option<&WindowCache>) -> Result<WindowData> {
        let gaussian = self.window_gaussian(k)?;
        let key = match cache {
            Some(_) => Some(self.window_key(k)?),
            None => None,
        };
        let cached = match (cache, &key) {
            (Some(c), Some(key)) => c.load(key)?,
            _ => None,
        };
        let from_cache = cached.is_some();
        let cells = match cached {
            Some(c) => c,
            None => {
                let mut fresh = cell_pmf(&gaussian, &self.joint_cells()?, &self.integration)?;
                if self.integration.calibrate_margins {
                    fresh.pmf = self.calibrate(&gaussian, &fresh.pmf)?;
                }
                if let (Some(c), Some(key)) = (cache, &key) {
                    c.store(key, &fresh)?;
                }
                fresh
            }
        };
        let cost = self.cost_data(&cells.pmf)?;
        Ok(WindowData {
            k,
            gaussian,
            cells,
            cost,
            from_cache,
        })
    }

    /// Rescales a window pmf so each stage marginal equals the integral of
    /// that stage's own (low-dimensional) Gaussian marginal.
    fn calibrate(&self, gaussian: &GaussianDist, joint: &Pmf) -> Result<Pmf> {
        let (ny, ns) = (self.system.ny(), self.system.ns());
        let ycells: Vec<HyperRect> = (0..self.sensor.len()).map(|i| self.sensor.cell(i)).collect::<Result<_>>()?;
        let scells: Vec<HyperRect> = (0..self.private.len()).map(|i| self.private.cell(i)).collect::<Result<_>>()?;
        let mut bases = Vec::with_capacity(2 * self.horizon);
        let mut targets = Vec::with_capacity(2 * self.horizon);
        for (offset, width, cells) in [(0, ny, &ycells), (self.horizon * ny, ns, &scells)] {
            for t in 0..self.horizon {
                let idx: Vec<usize> = (offset + t * width..offset + (t + 1) * width).collect();
                let stage = cell_pmf(&gaussian.marginal(&idx)?, cells, &self.integration)?;
                bases.push(cells.len());
                targets.push(stage.pmf.into_vec());
            }
        }
        calibrate_margins(joint, &bases, &targets)
    }

    /// Program data from a joint pmf over `𝒴^K × 𝒮^K`.
    pub fn cost_data(&self, joint: &Pmf) -> Result<CostData> {
        let k = self.horizon as u32;
        let (p_s, p_y_given_s) =
            factorize(joint, self.sensor.len().pow(k), self.private.len().pow(k))?;
        CostData::new(
            p_s,
            p_y_given_s,
            self.sensor.levels().to_vec(),
            self.n_v,
            self.horizon,
        )
    }

    /// Solves one window for every budget (warm-started in increasing order).
    pub fn solve_window(
        &self,
        window: &WindowData,
        epsilons: &[DistortionBudget],
    ) -> Result<Vec<WindowResult>> {
        self.solve_window_cached(window, epsilons, None)
    }

    /// [`Pipeline::solve_window`], reusing stored solutions from `cache`.
    pub fn solve_window_cached(
        &self,
        window: &WindowData,
        epsilons: &[DistortionBudget],
        cache: Option<&WindowCache>,
    ) -> Result<Vec<WindowResult>> {
        let baseline = window.cost.baseline();
        let stage = stage_cost_tables(
            window.cost.p_y(),
            window.cost.levels(),
            self.n_v,
            self.horizon,
        )?;
        let key = match cache {
            Some(_) => Some(cache_key(&SolutionKey {
                format: CACHE_FORMAT,
                window: self.window_key(window.k)?,
                solver: &self.solver,
                n_v: self.n_v,
                epsilons: epsilons.iter().map(|e| e.to_string()).collect(),
            })?),
            None => None,
        };
        let stored = match (cache, &key) {
            (Some(c), Some(key)) => c.load_solutions(key)?.filter(|s| s.len() == epsilons.len()),
            _ => None,
        };
        let sols = match stored {
            Some(s) => s,
            None => {
                let fresh = solve_sweep(&window.cost, epsilons, &self.solver)?;
                if let (Some(c), Some(key)) = (cache, &key) {
                    c.store_solutions(key, &fresh)?;
                }
                fresh
            }
        };
        Ok(sols
            .into_iter()
            .zip(epsilons)
            .map(|(sol, &eps)| {
                let first_stage = first_stage_marginal(&sol.q_star, self.n_v);
                let step_distortion = first_stage.iter().zip(&stage[0]).map(|(q, e)| q * e).sum();
                let Solution {
                    q_star,
                    objective,
                    distortion,
                    gap,
                    iterations,
                    converged,
                } = sol;
                WindowResult {
                    k: window.k,
                    epsilon: eps,
                    q_star,
                    objective,
                    baseline,
                    distortion,
                    gap,
                    iterations,
                    converged,
                    first_stage,
                    step_distortion,
                }
            })
            .collect())
    }

    /// One program per window `k` and budget, ordered by `k` then budget.
    pub fn receding_solve(
        &self,
        epsilons: &[DistortionBudget],
        ks: &[usize],
        cache: Option<&WindowCache>,
    ) -> Result<Vec<WindowResult>> {
        if ks.is_empty() || epsilons.is_empty() {
            return Err(Error::InvalidArgument("need at least one window and one budget".into()));
        }
        let mut out = Vec::with_capacity(ks.len() * epsilons.len());
        for &k in ks {
            let w = self.window(k, cache)?;
            let res = self.solve_window_cached(&w, epsilons, cache).map_err(|e| Error::Window {
                k,
                source: Box::new(e),
            })?;
            out.extend(res);
        }
        Ok(out)
    }

    /// The one-shot program on the first window.
    pub fn finite_horizon_solve(
        &self,
        epsilon: DistortionBudget,
        cache: Option<&WindowCache>,
    ) -> Result<WindowResult> {
        let mut r = self.receding_solve(&[epsilon], &[1], cache)?;
        Ok(r.remove(0))
    }

    /// Simulates the plant for `k = 1..=k_max`, applying at each step the
    /// first symbol of a draw from that window's `q*`.
    pub fn simulate(&self, results: &[WindowResult], seed: u64, k_max: usize) -> Result<Trajectory> {
        let mut plan: Vec<Option<&WindowResult>> = vec![None; k_max + 1];
        for r in results {
            if r.k <= k_max {
                if plan[r.k].is_some() {
                    return Err(Error::InvalidArgument(format!("two results for window {}", r.k)));
                }
                plan[r.k] = Some(r);
            }
        }
        if let Some(k) = (1..=k_max).find(|&k| plan[k].is_none()) {
            return Err(Error::InvalidArgument(format!("no solution for window {k}")));
        }

        let sys = &self.system;
        let mut proc_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, NOISE_STREAM));
        let l_x1 = cholesky(sys.sigma_x1(), "sigma_X1")?;
        let l_m = cholesky(sys.sigma_m(), "sigma_M")?;
        let l_w = cholesky(sys.sigma_w(), "sigma_W")?;

        let mut x = sys.mu_x1() + &l_x1 * standard_normal(&mut proc_rng, sys.nx());
        let n_y = self.sensor.len();
        let mut steps = Vec::with_capacity(k_max);
        for (k, r) in plan.iter().enumerate().skip(1) {
            let r = r.expect("checked above");
            let u = self.input.at(k);
            let y = sys.c() * &x + &l_w * standard_normal(&mut proc_rng, sys.ny());
            let s = sys.d() * &x;
            let y_index = self.sensor.quantize(y.as_slice())?;
            let s_index = self.private.quantize(s.as_slice())?;
            let v = sample_first(&r.q_star, self.n_v, &mut noise_rng)?;
            let z_index = (y_index + v) % n_y;
            steps.push(Step {
                k,
                x: x.iter().copied().collect(),
                u: u.iter().copied().collect(),
                y: y.iter().copied().collect(),
                y_tilde: self.sensor.beta(y_index)?.to_vec(),
                y_index,
                s: s.iter().copied().collect(),
                s_tilde: self.private.beta(s_index)?.to_vec(),
                s_index,
                v,
                z: self.sensor.beta(z_index)?.to_vec(),
                z_index,
            });
            x = sys.a() * &x + sys.b() * &u + &l_m * standard_normal(&mut proc_rng, sys.nx());
        }
        Ok(Trajectory { seed, steps })
    }
}

fn cholesky(m: &DMatrix<f64>, field: &'static str) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite {
            field,
            min_eigenvalue: crate::lti::min_eigenvalue(m),
        })
}

fn standard_normal(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Marginal pmf of the first stage symbol of `q` over `𝒱^K`.
pub fn first_stage_marginal(q: &Pmf, n_v: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_v];
    for (v, &p) in q.probs().iter().enumerate() {
        out[v % n_v] += p;
    }
    out
}

/// Draws `v^K ~ q` by inverse CDF over the flat index and keeps the first
/// stage symbol.
pub fn sample_first(q: &Pmf, n_v: usize, rng: &mut impl Rng) -> Result<usize> {
    if n_v == 0 || q.len() % n_v != 0 {
        return Err(Error::InvalidArgument(format!(
            "pmf of size {} is not over a power of {n_v}",
            q.len()
        )));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in q.probs().iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if u < acc {
                return Ok(i % n_v);
            }
        }
    }
    Ok(last % n_v)
}

/// [`sample_first`] with a fresh generator seeded by `seed`.
pub fn sample_first_seeded(q: &Pmf, n_v: usize, seed: u64) -> Result<usize> {
    sample_first(q, n_v, &mut ChaCha8Rng::seed_from_u64(seed))
}
