//! Conditional-gradient solver for the noise design problem: minimize
//! `I(q)` over the simplex intersected with `{d · q ≤ ε}`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::info::{gradient_from_table, CostData};
use crate::pmf::Pmf;

const STEP_TOL: f64 = 1e-12;
const LOG_FLOOR: f64 = 1e-300;
const START_SLACK: f64 = 1e-9;
const REFRESH_EVERY: usize = 64;

/// Upper bound on the expected squared distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistortionBudget {
    Finite(f64),
    Unbounded,
}

impl DistortionBudget {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::InvalidArgument(format!("distortion budget {value} must be >= 0")));
        }
        Ok(if value.is_infinite() {
            Self::Unbounded
        } else {
            Self::Finite(value)
        })
    }

    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::Unbounded => f64::INFINITY,
        }
    }

    pub fn admits(&self, distortion: f64, slack: f64) -> bool {
        distortion <= self.value() + slack
    }
}

impl fmt::Display for DistortionBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(v) => write!(f, "{v}"),
            Self::Unbounded => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for DistortionBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Self::Unbounded),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("cannot parse budget `{s}`")))
                .and_then(Self::new),
        }
    }
}

impl Serialize for DistortionBudget {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(v) => ser.serialize_f64(*v),
            Self::Unbounded => ser.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DistortionBudget {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(de)? {
            Raw::Num(v) => Self::new(v),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProgramInstance<'a> {
    pub data: &'a CostData,
    pub epsilon: DistortionBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub gap_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            max_iter: 20_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) {
            return Err(Error::InvalidArgument("solver gap_tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("solver max_iter must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub q_star: Pmf,
    pub objective: f64,
    pub distortion: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Vertex of `{q ≥ 0, Σq = 1, d · q ≤ ε}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Vertex {
    Unit(usize),
    /// `λ e_i + (1 − λ) e_j` with `d_i < ε < d_j` and `λ d_i + (1 − λ) d_j = ε`.
    Blend { i: usize, j: usize, lambda: f64 },
}

impl Vertex {
    pub fn dot(&self, c: &[f64]) -> f64 {
        match *self {
            Vertex::Unit(i) => c[i],
            Vertex::Blend { i, j, lambda } => lambda * c[i] + (1.0 - lambda) * c[j],
        }
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.add_to(&mut out, 1.0);
        out
    }

    fn add_to(&self, q: &mut [f64], w: f64) {
        match *self {
            Vertex::Unit(i) => q[i] += w,
            Vertex::Blend { i, j, lambda } => {
                q[i] += w * lambda;
                q[j] += w * (1.0 - lambda);
            }
        }
    }

    fn same(&self, other: &Vertex) -> bool {
        match (self, other) {
            (Vertex::Unit(a), Vertex::Unit(b)) => a == b,
            (Vertex::Blend { i, j, .. }, Vertex::Blend { i: a, j: b, .. }) => i == a && j == b,
            _ => false,
        }
    }
}

fn blend(d: &[f64], eps: f64, i: usize, j: usize) -> Vertex {
    Vertex::Blend {
        i,
        j,
        lambda: (d[j] - eps) / (d[j] - d[i]),
    }
}

/// Exact minimizer of `c · q` over the feasible polytope. Candidates are
/// scanned units first, then pairs `(i, j)` in lexicographic order; the
/// first strict minimum wins.
pub fn linear_oracle(c: &[f64], d: &[f64], epsilon: DistortionBudget) -> Result<Vertex> {
    if c.len() != d.len() {
        return Err(Error::dim("d", c.len(), d.len()));
    }
    if c.is_empty() {
        return Err(Error::InvalidArgument("empty oracle instance".into()));
    }
    let eps = epsilon.value();
    let mut best: Option<(f64, Vertex)> = None;
    let mut consider = |val: f64, v: Vertex| {
        if best.is_none_or(|(b, _)| val < b) {
            best = Some((val, v));
        }
    };
    for i in 0..c.len() {
        if d[i] <= eps {
            consider(c[i], Vertex::Unit(i));
        }
    }
    if eps.is_finite() {
        for i in (0..c.len()).filter(|&i| d[i] < eps) {
            for j in (0..c.len()).filter(|&j| d[j] > eps) {
                let v = blend(d, eps, i, j);
                consider(v.dot(c), v);
            }
        }
    }
    best.map(|(_, v)| v)
        .ok_or_else(|| Error::InvalidArgument("feasible set is empty".into()))
}

/// Writes a feasible `q` as a convex combination of polytope vertices by
/// pairing surplus `(ε − d_i) q_i` with deficit `(d_j − ε) q_j` in index
/// order.
fn decompose(q: &[f64], d: &[f64], eps: f64) -> Vec<(Vertex, f64)> {
    let mut rest = q.to_vec();
    let mut atoms = Vec::new();
    if eps.is_finite() {
        let lows: Vec<usize> = (0..q.len()).filter(|&i| d[i] < eps).collect();
        let mut li = 0;
        for j in (0..q.len()).filter(|&j| d[j] > eps) {
            while rest[j] > 0.0 && li < lows.len() {
                let i = lows[li];
                if rest[i] <= 0.0 {
                    li += 1;
                    continue;
                }
                let v = blend(d, eps, i, j);
                let Vertex::Blend { lambda, .. } = v else { unreachable!() };
                let w = (rest[i] / lambda).min(rest[j] / (1.0 - lambda));
                rest[i] -= w * lambda;
                rest[j] -= w * (1.0 - lambda);
                if rest[i] <= w * lambda * 1e-15 {
                    rest[i] = 0.0;
                }
                if rest[j] <= w * 1e-15 {
                    rest[j] = 0.0;
                }
                atoms.push((v, w));
            }
            rest[j] = 0.0;
        }
    }
    for (i, &r) in rest.iter().enumerate() {
        if r > 0.0 && d[i] <= eps {
            atoms.push((Vertex::Unit(i), r));
        }
    }
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in &mut atoms {
        a.1 /= total;
    }
    atoms
}

fn dense(atoms: &[(Vertex, f64)], n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n];
    for (v, w) in atoms {
        v.add_to(&mut q, *w);
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Default starting point: uniform noise, pulled toward `δ_0` when it
/// violates the budget.
pub fn initial_point(data: &CostData, epsilon: DistortionBudget) -> Pmf {
    let n = data.n_vars();
    let uniform = vec![1.0 / n as f64; n];
    let du = dot(data.d(), &uniform);
    let eps = epsilon.value();
    if du <= eps {
        return Pmf::new(uniform).expect("uniform pmf");
    }
    let keep = ((eps - START_SLACK) / du).clamp(0.0, 1.0);
    let mut q: Vec<f64> = uniform.iter().map(|u| keep * u).collect();
    q[0] += 1.0 - keep;
    Pmf::new(q).expect("blended pmf")
}

/// `φ(γ) = I(q + γ Δq)`, evaluated through the output table, which is
/// affine in `γ`.
struct LineProblem<'a> {
    data: &'a CostData,
    base: &'a [f64],
    dir: &'a [f64],
    buf: Vec<f64>,
}

impl LineProblem<'_> {
    fn fill(&mut self, gamma: f64) {
        for ((b, &x), &y) in self.buf.iter_mut().zip(self.base).zip(self.dir) {
            *b = (x + gamma * y).max(0.0);
        }
    }

    fn eval(&mut self, gamma: f64) -> f64 {
        self.fill(gamma);
        self.data.mi_of_table(&self.buf)
    }

    /// `(φ'(γ), φ''(γ))`.
    fn slope(&mut self, gamma: f64) -> (f64, f64) {
        self.fill(gamma);
        let p_s = self.data.p_s().probs();
        let n_z = self.buf.len() / p_s.len();
        let mut pz = vec![0.0; n_z];
        let mut dz = vec![0.0; n_z];
        for (s, &ps) in p_s.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            let rows = s * n_z..(s + 1) * n_z;
            for ((m, dm), (&t, &d)) in pz
                .iter_mut()
                .zip(dz.iter_mut())
                .zip(self.buf[rows.clone()].iter().zip(&self.dir[rows]))
            {
                *m += ps * t;
                *dm += ps * d;
            }
        }
        let (mut d1, mut d2) = (0.0, 0.0);
        for (s, &ps) in p_s.iter().enumerate() {
            if ps == 0.0 {
                continue;
            }
            let (mut r1, mut r2) = (0.0, 0.0);
            let rows = s * n_z..(s + 1) * n_z;
            for (&t, &d) in self.buf[rows.clone()].iter().zip(&self.dir[rows]) {
                if d != 0.0 {
                    r1 += d * t.max(LOG_FLOOR).ln();
                    if t > 0.0 {
                        r2 += d * d / t;
                    }
                }
            }
            d1 += ps * r1;
            d2 += ps * r2;
        }
        for (&m, &dm) in pz.iter().zip(&dz) {
            if dm != 0.0 {
                d1 -= dm * m.max(LOG_FLOOR).ln();
                if m > 0.0 {
                    d2 -= dm * dm / m;
                }
            }
        }
        (d1, d2.max(0.0))
    }

    /// Minimizes the convex `φ` on `[0, hi]` by bracketed Newton steps on
    /// `φ'`, falling back to bisection; stops once the bracket or the step
    /// is below `1e-12 · hi`.
    fn minimize(&mut self, hi: f64, f0: f64) -> (f64, f64) {
        let tol = STEP_TOL * hi;
        let (g0, h0) = self.slope(0.0);
        if !(g0 < 0.0) {
            return (0.0, f0);
        }
        let (ghi, _) = self.slope(hi);
        let gamma = if ghi <= 0.0 {
            hi
        } else {
            let (mut a, mut b) = (0.0, hi);
            let newton = |x: f64, g: f64, h: f64, a: f64, b: f64| {
                let step = x - g / h;
                if h > 0.0 && step > a && step < b {
                    step
                } else {
                    0.5 * (a + b)
                }
            };
            let mut x = newton(0.0, g0, h0, a, b);
            for _ in 0..200 {
                let (g, h) = self.slope(x);
                if g == 0.0 {
                    break;
                }
                if g < 0.0 {
                    a = x;
                } else {
                    b = x;
                }
                let next = newton(x, g, h, a, b);
                let moved = (next - x).abs();
                x = next;
                if b - a <= tol || moved <= tol {
                    break;
                }
            }
            x
        };
        let value = self.eval(gamma);
        if value <= f0 {
            (gamma, value)
        } else {
            (0.0, f0)
        }
    }
}

/// Solves the program from the default starting point.
pub fn solve(instance: &ProgramInstance<'_>, cfg: &SolverConfig) -> Result<Solution> {
    let start = initial_point(instance.data, instance.epsilon);
    solve_from(instance, cfg, &start)
}

/// Away-step Frank–Wolfe from a feasible `start`, with exact line search.
pub fn solve_from(instance: &ProgramInstance<'_>, cfg: &SolverConfig, start: &Pmf) -> Result<Solution> {
    cfg.validate()?;
    let data = instance.data;
    let n = data.n_vars();
    if start.len() != n {
        return Err(Error::dim("start", n, start.len()));
    }
    let d = data.d();
    if d[0] != 0.0 {
        return Err(Error::InvalidArgument("the zero shift must have zero distortion".into()));
    }
    let eps = instance.epsilon.value();
    if dot(d, start.probs()) > eps + 1e-12 {
        return Err(Error::InvalidArgument("starting point violates the budget".into()));
    }

    let mut atoms = decompose(start.probs(), d, eps);
    let mut q = dense(&atoms, n);
    let mut table = data.output_table(&q);
    let mut objective = data.mi_of_table(&table);
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    let mut dir = vec![0.0; n];

    while iterations < cfg.max_iter {
        let grad = gradient_from_table(data, &table);
        let fw = linear_oracle(&grad, d, instance.epsilon)?;
        let gq = dot(&grad, &q);
        gap = gq - fw.dot(&grad);
        if gap <= cfg.gap_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (away_idx, away_val) = atoms
            .iter()
            .enumerate()
            .map(|(k, (v, _))| (k, v.dot(&grad)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let away_gain = away_val - gq;
        let mut use_fw = gap >= away_gain || atoms.len() == 1;

        let (gamma, value, hi, dir_table) = loop {
            let hi = if use_fw {
                let s = fw.to_dense(n);
                for k in 0..n {
                    dir[k] = s[k] - q[k];
                }
                1.0
            } else {
                let (av, aw) = atoms[away_idx];
                let a = av.to_dense(n);
                for k in 0..n {
                    dir[k] = q[k] - a[k];
                }
                aw / (1.0 - aw)
            };
            let dir_table = data.output_table(&dir);
            let mut line = LineProblem {
                data,
                base: &table,
                dir: &dir_table,
                buf: vec![0.0; table.len()],
            };
            let (mut gamma, value) = line.minimize(hi, objective);
            if gamma > hi * (1.0 - 1e-6) {
                gamma = hi;
            }
            if gamma > 0.0 || use_fw {
                break (gamma, value, hi, dir_table);
            }
            use_fw = true;
        };
        if gamma == 0.0 {
            // no descent along the chosen direction at machine precision
            break;
        }

        if use_fw {
            for a in atoms.iter_mut() {
                a.1 *= 1.0 - gamma;
            }
            if gamma >= 1.0 {
                atoms.clear();
                atoms.push((fw, 1.0));
            } else if let Some(a) = atoms.iter_mut().find(|a| a.0.same(&fw)) {
                a.1 += gamma;
            } else {
                atoms.push((fw, gamma));
            }
        } else {
            for a in atoms.iter_mut() {
                a.1 *= 1.0 + gamma;
            }
            if gamma >= hi {
                atoms.remove(away_idx);
            } else {
                atoms[away_idx].1 -= gamma;
            }
        }
        atoms.retain(|a| a.1 > 0.0);
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        for a in atoms.iter_mut() {
            a.1 /= total;
        }

        q = dense(&atoms, n);
        if iterations % REFRESH_EVERY == 0 {
            table = data.output_table(&q);
        } else {
            for (t, &dt) in table.iter_mut().zip(&dir_table) {
                *t = (*t + gamma * dt).max(0.0);
            }
        }
        objective = value.min(objective);
    }

    let table = data.output_table(&q);
    let objective = data.mi_of_table(&table);
    let q_star = Pmf::normalized(q.iter().map(|x| x.max(0.0)).collect())?;
    let distortion = dot(d, q_star.probs());
    Ok(Solution {
        q_star,
        objective,
        distortion,
        gap,
        iterations,
        converged,
    })
}

/// Solves for every budget, warm-starting each from the solution at the
/// next smaller budget. Results follow the input order.
pub fn solve_sweep(
    data: &CostData,
    epsilons: &[DistortionBudget],
    cfg: &SolverConfig,
) -> Result<Vec<Solution>> {
    let mut order: Vec<usize> = (0..epsilons.len()).collect();
    order.sort_by(|&a, &b| epsilons[a].value().total_cmp(&epsilons[b].value()));
    let mut out: Vec<Option<Solution>> = vec![None; epsilons.len()];
    let mut prev: Option<Pmf> = None;
    for &idx in &order {
        let instance = ProgramInstance {
            data,
            epsilon: epsilons[idx],
        };
        let sol = match &prev {
            Some(p) => solve_from(&instance, cfg, p)?,
            None => solve(&instance, cfg)?,
        };
        prev = Some(sol.q_star.clone());
        out[idx] = Some(sol);
    }
    Ok(out.into_iter().map(|s| s.expect("every budget solved")).collect())
}
