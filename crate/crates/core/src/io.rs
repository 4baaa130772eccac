//! CSV and JSON writers for pipeline outputs.
//!
//! CSV files are comma separated with a header row, `.` decimals, LF line
//! endings, and shortest round-trip float formatting, so identical inputs
//! give byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::horizon::{Trajectory, WindowResult};
use crate::lti::GaussianDist;
use crate::pmf::Pmf;
use crate::quantization::unstack_index;
use crate::solver::{DistortionBudget, Solution};

/// In-memory CSV table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(parent) = path.as_ref().parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.render())?;
        Ok(())
    }
}

fn num(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

fn nums(xs: &[f64]) -> impl Iterator<Item = String> + '_ {
    xs.iter().map(|&x| num(x))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}{i}"))
}

pub fn pmf_table(pmf: &Pmf) -> Table {
    let mut t = Table::new(["index", "probability"]);
    for (i, &p) in pmf.probs().iter().enumerate() {
        t.push(vec![i.to_string(), num(p)]);
    }
    t
}

/// `(flat index, v_1..v_K, probability)` rows of a noise pmf over `𝒱^K`.
pub fn noise_table(q: &Pmf, n_v: usize, horizon: usize) -> Result<Table> {
    let mut t = Table::new(
        ["index".to_string()]
            .into_iter()
            .chain(numbered("v", horizon))
            .chain(["probability".to_string()]),
    );
    let bases = vec![n_v; horizon];
    for (i, &p) in q.probs().iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(unstack_index(i, &bases)?.iter().map(|v| v.to_string()));
        row.push(num(p));
        t.push(row);
    }
    Ok(t)
}

#[derive(Serialize)]
struct SolutionSidecar<'a> {
    epsilon: &'a DistortionBudget,
    objective_nats: f64,
    distortion: f64,
    gap: f64,
    iterations: usize,
    converged: bool,
}

/// Writes `q*` as CSV at `csv_path` and the scalar results as JSON next to
/// it (same stem, `.json`).
pub fn write_solution(
    csv_path: impl AsRef<Path>,
    sol: &Solution,
    epsilon: DistortionBudget,
    n_v: usize,
    horizon: usize,
) -> Result<()> {
    let csv_path = csv_path.as_ref();
    noise_table(&sol.q_star, n_v, horizon)?.write(csv_path)?;
    let sidecar = SolutionSidecar {
        epsilon: &epsilon,
        objective_nats: sol.objective,
        distortion: sol.distortion,
        gap: sol.gap,
        iterations: sol.iterations,
        converged: sol.converged,
    };
    let mut json = serde_json::to_string_pretty(&sidecar)?;
    json.push('\n');
    fs::write(csv_path.with_extension("json"), json)?;
    Ok(())
}

pub fn window_results_table(results: &[WindowResult]) -> Table {
    let mut t = Table::new([
        "k",
        "epsilon",
        "objective_nats",
        "baseline_nats",
        "distortion",
        "gap",
        "iterations",
        "converged",
        "step_distortion",
    ]);
    for r in results {
        t.push(vec![
            r.k.to_string(),
            r.epsilon.to_string(),
            num(r.objective),
            num(r.baseline),
            num(r.distortion),
            num(r.gap),
            r.iterations.to_string(),
            r.converged.to_string(),
            num(r.step_distortion),
        ]);
    }
    t
}

pub fn trajectory_table(traj: &Trajectory) -> Table {
    let Some(first) = traj.steps.first() else {
        return Table::new(["k"]);
    };
    let (nx, nu, ny, ns) = (first.x.len(), first.u.len(), first.y.len(), first.s.len());
    let header: Vec<String> = ["k".to_string()]
        .into_iter()
        .chain(numbered("x", nx))
        .chain(numbered("u", nu))
        .chain(numbered("y", ny))
        .chain(numbered("ytilde", ny))
        .chain(["y_index".to_string()])
        .chain(numbered("s", ns))
        .chain(numbered("stilde", ns))
        .chain(["s_index".to_string(), "v".to_string()])
        .chain(numbered("z", ny))
        .chain(["z_index".to_string()])
        .collect();
    let mut t = Table::new(header);
    for s in &traj.steps {
        let mut row = vec![s.k.to_string()];
        row.extend(nums(&s.x));
        row.extend(nums(&s.u));
        row.extend(nums(&s.y));
        row.extend(nums(&s.y_tilde));
        row.push(s.y_index.to_string());
        row.extend(nums(&s.s));
        row.extend(nums(&s.s_tilde));
        row.push(s.s_index.to_string());
        row.push(s.v.to_string());
        row.extend(nums(&s.z));
        row.push(s.z_index.to_string());
        t.push(row);
    }
    t
}

/// Mean as `(index, mean)` rows and covariance as a square matrix with
/// header `c0..c{m-1}`.
pub fn gaussian_tables(g: &GaussianDist) -> (Table, Table) {
    let mut mean = Table::new(["index", "mean"]);
    for (i, &m) in g.mean().iter().enumerate() {
        mean.push(vec![i.to_string(), num(m)]);
    }
    let m = g.dim();
    let mut cov = Table::new((0..m).map(|j| format!("c{j}")));
    for i in 0..m {
        cov.push((0..m).map(|j| num(g.cov()[(i, j)])).collect());
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_with_header_and_lf() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), num(0.1)]);
        t.push(vec!["2".into(), num(f64::INFINITY)]);
        assert_eq!(t.render(), "a,b\n1,0.1\n2,inf\n");
    }

    #[test]
    fn noise_rows_unstack_first_stage_fastest() {
        let q = Pmf::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let t = noise_table(&q, 2, 2).unwrap();
        assert_eq!(
            t.render(),
            "index,v1,v2,probability\n0,0,0,0.1\n1,1,0,0.2\n2,0,1,0.3\n3,1,1,0.4\n"
        );
    }

    #[test]
    fn solution_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let sol = Solution {
            q_star: Pmf::delta(4, 0).unwrap(),
            objective: 0.25,
            distortion: 0.0,
            gap: 0.0,
            iterations: 0,
            converged: true,
        };
        let path = dir.path().join("q.csv");
        write_solution(&path, &sol, DistortionBudget::Unbounded, 2, 2).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("q.json")).unwrap()).unwrap();
        assert_eq!(json["epsilon"], "inf");
        assert_eq!(json["objective_nats"], 0.25);
        assert!(fs::read_to_string(path).unwrap().starts_with("index,v1,v2,probability\n0,0,0,1\n"));
    }
}
