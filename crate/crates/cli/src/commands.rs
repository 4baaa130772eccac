//! The four subcommands. Each returns the files it wrote, in write order.

use std::fs;
use std::path::{Path, PathBuf};

use privmap::horizon::WindowData;
use privmap::io::{gaussian_tables, noise_table, trajectory_table, window_results_table, write_solution, Table};
use privmap::quantization::unstack_index;
use privmap::{DistortionBudget, Pipeline, Pmf, Solution, WindowCache, WindowResult};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::error::CliError;

/// Default cache location when neither the environment nor the config names one.
pub const DEFAULT_CACHE_DIR: &str = ".privmap-cache";
pub const MANIFEST: &str = "MANIFEST.txt";

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub epsilons: Option<Vec<DistortionBudget>>,
    pub no_cache: bool,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub results: Vec<WindowResult>,
}

struct Run {
    pipeline: Pipeline,
    config: crate::config::ExperimentConfig,
    out_dir: PathBuf,
    seed: u64,
    epsilons: Vec<DistortionBudget>,
    cache: Option<WindowCache>,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(loaded: &LoadedConfig, ov: &Overrides) -> Result<Self, CliError> {
        let mut config = loaded.config.clone();
        if let Some(eps) = &ov.epsilons {
            config.epsilons = eps.clone();
        }
        if let Some(seed) = ov.seed {
            config.seed = seed;
        }
        config.validate()?;
        let pipeline = config.pipeline(&loaded.base_dir)?;
        let out_dir = ov.out.clone().unwrap_or_else(|| config.output_dir.clone());
        let cache = (!ov.no_cache).then(|| {
            WindowCache::from_env_or(config.cache_dir.clone().unwrap_or_else(|| DEFAULT_CACHE_DIR.into()))
        });
        Ok(Self {
            pipeline,
            out_dir,
            seed: config.seed,
            epsilons: config.epsilons.clone(),
            config,
            cache,
            files: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.path(name);
        table.write(&path)?;
        self.files.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::create_dir_all(&self.out_dir)?;
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    /// Integrates and solves the given windows, in parallel over `k`.
    fn solve(&self, ks: &[usize]) -> Result<(Vec<WindowData>, Vec<WindowResult>), CliError> {
        let per_k: Vec<(WindowData, Vec<WindowResult>)> = ks
            .par_iter()
            .map(|&k| {
                let w = self.pipeline.window(k, self.cache.as_ref())?;
                let res = self
                    .pipeline
                    .solve_window_cached(&w, &self.epsilons, self.cache.as_ref())
                    .map_err(|e| privmap::Error::Window { k, source: Box::new(e) })?;
                Ok((w, res))
            })
            .collect::<Result<_, privmap::Error>>()?;
        let mut windows = Vec::with_capacity(ks.len());
        let mut results = Vec::with_capacity(ks.len() * self.epsilons.len());
        for (w, r) in per_k {
            windows.push(w);
            results.extend(r);
        }
        Ok((windows, results))
    }

    fn for_eps(results: &[WindowResult], eps: DistortionBudget) -> Vec<WindowResult> {
        results.iter().filter(|r| r.epsilon == eps).cloned().collect()
    }

    fn finish(self, results: Vec<WindowResult>) -> Result<Report, CliError> {
        let report = Report {
            out_dir: self.out_dir,
            files: self.files,
            results,
        };
        if let Some(r) = report.results.iter().find(|r| !r.converged) {
            return Err(CliError::NotConverged(format!(
                "window k={} epsilon={}: gap {:e} after {} iterations",
                r.k, r.epsilon, r.gap, r.iterations
            )));
        }
        Ok(report)
    }
}

/// File-name tag for a budget: `inf`, `7`, `0.5`.
pub fn eps_tag(eps: DistortionBudget) -> String {
    eps.to_string()
}

/// Lifted window Gaussian of `(Y_k^{k+K-1}, S_k^{k+K-1})` as mean and covariance CSVs.
pub fn lift(loaded: &LoadedConfig, ov: &Overrides, k: Option<usize>) -> Result<Report, CliError> {
    let mut run = Run::new(loaded, ov)?;
    let k = k.unwrap_or(run.config.k_range[0]);
    if k == 0 {
        return Err(CliError::Config("windows are numbered from k = 1".into()));
    }
    let g = run.pipeline.window_gaussian(k)?;
    let (mean, cov) = gaussian_tables(&g);
    run.write_table(&format!("lift_k{k}_mean.csv"), &mean)?;
    run.write_table(&format!("lift_k{k}_cov.csv"), &cov)?;
    run.finish(Vec::new())
}

/// One window (the first of `k_range`), every budget: `q*` CSV plus JSON sidecar.
pub fn solve(loaded: &LoadedConfig, ov: &Overrides) -> Result<Report, CliError> {
    let mut run = Run::new(loaded, ov)?;
    let k = run.config.k_range[0];
    let (_, results) = run.solve(&[k])?;
    for r in &results {
        let path = run.path(&format!("solution_eps{}.csv", eps_tag(r.epsilon)));
        let sol = Solution {
            q_star: r.q_star.clone(),
            objective: r.objective,
            distortion: r.distortion,
            gap: r.gap,
            iterations: r.iterations,
            converged: r.converged,
        };
        write_solution(&path, &sol, r.epsilon, run.pipeline.n_v(), run.pipeline.horizon())?;
        run.files.push(path.with_extension("json"));
        run.files.push(path);
    }
    run.finish(results)
}

fn mi_curves(ks: &[usize], epsilons: &[DistortionBudget], results: &[WindowResult]) -> Table {
    let header = ["k".to_string(), "baseline_nats".to_string()]
        .into_iter()
        .chain(epsilons.iter().map(|e| format!("objective_eps{}", eps_tag(*e))));
    let mut t = Table::new(header);
    for (i, &k) in ks.iter().enumerate() {
        let row = &results[i * epsilons.len()..(i + 1) * epsilons.len()];
        let mut line = vec![k.to_string(), format!("{}", row[0].baseline)];
        line.extend(row.iter().map(|r| format!("{}", r.objective)));
        t.push(line);
    }
    t
}

/// Receding-horizon sweep: one CSV per budget, the MI curves, and
/// `trajectories` sample paths per budget.
pub fn receding(loaded: &LoadedConfig, ov: &Overrides) -> Result<Report, CliError> {
    let mut run = Run::new(loaded, ov)?;
    let ks = run.config.windows();
    if run.config.trajectories > 0 && ks[0] != 1 {
        return Err(CliError::Config("trajectories need `k_range` to start at 1".into()));
    }
    let (_, results) = run.solve(&ks)?;
    for &eps in &run.epsilons.clone() {
        let rows = Run::for_eps(&results, eps);
        run.write_table(&format!("windows_eps{}.csv", eps_tag(eps)), &window_results_table(&rows))?;
        for t in 0..run.config.trajectories as u64 {
            let seed = run.seed.wrapping_add(t);
            let traj = run.pipeline.simulate(&rows, seed, *ks.last().expect("nonempty"))?;
            run.write_table(
                &format!("trajectory_eps{}_seed{seed}.csv", eps_tag(eps)),
                &trajectory_table(&traj),
            )?;
        }
    }
    let curves = mi_curves(&ks, &run.epsilons, &results);
    run.write_table("mi_curves.csv", &curves)?;
    run.finish(results)
}

fn stacked_header(prefix: &str, horizon: usize) -> impl Iterator<Item = String> + '_ {
    (1..=horizon).map(move |i| format!("{prefix}{i}"))
}

fn joint_table(windows: &[WindowData], n_y: usize, n_s: usize, horizon: usize) -> Result<Table, CliError> {
    let header = ["k".to_string(), "index".to_string()]
        .into_iter()
        .chain(stacked_header("y", horizon))
        .chain(stacked_header("s", horizon))
        .chain(["probability".to_string()]);
    let mut t = Table::new(header);
    let y_size = n_y.pow(horizon as u32);
    let mut bases = vec![n_y; horizon];
    bases.extend(vec![n_s; horizon]);
    for w in windows {
        for (i, &p) in w.joint().probs().iter().enumerate() {
            let digits = unstack_index(i % y_size, &bases[..horizon])?
                .into_iter()
                .chain(unstack_index(i / y_size, &bases[horizon..])?);
            let mut row = vec![w.k.to_string(), i.to_string()];
            row.extend(digits.map(|d| d.to_string()));
            row.push(format!("{p}"));
            t.push(row);
        }
    }
    Ok(t)
}

fn noise_evolution(results: &[WindowResult], n_v: usize, horizon: usize) -> Result<Table, CliError> {
    let mut t = Table::new(
        ["k".to_string(), "index".to_string()]
            .into_iter()
            .chain(stacked_header("v", horizon))
            .chain(["probability".to_string()]),
    );
    for r in results {
        let inner = noise_table(&r.q_star, n_v, horizon)?;
        for line in inner.render().lines().skip(1) {
            let mut row = vec![r.k.to_string()];
            row.extend(line.split(',').map(str::to_string));
            t.push(row);
        }
    }
    Ok(t)
}

/// `p(z, s̃)` under `q` next to `p(ỹ, s̃)`, both as `p(s̃)·p(·|s̃)` with
/// `ỹ`/`z` fastest.
pub fn released_joint(window: &WindowData, q: &Pmf) -> (Vec<f64>, Vec<f64>) {
    let cost = &window.cost;
    let p_s = cost.p_s().probs();
    let table = cost.output_table(q.probs());
    let n_z = table.len() / p_s.len();
    let released = table.iter().enumerate().map(|(i, &c)| p_s[i / n_z] * c).collect();
    let truth = cost
        .p_y_given_s()
        .data()
        .iter()
        .enumerate()
        .map(|(i, &c)| p_s[i / n_z] * c)
        .collect();
    (released, truth)
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Serialize)]
struct ReleasedSummary {
    epsilon: DistortionBudget,
    total_variation: f64,
}

#[derive(Serialize)]
struct Summary {
    windows: Vec<usize>,
    epsilons: Vec<DistortionBudget>,
    seed: u64,
    all_converged: bool,
    first_window_release: Vec<ReleasedSummary>,
}

/// Sorted `sha256  relative/path` lines for `files` under `root`.
pub fn manifest(root: &Path, files: &[PathBuf]) -> Result<String, CliError> {
    let mut lines = Vec::with_capacity(files.len());
    for f in files {
        let bytes = fs::read(f)?;
        let rel = f.strip_prefix(root).unwrap_or(f);
        lines.push(format!("{}  {}", hex::encode(Sha256::digest(&bytes)), rel.display()));
    }
    lines.sort_by(|a, b| a[66..].cmp(&b[66..]));
    lines.dedup();
    let mut out = lines.join("\n");
    out.push('\n');
    Ok(out)
}

/// Full case-study bundle: sample paths, window pmfs, noise pmfs, MI
/// curves, released-vs-true joints, and a manifest of content hashes.
pub fn reproduce(loaded: &LoadedConfig, ov: &Overrides) -> Result<Report, CliError> {
    let mut run = Run::new(loaded, ov)?;
    let ks = run.config.windows();
    if ks[0] != 1 {
        return Err(CliError::Config("reproduction needs `k_range` to start at 1".into()));
    }
    let (windows, results) = run.solve(&ks)?;
    let (n_v, horizon) = (run.pipeline.n_v(), run.pipeline.horizon());
    let (n_y, n_s) = (run.pipeline.sensor().len(), run.pipeline.private().len());
    let epsilons = run.epsilons.clone();
    let k_max = *ks.last().expect("nonempty");

    // Same seed for every budget so the plant paths coincide.
    for &eps in &epsilons {
        let rows = Run::for_eps(&results, eps);
        let traj = run.pipeline.simulate(&rows, run.seed, k_max)?;
        run.write_table(&format!("fig4_trajectory_eps{}.csv", eps_tag(eps)), &trajectory_table(&traj))?;
    }

    run.write_table("fig5_joint_pmf.csv", &joint_table(&windows, n_y, n_s, horizon)?)?;

    // Largest budget stands in for ∞ when the list lacks it.
    let widest = *epsilons
        .iter()
        .max_by(|a, b| a.value().total_cmp(&b.value()))
        .expect("nonempty");
    let tightest = *epsilons
        .iter()
        .min_by(|a, b| a.value().total_cmp(&b.value()))
        .expect("nonempty");
    let first = Run::for_eps(&results, widest).remove(0);
    run.write_table(
        &format!("fig6_qstar_k1_eps{}.csv", eps_tag(widest)),
        &noise_table(&first.q_star, n_v, horizon)?,
    )?;

    for &eps in &epsilons {
        let rows = Run::for_eps(&results, eps);
        run.write_table(
            &format!("fig6_qstar_evolution_eps{}.csv", eps_tag(eps)),
            &noise_evolution(&rows, n_v, horizon)?,
        )?;
        run.write_table(&format!("windows_eps{}.csv", eps_tag(eps)), &window_results_table(&rows))?;
    }

    run.write_table("fig7_mi_curves.csv", &mi_curves(&ks, &epsilons, &results))?;

    let mut released = Vec::new();
    let mut fig8 = vec![widest];
    if tightest != widest {
        fig8.push(tightest);
    }
    for eps in fig8 {
        let r = Run::for_eps(&results, eps).remove(0);
        let (p_zs, p_ys) = released_joint(&windows[0], &r.q_star);
        let y_size = n_y.pow(horizon as u32);
        let mut t = Table::new(["index", "z_index", "s_index", "p_z_s", "p_y_s"]);
        for (i, (a, b)) in p_zs.iter().zip(&p_ys).enumerate() {
            t.push(vec![
                i.to_string(),
                (i % y_size).to_string(),
                (i / y_size).to_string(),
                format!("{a}"),
                format!("{b}"),
            ]);
        }
        run.write_table(&format!("fig8_joint_k1_eps{}.csv", eps_tag(eps)), &t)?;
        released.push(ReleasedSummary {
            epsilon: eps,
            total_variation: total_variation(&p_zs, &p_ys),
        });
    }

    let summary = Summary {
        windows: ks.clone(),
        epsilons: epsilons.clone(),
        seed: run.seed,
        all_converged: results.iter().all(|r| r.converged),
        first_window_release: released,
    };
    run.write_json("summary.json", &summary)?;
    let mut cfg = run.config.clone();
    cfg.cache_dir = None;
    run.write_json("config.json", &cfg)?;

    let text = manifest(&run.out_dir, &run.files)?;
    let path = run.path(MANIFEST);
    fs::write(&path, text)?;
    run.files.push(path);
    run.finish(results)
}
