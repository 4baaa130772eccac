use privmap::info::mi_of_noise;
use privmap::solver::{solve, DistortionBudget, ProgramInstance, SolverConfig};
use privmap::{CondPmf, CostData, Pmf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(seed: u64) -> CostData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pmf = |n: usize| {
        Pmf::normalized((0..n).map(|_| rng.random::<f64>().powi(2) + 1e-3).collect()).unwrap()
    };
    let p_s = pmf(4);
    let rows: Vec<f64> = (0..4).flat_map(|_| pmf(4).into_vec()).collect();
    CostData::new(
        p_s,
        CondPmf::new(4, 4, rows, vec![true; 4]).unwrap(),
        vec![vec![0.0], vec![1.0]],
        2,
        2,
    )
    .unwrap()
}

/// Minimum over the grid `{q : q_i = n_i / 200}` of the 3-simplex.
fn grid_minimum(data: &CostData, eps: f64) -> f64 {
    let steps = 200usize;
    let mut best = f64::INFINITY;
    for a in 0..=steps {
        for b in 0..=steps - a {
            for c in 0..=steps - a - b {
                let d = steps - a - b - c;
                let q = [a, b, c, d].map(|n| n as f64 / steps as f64);
                let dist: f64 = q.iter().zip(data.d()).map(|(q, d)| q * d).sum();
                if dist > eps + 1e-12 {
                    continue;
                }
                let v = mi_of_noise(&Pmf::new(q.to_vec()).unwrap(), data).unwrap();
                best = best.min(v);
            }
        }
    }
    best
}

#[test]
fn matches_grid_search_on_four_variables() {
    for seed in 0..2 {
        let data = random_data(seed);
        let dmax = data.d().iter().cloned().fold(0.0, f64::max);
        for eps in [f64::INFINITY, 0.5 * dmax, 0.0] {
            let budget = DistortionBudget::new(eps).unwrap();
            let sol = solve(&ProgramInstance { data: &data, epsilon: budget }, &SolverConfig::default()).unwrap();
            let grid = grid_minimum(&data, eps);
            assert!(sol.converged);
            assert!(sol.objective <= grid + 1e-9, "solver above grid: {} vs {grid}", sol.objective);
            assert!(grid - sol.objective < 1e-3, "seed {seed} eps {eps}: {} vs {grid}", sol.objective);
        }
    }
}
