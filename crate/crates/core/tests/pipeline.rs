use nalgebra::{DMatrix, DVector};
use privmap::horizon::first_stage_marginal;
use privmap::info::mi_of_noise_composed;
use privmap::{
    mi_of_noise, DistortionBudget, InputSignal, IntegrationConfig, LtiSystem, Pipeline, Pmf,
    RectQuantizer, SolverConfig, WindowCache,
};

fn pipeline(noise: f64, n_v: usize, horizon: usize) -> Pipeline {
    let sys = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.8, 0.1, 0.0, 0.5]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::identity(2, 2) * noise,
        DMatrix::identity(1, 1) * noise,
        DVector::from_vec(vec![0.5, -0.5]),
        DMatrix::identity(2, 2) * noise,
    )
    .unwrap();
    Pipeline::new(
        sys,
        RectQuantizer::scalar(vec![-1.0, 0.0, 1.0], vec![-1.5, -0.5, 0.5, 1.5]).unwrap(),
        RectQuantizer::scalar(vec![0.0], vec![-1.0, 1.0]).unwrap(),
        horizon,
        n_v,
        InputSignal::PiecewiseConstant {
            segments: vec![
                privmap::signal::Segment { from_k: 1, value: vec![0.2] },
                privmap::signal::Segment { from_k: 4, value: vec![-0.3] },
            ],
        },
        IntegrationConfig::default(),
        SolverConfig::default(),
    )
    .unwrap()
}

#[test]
fn released_stream_is_the_modular_shift() {
    let p = pipeline(1.0, 3, 2);
    let res = p.receding_solve(&[DistortionBudget::Finite(0.8)], &[1, 2, 3, 4, 5], None).unwrap();
    for seed in 0..20 {
        let traj = p.simulate(&res, seed, 5).unwrap();
        assert_eq!(traj.steps.len(), 5);
        for s in &traj.steps {
            let z = p.sensor().apply_mapping(&s.y_tilde, s.v).unwrap();
            assert_eq!(z, s.z.as_slice());
            assert_eq!(p.sensor().quantize(&s.y).unwrap(), s.y_index);
            assert_eq!(p.private().beta(p.private().quantize(&s.s).unwrap()).unwrap(), s.s_tilde.as_slice());
        }
    }
}

#[test]
fn single_noise_symbol_releases_measurements() {
    let p = pipeline(1.0, 1, 2);
    let res = p.receding_solve(&[DistortionBudget::Unbounded], &[1, 2, 3], None).unwrap();
    let traj = p.simulate(&res, 4, 3).unwrap();
    assert!(traj.steps.iter().all(|s| s.z == s.y_tilde && s.v == 0));
}

#[test]
fn vanishing_noise_follows_the_recursion() {
    let p = pipeline(1e-12, 2, 1);
    let res = p.receding_solve(&[DistortionBudget::Finite(0.0)], &[1, 2, 3, 4, 5, 6], None).unwrap();
    let traj = p.simulate(&res, 11, 6).unwrap();
    let sys = p.system();
    let mut x = sys.mu_x1().clone();
    for s in &traj.steps {
        for (a, b) in s.x.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-4);
        }
        x = sys.a() * &x + sys.b() * p.input().at(s.k);
    }
}

#[test]
fn cached_windows_equal_fresh_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cache = WindowCache::new(dir.path());
    let p = pipeline(1.0, 3, 2);
    let fresh = p.window(3, None).unwrap();
    let first = p.window(3, Some(&cache)).unwrap();
    let second = p.window(3, Some(&cache)).unwrap();
    assert!(!first.from_cache && second.from_cache);
    assert_eq!(fresh.cells, second.cells);
    assert_eq!(fresh.joint().probs(), second.joint().probs());

    let eps = [DistortionBudget::Unbounded, DistortionBudget::Finite(0.5)];
    let a = p.solve_window(&fresh, &eps).unwrap();
    let b = p.solve_window_cached(&second, &eps, Some(&cache)).unwrap();
    let c = p.solve_window_cached(&second, &eps, Some(&cache)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn finite_horizon_is_the_first_window() {
    let p = pipeline(1.0, 3, 2);
    let eps = DistortionBudget::Finite(0.7);
    let one = p.finite_horizon_solve(eps, None).unwrap();
    let rec = p.receding_solve(&[eps], &[1, 2], None).unwrap();
    assert_eq!(one, rec[0]);
    let zero = p.finite_horizon_solve(DistortionBudget::Finite(0.0), None).unwrap();
    assert_eq!(zero.q_star, Pmf::delta(9, 0).unwrap());
}

#[test]
fn results_respect_bounds_and_order() {
    let p = pipeline(1.0, 3, 2);
    let eps: Vec<DistortionBudget> = ["0.3", "1", "inf"].iter().map(|s| s.parse().unwrap()).collect();
    let res = p.receding_solve(&eps, &[1, 2, 3, 4], None).unwrap();
    for chunk in res.chunks(3) {
        for r in chunk {
            assert!(r.converged);
            assert!(r.objective <= r.baseline + 1e-9);
            assert!(r.distortion <= r.epsilon.value() + 1e-9);
            let first = first_stage_marginal(&r.q_star, 3);
            assert_eq!(first, r.first_stage);
        }
        assert!(chunk[0].objective >= chunk[1].objective - 2e-6);
        assert!(chunk[1].objective >= chunk[2].objective - 2e-6);
    }
}

#[test]
fn empirical_step_distortion_matches_prediction() {
    let p = pipeline(1.0, 3, 2);
    let res = p.receding_solve(&[DistortionBudget::Unbounded], &[1, 2, 3, 4, 5], None).unwrap();
    let mut gaps = Vec::new();
    let mut predicted = 0.0;
    for seed in 0..2000 {
        let traj = p.simulate(&res, seed, 5).unwrap();
        for (s, r) in traj.steps.iter().zip(&res) {
            gaps.push((s.z[0] - s.y_tilde[0]).powi(2));
            predicted += r.step_distortion;
        }
    }
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let predicted = predicted / n;
    assert!((mean - predicted).abs() < 5.0 * (var / n).sqrt(), "{mean} vs {predicted}");
}

#[test]
fn reactor_uniform_noise_value_is_consistent() {
    let p = Pipeline::new(
        privmap::reactor::system(),
        privmap::reactor::sensor_quantizer(),
        privmap::reactor::private_quantizer(),
        3,
        5,
        InputSignal::Reactor,
        IntegrationConfig::default(),
        SolverConfig::default(),
    )
    .unwrap();
    let w = p.window(1, None).unwrap();
    let q = Pmf::uniform(125).unwrap();
    let fast = mi_of_noise(&q, &w.cost).unwrap();
    let composed = mi_of_noise_composed(&q, &w.cost).unwrap();
    assert!((fast - composed).abs() < 1e-12);
    assert!(fast > 0.0 && fast < w.cost.baseline());
    assert!((w.cells.raw_sum() - 1.0).abs() < 1e-4);
}
