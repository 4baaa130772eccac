use nalgebra::{DMatrix, DVector};
use privmap::lti::{lifted_joint, lifted_joint_window, stack_inputs};
use privmap::LtiSystem;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn scalar(a: f64, b: f64, c: f64, d: f64, sm: f64, sw: f64, mu: f64, sx: f64) -> LtiSystem {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    LtiSystem::new(m(a), m(b), m(c), m(d), m(sm), m(sw), DVector::from_element(1, mu), m(sx)).unwrap()
}

#[test]
fn lifted_moments_match_simulation() {
    let sys = scalar(0.7, 0.5, 1.3, 0.8, 0.2, 0.3, 1.0, 0.5);
    let u = 2.0;
    let g = lifted_joint(&sys, 2, &DVector::from_element(1, u)).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 400_000;
    let std = |v: f64| Normal::new(0.0, v.sqrt()).unwrap();
    let (nx1, nm, nw) = (std(0.5), std(0.2), std(0.3));
    let mut sum = [0.0f64; 4];
    let mut outer = [[0.0f64; 4]; 4];
    for _ in 0..n {
        let x1 = 1.0 + nx1.sample(&mut rng);
        let x2 = 0.7 * x1 + 0.5 * u + nm.sample(&mut rng);
        let v = [
            1.3 * x1 + nw.sample(&mut rng),
            1.3 * x2 + nw.sample(&mut rng),
            0.8 * x1,
            0.8 * x2,
        ];
        for i in 0..4 {
            sum[i] += v[i];
            for j in 0..4 {
                outer[i][j] += v[i] * v[j];
            }
        }
    }
    let nf = n as f64;
    for i in 0..4 {
        let mean = sum[i] / nf;
        let se = (g.cov()[(i, i)] / nf).sqrt();
        assert!((mean - g.mean()[i]).abs() < 5.0 * se, "mean {i}");
        for j in 0..4 {
            let cov = outer[i][j] / nf - mean * sum[j] / nf;
            let scale = (g.cov()[(i, i)] * g.cov()[(j, j)]).sqrt();
            assert!((cov - g.cov()[(i, j)]).abs() < 0.02 * scale, "cov {i},{j}: {cov}");
        }
    }
}

#[test]
fn window_matches_shifted_prior() {
    // Starting the origin lift from the moments of X(3) equals window k=3.
    let sys = scalar(0.9, 1.0, 1.0, 1.0, 0.3, 0.1, 0.5, 2.0);
    let inputs: Vec<DVector<f64>> = (1..=6).map(|k| DVector::from_element(1, k as f64)).collect();
    let win = lifted_joint_window(&sys, 3, 3, &inputs).unwrap();
    let (mu, sigma) = privmap::lti::state_moments_recursion(&sys, 3, &inputs).unwrap();
    let shifted = LtiSystem::new(
        sys.a().clone(),
        sys.b().clone(),
        sys.c().clone(),
        sys.d().clone(),
        sys.sigma_m().clone(),
        sys.sigma_w().clone(),
        mu,
        sigma,
    )
    .unwrap();
    let direct = lifted_joint(&shifted, 3, &stack_inputs(&inputs[2..4], 1)).unwrap();
    assert!((win.mean() - direct.mean()).amax() < 1e-12);
    assert!((win.cov() - direct.cov()).amax() < 1e-12);
}
