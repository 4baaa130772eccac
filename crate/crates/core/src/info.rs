//! Mutual information between the private and released sequences as a
//! function of the noise pmf, and the linear distortion functional.

use crate::error::{Error, Result};
use crate::pmf::{compose, CondPmf, Pmf, ShiftTable};
use crate::quantization::unstack_index;

const LOG_FLOOR: f64 = 1e-300;

/// Fixed data of the convex program for one window.
#[derive(Debug, Clone)]
pub struct CostData {
    p_s: Pmf,
    p_y_given_s: CondPmf,
    p_y: Pmf,
    levels: Vec<Vec<f64>>,
    shift: ShiftTable,
    d: Vec<f64>,
}

impl CostData {
    pub fn new(
        p_s: Pmf,
        p_y_given_s: CondPmf,
        levels: Vec<Vec<f64>>,
        n_v: usize,
        horizon: usize,
    ) -> Result<Self> {
        if p_s.len() != p_y_given_s.rows() {
            return Err(Error::dim("p_s", p_y_given_s.rows(), p_s.len()));
        }
        let n_y = levels.len();
        let shift = ShiftTable::new(n_y, n_v, horizon)?;
        if p_y_given_s.cols() != shift.y_size() {
            return Err(Error::dim("p_y_given_s columns", shift.y_size(), p_y_given_s.cols()));
        }
        for (s, &ps) in p_s.probs().iter().enumerate() {
            if ps > 0.0 && !p_y_given_s.is_supported(s) {
                return Err(Error::InvalidPmf(format!("row {s} has mass but no conditional")));
            }
        }
        let mut p_y = vec![0.0; shift.y_size()];
        for (s, &ps) in p_s.probs().iter().enumerate() {
            if ps > 0.0 {
                for (acc, &c) in p_y.iter_mut().zip(p_y_given_s.row(s)) {
                    *acc += ps * c;
                }
            }
        }
        let p_y = Pmf::new(p_y)?;
        let d = distortion_coefficients(&p_y, &levels, n_v, horizon)?;
        Ok(Self {
            p_s,
            p_y_given_s,
            p_y,
            levels,
            shift,
            d,
        })
    }

    pub fn p_s(&self) -> &Pmf {
        &self.p_s
    }
    pub fn p_y_given_s(&self) -> &CondPmf {
        &self.p_y_given_s
    }
    pub fn p_y(&self) -> &Pmf {
        &self.p_y
    }
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }
    pub fn shift(&self) -> &ShiftTable {
        &self.shift
    }
    /// Distortion coefficients; `E‖Z − Ỹ‖² = d · q`.
    pub fn d(&self) -> &[f64] {
        &self.d
    }
    pub fn n_v(&self) -> usize {
        self.shift.n_v()
    }
    pub fn horizon(&self) -> usize {
        self.shift.horizon()
    }
    /// Number of noise variables `N_V^K`.
    pub fn n_vars(&self) -> usize {
        self.shift.v_size()
    }

    /// `I[S̃; Ỹ]`, the leakage without any mapping.
    pub fn baseline(&self) -> f64 {
        mutual_information(&self.p_s, &self.p_y_given_s).unwrap_or(0.0)
    }

    /// Flat `p(z | s̃)` table (`n_s × N_Y^K`) for an arbitrary weight
    /// vector; linear in `q`.
    pub fn output_table(&self, q: &[f64]) -> Vec<f64> {
        let n_z = self.shift.y_size();
        let mut out = vec![0.0; self.p_s.len() * n_z];
        let active: Vec<(usize, f64)> = q
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(v, &w)| (v, w))
            .collect();
        for s in 0..self.p_s.len() {
            if self.p_s.probs()[s] == 0.0 {
                continue;
            }
            let row = &mut out[s * n_z..(s + 1) * n_z];
            for (y, &pys) in self.p_y_given_s.row(s).iter().enumerate() {
                if pys == 0.0 {
                    continue;
                }
                let zs = self.shift.row(y);
                for &(v, qv) in &active {
                    row[zs[v] as usize] += pys * qv;
                }
            }
        }
        out
    }

    pub(crate) fn mi_of_table(&self, table: &[f64]) -> f64 {
        mi_table(self.p_s.probs(), table, self.shift.y_size())
    }

    fn check_q(&self, q: &Pmf) -> Result<()> {
        if q.len() != self.n_vars() {
            return Err(Error::dim("q", self.n_vars(), q.len()));
        }
        Ok(())
    }
}

fn output_marginal(p_s: &[f64], table: &[f64], n_z: usize) -> Vec<f64> {
    let mut pz = vec![0.0; n_z];
    for (s, &ps) in p_s.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (acc, &c) in pz.iter_mut().zip(&table[s * n_z..(s + 1) * n_z]) {
            *acc += ps * c;
        }
    }
    pz
}

pub(crate) fn mi_table(p_s: &[f64], table: &[f64], n_z: usize) -> f64 {
    let pz = output_marginal(p_s, table, n_z);
    let mut total = 0.0;
    for (s, &ps) in p_s.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        let mut row_sum = 0.0;
        for (&c, &m) in table[s * n_z..(s + 1) * n_z].iter().zip(&pz) {
            if c > 0.0 {
                row_sum += c * (c / m).ln();
            }
        }
        total += ps * row_sum;
    }
    total.max(0.0)
}

/// `I[S̃; Z]` in nats for a joint given as `p(s̃)` and `p(z | s̃)`.
pub fn mutual_information(p_s: &Pmf, p_z_given_s: &CondPmf) -> Result<f64> {
    if p_s.len() != p_z_given_s.rows() {
        return Err(Error::dim("p_s", p_z_given_s.rows(), p_s.len()));
    }
    let mut masked = p_z_given_s.data().to_vec();
    let n_z = p_z_given_s.cols();
    let mut weights = p_s.probs().to_vec();
    for (s, w) in weights.iter_mut().enumerate() {
        if !p_z_given_s.is_supported(s) {
            *w = 0.0;
            masked[s * n_z..(s + 1) * n_z].fill(0.0);
        }
    }
    Ok(mi_table(&weights, &masked, n_z))
}

/// `I[S̃; Z]` with `Z` the output of the additive mapping driven by `q`.
pub fn mi_of_noise(q: &Pmf, data: &CostData) -> Result<f64> {
    data.check_q(q)?;
    Ok(data.mi_of_table(&data.output_table(q.probs())))
}

/// Same value as [`mi_of_noise`], assembled through explicit channel
/// composition. Slower; kept as a cross-check.
pub fn mi_of_noise_composed(q: &Pmf, data: &CostData) -> Result<f64> {
    data.check_q(q)?;
    let channel = crate::pmf::channel_from_noise(q, data.shift.n_y(), data.horizon())?;
    let p_z = compose(&data.p_y_given_s, &channel)?;
    mutual_information(&data.p_s, &p_z)
}

/// `∂I/∂q(v)`, evaluated from a precomputed output table.
pub(crate) fn gradient_from_table(data: &CostData, table: &[f64]) -> Vec<f64> {
    let n_z = data.shift.y_size();
    let p_s = data.p_s.probs();
    let pz = output_marginal(p_s, table, n_z);
    let log_pz: Vec<f64> = pz.iter().map(|&m| m.max(LOG_FLOOR).ln()).collect();
    let mut grad = vec![0.0; data.n_vars()];
    let mut ratio = vec![0.0; n_z];
    for (s, &ps) in p_s.iter().enumerate() {
        if ps == 0.0 {
            continue;
        }
        for (z, r) in ratio.iter_mut().enumerate() {
            *r = table[s * n_z + z].max(LOG_FLOOR).ln() - log_pz[z];
        }
        for (y, &pys) in data.p_y_given_s.row(s).iter().enumerate() {
            let w = ps * pys;
            if w == 0.0 {
                continue;
            }
            for (g, &z) in grad.iter_mut().zip(data.shift.row(y)) {
                *g += w * ratio[z as usize];
            }
        }
    }
    grad
}

/// Gradient of [`mi_of_noise`] with respect to `q`. Logs are floored at
/// `1e-300`, so values at boundary points are only indicative.
pub fn mi_gradient(q: &Pmf, data: &CostData) -> Result<Vec<f64>> {
    data.check_q(q)?;
    let table = data.output_table(q.probs());
    Ok(gradient_from_table(data, &table))
}

/// `d_v = Σ_ỹ p(ỹ) ‖z(ỹ, v) − ỹ‖²` over the stacked levels.
pub fn distortion_coefficients(
    p_y: &Pmf,
    levels: &[Vec<f64>],
    n_v: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let n_y = levels.len();
    let shift = ShiftTable::new(n_y, n_v, horizon)?;
    if p_y.len() != shift.y_size() {
        return Err(Error::dim("p_y", shift.y_size(), p_y.len()));
    }
    let stages = stage_cost_tables(p_y, levels, n_v, horizon)?;
    let v_bases = vec![n_v; horizon];
    let mut d = Vec::with_capacity(shift.v_size());
    for v in 0..shift.v_size() {
        let vt = unstack_index(v, &v_bases)?;
        d.push((0..horizon).map(|t| stages[t][vt[t]]).sum());
    }
    Ok(d)
}

/// Per-stage expected squared shift: entry `[t][w]` is
/// `E‖β((α(Ỹ_t) + w) mod N_Y) − Ỹ_t‖²` under the stage-`t` marginal.
pub fn stage_cost_tables(
    p_y: &Pmf,
    levels: &[Vec<f64>],
    n_v: usize,
    horizon: usize,
) -> Result<Vec<Vec<f64>>> {
    let n_y = levels.len();
    if n_y == 0 || n_v == 0 || n_v > n_y {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= N_V <= N_Y (N_V={n_v}, N_Y={n_y})"
        )));
    }
    let y_size = n_y.pow(horizon as u32);
    if p_y.len() != y_size {
        return Err(Error::dim("p_y", y_size, p_y.len()));
    }
    let mut marginals = vec![vec![0.0; n_y]; horizon];
    let y_bases = vec![n_y; horizon];
    for (y, &p) in p_y.probs().iter().enumerate() {
        let yt = unstack_index(y, &y_bases)?;
        for t in 0..horizon {
            marginals[t][yt[t]] += p;
        }
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    Ok(marginals
        .iter()
        .map(|m| {
            (0..n_v)
                .map(|w| {
                    (0..n_y)
                        .map(|i| m[i] * sq(&levels[(i + w) % n_y], &levels[i]))
                        .sum()
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmf::channel_from_noise;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rng: &mut impl Rng, n: usize) -> Pmf {
        Pmf::normalized((0..n).map(|_| rng.random::<f64>().powi(2) + 1e-4).collect()).unwrap()
    }

    fn random_cond(rng: &mut impl Rng, m: usize, n: usize) -> CondPmf {
        let mut data = Vec::new();
        for _ in 0..m {
            data.extend(random_pmf(rng, n).into_vec());
        }
        CondPmf::new(m, n, data, vec![true; m]).unwrap()
    }

    fn scalar_levels(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 * 0.7 + 1.0]).collect()
    }

    fn random_data(seed: u64, n_y: usize, n_s: usize, n_v: usize, k: usize) -> CostData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ny_k = n_y.pow(k as u32);
        let ns_k = n_s.pow(k as u32);
        CostData::new(
            random_pmf(&mut rng, ns_k),
            random_cond(&mut rng, ns_k, ny_k),
            scalar_levels(n_y),
            n_v,
            k,
        )
        .unwrap()
    }

    fn entropy(p: &[f64]) -> f64 {
        -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
    }

    #[test]
    fn independent_channel_has_zero_information() {
        let row = vec![0.1, 0.2, 0.3, 0.4];
        let ch = CondPmf::new(2, 4, [row.clone(), row].concat(), vec![true; 2]).unwrap();
        let mi = mutual_information(&Pmf::new(vec![0.3, 0.7]).unwrap(), &ch).unwrap();
        assert!(mi.abs() < 1e-15);
    }

    #[test]
    fn binary_identity_is_ln2() {
        let ch = CondPmf::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![true; 2]).unwrap();
        let mi = mutual_information(&Pmf::uniform(2).unwrap(), &ch).unwrap();
        assert!((mi - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_entropy_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let ps = random_pmf(&mut rng, 8);
            let ch = random_cond(&mut rng, 8, 16);
            let mut joint = Vec::new();
            let mut pz = vec![0.0; 16];
            for s in 0..8 {
                for z in 0..16 {
                    let p = ps.probs()[s] * ch.get(s, z);
                    joint.push(p);
                    pz[z] += p;
                }
            }
            let oracle = entropy(ps.probs()) + entropy(&pz) - entropy(&joint);
            let mi = mutual_information(&ps, &ch).unwrap();
            assert!((mi - oracle).abs() < 1e-12, "{mi} vs {oracle}");
        }
    }

    #[test]
    fn delta_noise_gives_baseline() {
        let data = random_data(1, 4, 2, 3, 2);
        let q = Pmf::delta(9, 0).unwrap();
        let mi = mi_of_noise(&q, &data).unwrap();
        assert!((mi - data.baseline()).abs() < 1e-14);
    }

    #[test]
    fn full_uniform_noise_gives_zero() {
        let data = random_data(2, 4, 2, 4, 2);
        let mi = mi_of_noise(&Pmf::uniform(16).unwrap(), &data).unwrap();
        assert!(mi.abs() < 1e-14);
    }

    #[test]
    fn fast_path_matches_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = random_data(3, 4, 2, 3, 3);
        for _ in 0..5 {
            let q = random_pmf(&mut rng, 27);
            let a = mi_of_noise(&q, &data).unwrap();
            let b = mi_of_noise_composed(&q, &data).unwrap();
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn output_table_matches_channel_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = random_data(4, 4, 2, 2, 2);
        let q = random_pmf(&mut rng, 4);
        let table = data.output_table(q.probs());
        let ch = channel_from_noise(&q, 4, 2).unwrap();
        let composed = compose(data.p_y_given_s(), &ch).unwrap();
        for (a, b) in table.iter().zip(composed.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn finite_difference_check(data: &CostData, q: &Pmf) -> f64 {
        let grad = mi_gradient(q, data).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        for v in 0..q.len() {
            let mut plus = q.probs().to_vec();
            let mut minus = q.probs().to_vec();
            plus[v] += h;
            minus[v] -= h;
            let fp = data.mi_of_table(&data.output_table(&plus));
            let fm = data.mi_of_table(&data.output_table(&minus));
            let fd = (fp - fm) / (2.0 * h);
            worst = worst.max((fd - grad[v]).abs() / scale.max(grad[v].abs()));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(5, 4, 2, 3, 2);
        for _ in 0..5 {
            let q = random_pmf(&mut rng, 9);
            let err = finite_difference_check(&data, &q);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    #[test]
    fn directional_derivative_matches_secant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_data(6, 4, 2, 3, 2);
        let q = random_pmf(&mut rng, 9);
        let grad = mi_gradient(&q, &data).unwrap();
        let (a, b) = (2, 7);
        let base = mi_of_noise(&q, &data).unwrap();
        let mut prev = f64::INFINITY;
        for t in [1e-3, 1e-4, 1e-5] {
            let mut moved = q.probs().to_vec();
            moved[a] += t;
            moved[b] -= t;
            let secant = (data.mi_of_table(&data.output_table(&moved)) - base) / t;
            let err = (secant - (grad[a] - grad[b])).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-4);
    }

    #[test]
    fn symmetric_instance_has_flat_gradient() {
        // uniform p(ỹ|s̃) makes every shift equivalent
        let ps = Pmf::new(vec![0.25, 0.75]).unwrap();
        let ch = CondPmf::new(2, 4, vec![0.25; 8], vec![true; 2]).unwrap();
        let data = CostData::new(ps, ch, scalar_levels(4), 3, 1).unwrap();
        let g = mi_gradient(&Pmf::new(vec![0.2, 0.5, 0.3]).unwrap(), &data).unwrap();
        assert!(g.iter().all(|x| (x - g[0]).abs() < 1e-15));
    }

    #[test]
    fn distortion_hand_example() {
        let levels = vec![vec![0.0], vec![1.0]];
        let d = distortion_coefficients(&Pmf::uniform(2).unwrap(), &levels, 2, 1).unwrap();
        assert_eq!(d, vec![0.0, 1.0]);
    }

    #[test]
    fn distortion_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let levels: Vec<Vec<f64>> = crate::reactor::SENSOR_LEVELS.iter().map(|&l| vec![l]).collect();
        let p_y = random_pmf(&mut rng, 512);
        let d = distortion_coefficients(&p_y, &levels, 5, 3).unwrap();
        assert_eq!(d.len(), 125);
        assert_eq!(d[0], 0.0);
        for v in [1usize, 7, 62, 124] {
            let vt = [v % 5, (v / 5) % 5, v / 25];
            let mut acc = 0.0;
            for y in 0..512 {
                let yt = [y % 8, (y / 8) % 8, y / 64];
                let mut sq = 0.0;
                for t in 0..3 {
                    sq += (levels[(yt[t] + vt[t]) % 8][0] - levels[yt[t]][0]).powi(2);
                }
                acc += p_y.probs()[y] * sq;
            }
            assert!((d[v] - acc).abs() < 1e-10, "v={v}");
        }
    }

    #[test]
    fn distortion_equals_expected_squared_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = random_data(7, 4, 2, 3, 2);
        let q = random_pmf(&mut rng, 9);
        let lin: f64 = data.d().iter().zip(q.probs()).map(|(d, q)| d * q).sum();
        let mut direct = 0.0;
        let lv = data.levels();
        for y in 0..16 {
            for v in 0..9 {
                let z = data.shift().shift(y, v);
                let gap = (lv[z % 4][0] - lv[y % 4][0]).powi(2) + (lv[z / 4][0] - lv[y / 4][0]).powi(2);
                direct += data.p_y().probs()[y] * q.probs()[v] * gap;
            }
        }
        assert!((lin - direct).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn bounded_convex_and_below_baseline(seed in any::<u64>(), lam in 0.0f64..1.0) {
            let data = random_data(seed, 4, 2, 3, 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let q1 = random_pmf(&mut rng, 9);
            let q2 = random_pmf(&mut rng, 9);
            let i1 = mi_of_noise(&q1, &data).unwrap();
            let i2 = mi_of_noise(&q2, &data).unwrap();
            let mid = Pmf::normalized(
                q1.probs().iter().zip(q2.probs()).map(|(a, b)| 0.5 * (a + b)).collect(),
            ).unwrap();
            let im = mi_of_noise(&mid, &data).unwrap();
            prop_assert!(im <= 0.5 * (i1 + i2) + 1e-10);
            let bound = data.p_s().entropy().min((16f64).ln());
            prop_assert!(i1 >= 0.0 && i1 <= bound + 1e-12);
            prop_assert!(i1 <= data.baseline() + 1e-12);

            let mix: Vec<f64> = q1.probs().iter().zip(q2.probs())
                .map(|(a, b)| lam * a + (1.0 - lam) * b).collect();
            let dot = |q: &[f64]| data.d().iter().zip(q).map(|(d, q)| d * q).sum::<f64>();
            let lhs = dot(&mix);
            let rhs = lam * dot(q1.probs()) + (1.0 - lam) * dot(q2.probs());
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
