//! Dense pmfs and row-stochastic conditionals over flat product alphabets.

use crate::error::{Error, Result};
use crate::quantization::unstack_index;

const SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    probs: Vec<f64>,
}

impl Pmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidPmf(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidPmf(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Rescales nonnegative weights to sum to one.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidPmf("weights must be nonnegative with positive sum".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn delta(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(Error::OutOfRange { index: at, size: n });
        }
        let mut probs = vec![0.0; n];
        probs[at] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPmf("empty alphabet".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    #[cfg(test)]
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| p * p.ln())
            .sum::<f64>()
    }

    pub fn total_variation(&self, other: &Pmf) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim("pmf", self.len(), other.len()));
        }
        Ok(0.5
            * self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

/// `M x N` conditional pmf; row `i` is the distribution given symbol `i`.
/// Rows whose conditioning symbol has zero mass are masked out and all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CondPmf {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    supported: Vec<bool>,
}

impl CondPmf {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, supported: Vec<bool>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("data", rows * cols, data.len()));
        }
        if supported.len() != rows {
            return Err(Error::dim("supported", rows, supported.len()));
        }
        if data.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidPmf("negative or non-finite transition probability".into()));
        }
        for (i, &s) in supported.iter().enumerate() {
            let row = &data[i * cols..(i + 1) * cols];
            let sum: f64 = row.iter().sum();
            if s && (sum - 1.0).abs() > SUM_TOL {
                return Err(Error::InvalidPmf(format!("row {i} sums to {sum}")));
            }
            if !s && sum != 0.0 {
                return Err(Error::InvalidPmf(format!("unsupported row {i} is not zero")));
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            supported,
        })
    }

    pub(crate) fn from_parts_unchecked(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        supported: Vec<bool>,
    ) -> Self {
        Self {
            rows,
            cols,
            data,
            supported,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn is_supported(&self, i: usize) -> bool {
        self.supported[i]
    }

    pub fn supported(&self) -> &[bool] {
        &self.supported
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Splits a joint over `𝒴^K × 𝒮^K` (the `𝒴` block varying fastest) into
/// `p(s̃)` and `p(ỹ | s̃)`.
pub fn factorize(joint: &Pmf, n_y: usize, n_s: usize) -> Result<(Pmf, CondPmf)> {
    if joint.len() != n_y * n_s {
        return Err(Error::dim("joint", n_y * n_s, joint.len()));
    }
    let p = joint.probs();
    let p_s: Vec<f64> = (0..n_s).map(|s| p[s * n_y..(s + 1) * n_y].iter().sum()).collect();
    let mut data = vec![0.0; n_s * n_y];
    let mut supported = vec![false; n_s];
    for s in 0..n_s {
        if p_s[s] > 0.0 {
            supported[s] = true;
            for y in 0..n_y {
                data[s * n_y + y] = p[s * n_y + y] / p_s[s];
            }
        }
    }
    Ok((
        Pmf::new(p_s)?,
        CondPmf::from_parts_unchecked(n_s, n_y, data, supported),
    ))
}

/// Stagewise modular shift `z = (ỹ + v) mod N_Y` on flat indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftTable {
    n_y: usize,
    n_v: usize,
    horizon: usize,
    y_size: usize,
    v_size: usize,
    table: Vec<u32>,
}

impl ShiftTable {
    pub fn new(n_y: usize, n_v: usize, horizon: usize) -> Result<Self> {
        if n_v == 0 || n_v > n_y || horizon == 0 {
            return Err(Error::InvalidArgument(format!(
                "need 1 <= N_V <= N_Y and K >= 1 (N_V={n_v}, N_Y={n_y}, K={horizon})"
            )));
        }
        let y_size = n_y.pow(horizon as u32);
        let v_size = n_v.pow(horizon as u32);
        let y_bases = vec![n_y; horizon];
        let v_bases = vec![n_v; horizon];
        let mut table = Vec::with_capacity(y_size * v_size);
        for y in 0..y_size {
            let yt = unstack_index(y, &y_bases)?;
            for v in 0..v_size {
                let vt = unstack_index(v, &v_bases)?;
                let mut z = 0usize;
                let mut stride = 1usize;
                for t in 0..horizon {
                    z += ((yt[t] + vt[t]) % n_y) * stride;
                    stride *= n_y;
                }
                table.push(z as u32);
            }
        }
        Ok(Self {
            n_y,
            n_v,
            horizon,
            y_size,
            v_size,
            table,
        })
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }
    pub fn n_v(&self) -> usize {
        self.n_v
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    /// `N_Y^K`.
    pub fn y_size(&self) -> usize {
        self.y_size
    }
    /// `N_V^K`.
    pub fn v_size(&self) -> usize {
        self.v_size
    }

    #[inline]
    pub fn shift(&self, y: usize, v: usize) -> usize {
        self.table[y * self.v_size + v] as usize
    }

    #[inline]
    pub(crate) fn row(&self, y: usize) -> &[u32] {
        &self.table[y * self.v_size..(y + 1) * self.v_size]
    }
}

/// `p(z^K | ỹ^K) = q((ᾱ(z) - ᾱ(ỹ)) mod N_Y)`, zero when the difference
/// leaves `𝒱^K`.
pub fn channel_from_noise(q: &Pmf, n_y: usize, horizon: usize) -> Result<CondPmf> {
    let n_v = stage_size(q.len(), horizon)?;
    let table = ShiftTable::new(n_y, n_v, horizon)?;
    let n = table.y_size();
    let mut data = vec![0.0; n * n];
    for y in 0..n {
        for (v, &qv) in q.probs().iter().enumerate() {
            data[y * n + table.shift(y, v)] = qv;
        }
    }
    Ok(CondPmf::from_parts_unchecked(n, n, data, vec![true; n]))
}

/// Recovers `N_V` from `N_V^K`.
pub(crate) fn stage_size(total: usize, horizon: usize) -> Result<usize> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon K must be >= 1".into()));
    }
    let guess = (total as f64).powf(1.0 / horizon as f64).round() as usize;
    for cand in guess.saturating_sub(1)..=guess + 1 {
        if cand > 0 && cand.checked_pow(horizon as u32) == Some(total) {
            return Ok(cand);
        }
    }
    Err(Error::InvalidArgument(format!(
        "alphabet size {total} is not a {horizon}-th power"
    )))
}

/// Chains `p(ỹ | s̃)` with `p(z | ỹ)`.
pub fn compose(inner: &CondPmf, outer: &CondPmf) -> Result<CondPmf> {
    if inner.cols() != outer.rows() {
        return Err(Error::dim("outer", inner.cols(), outer.rows()));
    }
    let (m, n, p) = (inner.rows(), inner.cols(), outer.cols());
    let mut data = vec![0.0; m * p];
    for s in 0..m {
        if !inner.is_supported(s) {
            continue;
        }
        let out = &mut data[s * p..(s + 1) * p];
        for y in 0..n {
            let a = inner.get(s, y);
            if a == 0.0 {
                continue;
            }
            if !outer.is_supported(y) {
                return Err(Error::InvalidArgument(format!(
                    "row {y} of the outer channel is unsupported but reachable"
                )));
            }
            for (o, &b) in out.iter_mut().zip(outer.row(y)) {
                *o += a * b;
            }
        }
    }
    Ok(CondPmf::from_parts_unchecked(m, p, data, inner.supported.clone()))
}

/// `p(z) = Σ_s p(s) p(z | s)`.
pub fn marginal_z(p_s: &Pmf, p_z_given_s: &CondPmf) -> Result<Pmf> {
    if p_s.len() != p_z_given_s.rows() {
        return Err(Error::dim("p_s", p_z_given_s.rows(), p_s.len()));
    }
    let mut out = vec![0.0; p_z_given_s.cols()];
    for (s, &ps) in p_s.probs().iter().enumerate() {
        if ps == 0.0 || !p_z_given_s.is_supported(s) {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(p_z_given_s.row(s)) {
            *o += ps * c;
        }
    }
    Pmf::new(out)
}

/// Joint `p(s̃, z)` laid out like the input joint (`z` fastest).
pub fn joint_from_conditional(p_s: &Pmf, p_z_given_s: &CondPmf) -> Result<Pmf> {
    if p_s.len() != p_z_given_s.rows() {
        return Err(Error::dim("p_s", p_z_given_s.rows(), p_s.len()));
    }
    let n = p_z_given_s.cols();
    let mut out = vec![0.0; p_s.len() * n];
    for (s, &ps) in p_s.probs().iter().enumerate() {
        if !p_z_given_s.is_supported(s) {
            continue;
        }
        for (z, &c) in p_z_given_s.row(s).iter().enumerate() {
            out[s * n + z] = ps * c;
        }
    }
    Pmf::new(out)
}

/// Iterative proportional fitting: rescales `pmf` (a joint over the
/// mixed-radix digits `bases`, first digit fastest) until each digit's
/// marginal equals `targets[digit]`. Zero cells stay zero.
pub fn calibrate_margins(pmf: &Pmf, bases: &[usize], targets: &[Vec<f64>]) -> Result<Pmf> {
    let total: usize = bases.iter().product();
    if pmf.len() != total {
        return Err(Error::dim("pmf", total, pmf.len()));
    }
    if targets.len() != bases.len() {
        return Err(Error::dim("targets", bases.len(), targets.len()));
    }
    for (t, &b) in targets.iter().zip(bases) {
        if t.len() != b {
            return Err(Error::dim("target marginal", b, t.len()));
        }
        Pmf::new(t.clone())?;
    }
    let mut strides = Vec::with_capacity(bases.len());
    let mut stride = 1;
    for &b in bases {
        strides.push(stride);
        stride *= b;
    }
    let digit = |i: usize, d: usize| (i / strides[d]) % bases[d];
    let mut p = pmf.probs().to_vec();
    for _ in 0..1000 {
        let mut worst: f64 = 0.0;
        for d in 0..bases.len() {
            let mut margin = vec![0.0; bases[d]];
            for (i, &x) in p.iter().enumerate() {
                margin[digit(i, d)] += x;
            }
            let scale: Vec<f64> = margin
                .iter()
                .zip(&targets[d])
                .map(|(&m, &t)| {
                    worst = worst.max((m - t).abs());
                    if m > 0.0 { t / m } else { 0.0 }
                })
                .collect();
            for (i, x) in p.iter_mut().enumerate() {
                *x *= scale[digit(i, d)];
            }
        }
        if worst < 1e-15 {
            break;
        }
    }
    Pmf::normalized(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(rng: &mut impl Rng, n: usize) -> Pmf {
        Pmf::normalized((0..n).map(|_| rng.random::<f64>() + 1e-3).collect()).unwrap()
    }

    fn random_cond(rng: &mut impl Rng, m: usize, n: usize) -> CondPmf {
        let mut data = Vec::new();
        for _ in 0..m {
            data.extend(random_pmf(rng, n).into_vec());
        }
        CondPmf::new(m, n, data, vec![true; m]).unwrap()
    }

    #[test]
    fn factorize_independent_uniform() {
        let joint = Pmf::uniform(16).unwrap();
        let (ps, py) = factorize(&joint, 8, 2).unwrap();
        assert_eq!(ps.probs(), &[0.5, 0.5]);
        for s in 0..2 {
            assert!(py.row(s).iter().all(|&p| (p - 0.125).abs() < 1e-15));
        }
    }

    #[test]
    fn factorize_zero_slice() {
        let mut p = vec![0.0; 16];
        for y in 0..8 {
            p[y] = 0.125;
        }
        let (ps, py) = factorize(&Pmf::new(p).unwrap(), 8, 2).unwrap();
        assert_eq!(ps.probs(), &[1.0, 0.0]);
        assert!(!py.is_supported(1));
        assert!(py.row(1).iter().all(|&x| x == 0.0));
        assert!(py.data().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn channel_delta_is_identity() {
        let q = Pmf::delta(125, 0).unwrap();
        let ch = channel_from_noise(&q, 8, 3).unwrap();
        for y in 0..512 {
            for z in 0..512 {
                assert_eq!(ch.get(y, z), if y == z { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn channel_full_uniform_rows() {
        let q = Pmf::uniform(16).unwrap();
        let ch = channel_from_noise(&q, 4, 2).unwrap();
        assert!(ch.data().iter().all(|&p| p == 1.0 / 16.0));
    }

    #[test]
    fn channel_hand_example() {
        let q = Pmf::new(vec![0.7, 0.3]).unwrap();
        let ch = channel_from_noise(&q, 4, 1).unwrap();
        assert_eq!(ch.row(3), &[0.3, 0.0, 0.0, 0.7]);
        assert_eq!(ch.row(0), &[0.7, 0.3, 0.0, 0.0]);
    }

    #[test]
    fn channel_rows_are_shifted_placements() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_pmf(&mut rng, 27);
        let ch = channel_from_noise(&q, 5, 3).unwrap();
        let mut expected: Vec<f64> = q.probs().to_vec();
        expected.extend(std::iter::repeat_n(0.0, 125 - 27));
        expected.sort_by(f64::total_cmp);
        let table = ShiftTable::new(5, 3, 3).unwrap();
        for y in 0..125 {
            let mut row = ch.row(y).to_vec();
            row.sort_by(f64::total_cmp);
            assert_eq!(row, expected);
            for v in 0..27 {
                assert_eq!(ch.get(y, table.shift(y, v)), q.probs()[v]);
            }
        }
    }

    #[test]
    fn channel_is_linear_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q1 = random_pmf(&mut rng, 9);
        let q2 = random_pmf(&mut rng, 9);
        let lam = 0.25;
        let mix = Pmf::from_vec_unchecked(
            q1.probs().iter().zip(q2.probs()).map(|(a, b)| lam * a + (1.0 - lam) * b).collect(),
        );
        let c1 = channel_from_noise(&q1, 4, 2).unwrap();
        let c2 = channel_from_noise(&q2, 4, 2).unwrap();
        let cm = channel_from_noise(&mix, 4, 2).unwrap();
        for i in 0..cm.data().len() {
            let lin = lam * c1.data()[i] + (1.0 - lam) * c2.data()[i];
            assert_eq!(cm.data()[i], lin);
        }
    }

    #[test]
    fn compose_with_identity_channel_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let py = random_cond(&mut rng, 8, 64);
        let id = channel_from_noise(&Pmf::delta(4, 0).unwrap(), 8, 2).unwrap();
        let out = compose(&py, &id).unwrap();
        assert_eq!(out, py);
    }

    #[test]
    fn compose_uniform_inner_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let py = random_cond(&mut rng, 4, 16);
        let uni = channel_from_noise(&Pmf::uniform(16).unwrap(), 4, 2).unwrap();
        let out = compose(&py, &uni).unwrap();
        for s in 0..4 {
            assert!(out.row(s).iter().all(|&p| (p - 1.0 / 16.0).abs() < 1e-15));
        }
    }

    #[test]
    fn compose_and_marginal_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_cond(&mut rng, 8, 4);
        let b = random_cond(&mut rng, 4, 4);
        let c = compose(&a, &b).unwrap();
        for s in 0..8 {
            for z in 0..4 {
                let mut acc = 0.0;
                for y in 0..4 {
                    acc += a.get(s, y) * b.get(y, z);
                }
                assert!((c.get(s, z) - acc).abs() < 1e-15);
            }
        }
        let ps = random_pmf(&mut rng, 8);
        let pz = marginal_z(&ps, &c).unwrap();
        for z in 0..4 {
            let mut acc = 0.0;
            for s in 0..8 {
                for y in 0..4 {
                    acc += ps.probs()[s] * a.get(s, y) * b.get(y, z);
                }
            }
            assert!((pz.probs()[z] - acc).abs() < 1e-15);
        }
        let det = marginal_z(&Pmf::delta(8, 3).unwrap(), &c).unwrap();
        assert_eq!(det.probs(), c.row(3));
    }

    #[test]
    fn calibration_matches_targets_and_keeps_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut p = random_pmf(&mut rng, 24).into_vec();
        p[5] = 0.0;
        let p = Pmf::normalized(p).unwrap();
        let targets = vec![vec![0.5, 0.5], vec![0.2, 0.3, 0.5], vec![0.1, 0.2, 0.3, 0.4]];
        let out = calibrate_margins(&p, &[2, 3, 4], &targets).unwrap();
        assert_eq!(out.probs()[5], 0.0);
        for (d, (stride, base)) in [(1usize, 2usize), (2, 3), (6, 4)].into_iter().enumerate() {
            let mut m = vec![0.0; base];
            for (i, &x) in out.probs().iter().enumerate() {
                m[(i / stride) % base] += x;
            }
            for (a, b) in m.iter().zip(&targets[d]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn calibration_fixes_consistent_pmfs() {
        let p = Pmf::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = calibrate_margins(&p, &[2, 2], &[vec![0.4, 0.6], vec![0.3, 0.7]]).unwrap();
        for (a, b) in out.probs().iter().zip(p.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_pmfs() {
        assert!(Pmf::new(vec![0.5, 0.6]).is_err());
        assert!(Pmf::new(vec![1.5, -0.5]).is_err());
        assert!(Pmf::new(vec![]).is_err());
        assert!(CondPmf::new(1, 2, vec![0.5, 0.4], vec![true]).is_err());
    }
}
