//! Stochastic LTI model and its lifted (stacked) Gaussian description.
//!
//! The system is
//!
//! ```text
//! X(k+1) = A X(k) + B U(k) + M(k)
//! Y(k)   = C X(k) + W(k)
//! S(k)   = D X(k)
//! ```
//!
//! with `M ~ N(0, Σ_M)`, `W ~ N(0, Σ_W)` i.i.d. and `X(1) ~ N(μ_1, Σ_1)`.
//! Stacking `K` consecutive steps gives a joint Gaussian over
//! `(Y(k), …, Y(k+K-1), S(k), …, S(k+K-1))`, which is what gets integrated
//! over quantization cells downstream.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYSTEM_SYMMETRY_TOL: f64 = 1e-12;
const GAUSSIAN_SYMMETRY_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;
const PD_REL_TOL: f64 = 1e-10;

/// Linear time-invariant system with Gaussian disturbances.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    sigma_m: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
    mu_x1: DVector<f64>,
    sigma_x1: DMatrix<f64>,
}

/// JSON layout of a system: row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct SystemSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    pub sigma_M: Vec<Vec<f64>>,
    pub sigma_W: Vec<Vec<f64>>,
    pub mu_X1: Vec<f64>,
    pub sigma_X1: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows(field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::dim(field, format!("{ncols} columns in every row"), bad.len()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn check_shape(field: &'static str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::dim(
            field,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn check_covariance(field: &'static str, m: &DMatrix<f64>) -> Result<()> {
    let asym = relative_asymmetry(m);
    if asym > SYSTEM_SYMMETRY_TOL {
        return Err(Error::NotSymmetric {
            field,
            asymmetry: asym,
        });
    }
    let min_eig = min_eigenvalue(m);
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite {
            field,
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

/// Block-diagonal `I_k ⊗ m`.
pub(crate) fn kron_identity(k: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(k * r, k * c);
    for i in 0..k {
        out.view_mut((i * r, i * c), (r, c)).copy_from(m);
    }
    out
}

impl LtiSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        sigma_m: DMatrix<f64>,
        sigma_w: DMatrix<f64>,
        mu_x1: DVector<f64>,
        sigma_x1: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 {
            return Err(Error::dim("A", "at least 1x1", "0x0"));
        }
        check_shape("A", &a, nx, nx)?;
        if b.nrows() != nx {
            return Err(Error::dim("B", format!("{nx} rows"), b.nrows()));
        }
        if c.ncols() != nx || c.nrows() == 0 {
            return Err(Error::dim(
                "C",
                format!("n_y x {nx} with n_y >= 1"),
                format!("{}x{}", c.nrows(), c.ncols()),
            ));
        }
        if d.ncols() != nx || d.nrows() == 0 {
            return Err(Error::dim(
                "D",
                format!("n_s x {nx} with n_s >= 1"),
                format!("{}x{}", d.nrows(), d.ncols()),
            ));
        }
        let ny = c.nrows();
        check_shape("sigma_M", &sigma_m, nx, nx)?;
        check_shape("sigma_W", &sigma_w, ny, ny)?;
        check_shape("sigma_X1", &sigma_x1, nx, nx)?;
        if mu_x1.len() != nx {
            return Err(Error::dim("mu_X1", nx, mu_x1.len()));
        }
        let all = [&a, &b, &c, &d, &sigma_m, &sigma_w, &sigma_x1];
        if all.iter().any(|m| m.iter().any(|x| !x.is_finite()))
            || mu_x1.iter().any(|x| !x.is_finite())
        {
            return Err(Error::InvalidArgument(
                "system matrices must be finite".into(),
            ));
        }
        check_covariance("sigma_M", &sigma_m)?;
        check_covariance("sigma_W", &sigma_w)?;
        check_covariance("sigma_X1", &sigma_x1)?;

        let sv = d.clone().singular_values();
        let largest = sv.max();
        let rank = sv.iter().filter(|&&s| s > RANK_TOL * largest).count();
        if largest <= 0.0 || rank < d.nrows() {
            return Err(Error::RankDeficient {
                rank: if largest <= 0.0 { 0 } else { rank },
                rows: d.nrows(),
            });
        }

        Ok(Self {
            a,
            b,
            c,
            d,
            sigma_m,
            sigma_w,
            mu_x1,
            sigma_x1,
        })
    }

    pub fn from_spec(spec: &SystemSpec) -> Result<Self> {
        let b = matrix_from_rows("B", &spec.b)?;
        // An empty row list still has to report n_x rows.
        let b = if spec.b.is_empty() {
            DMatrix::zeros(spec.a.len(), 0)
        } else {
            b
        };
        Self::new(
            matrix_from_rows("A", &spec.a)?,
            b,
            matrix_from_rows("C", &spec.c)?,
            matrix_from_rows("D", &spec.d)?,
            matrix_from_rows("sigma_M", &spec.sigma_M)?,
            matrix_from_rows("sigma_W", &spec.sigma_W)?,
            DVector::from_vec(spec.mu_X1.clone()),
            matrix_from_rows("sigma_X1", &spec.sigma_X1)?,
        )
    }

    pub fn to_spec(&self) -> SystemSpec {
        SystemSpec {
            a: matrix_to_rows(&self.a),
            b: matrix_to_rows(&self.b),
            c: matrix_to_rows(&self.c),
            d: matrix_to_rows(&self.d),
            sigma_M: matrix_to_rows(&self.sigma_m),
            sigma_W: matrix_to_rows(&self.sigma_w),
            mu_X1: self.mu_x1.iter().copied().collect(),
            sigma_X1: matrix_to_rows(&self.sigma_x1),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Self::from_spec(&serde_json::from_str(s)?)
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }
    pub fn nu(&self) -> usize {
        self.b.ncols()
    }
    pub fn ny(&self) -> usize {
        self.c.nrows()
    }
    pub fn ns(&self) -> usize {
        self.d.nrows()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn sigma_m(&self) -> &DMatrix<f64> {
        &self.sigma_m
    }
    pub fn sigma_w(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }
    pub fn mu_x1(&self) -> &DVector<f64> {
        &self.mu_x1
    }
    pub fn sigma_x1(&self) -> &DMatrix<f64> {
        &self.sigma_x1
    }
}

/// Multivariate Gaussian with a (numerically) positive-semidefinite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        check_shape("cov", &cov, m, m)?;
        if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian parameters".into()));
        }
        let asym = relative_asymmetry(&cov);
        if asym > GAUSSIAN_SYMMETRY_TOL {
            return Err(Error::NotSymmetric {
                field: "cov",
                asymmetry: asym,
            });
        }
        if m > 0 {
            let min_eig = min_eigenvalue(&cov);
            if min_eig < -PD_REL_TOL * cov.trace().abs() {
                return Err(Error::NotPositiveDefinite {
                    field: "cov",
                    min_eigenvalue: min_eig,
                });
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal over the given coordinates, in the given order.
    pub fn marginal(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::OutOfRange {
                index: bad,
                size: self.dim(),
            });
        }
        let mean = DVector::from_fn(indices.len(), |i, _| self.mean[indices[i]]);
        let cov = DMatrix::from_fn(indices.len(), indices.len(), |i, j| {
            self.cov[(indices[i], indices[j])]
        });
        Ok(Self { mean, cov })
    }
}

/// Stacking matrices for a horizon of `K` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftMatrices {
    pub horizon: usize,
    /// `(K n_x) x n_x`, block `i` is `A^i`.
    pub f: DMatrix<f64>,
    /// `(K n_x) x ((K-1) n_x)`, block `(i, j)` is `A^(i-j-1)` below the diagonal.
    pub t: DMatrix<f64>,
    /// `T (I_{K-1} ⊗ B)`.
    pub l: DMatrix<f64>,
    /// `I_K ⊗ C`.
    pub c_tilde: DMatrix<f64>,
    /// `I_K ⊗ D`.
    pub d_tilde: DMatrix<f64>,
}

pub fn build_lift_matrices(sys: &LtiSystem, horizon: usize) -> Result<LiftMatrices> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon K must be >= 1".into()));
    }
    let nx = sys.nx();
    let mut powers = Vec::with_capacity(horizon);
    powers.push(DMatrix::<f64>::identity(nx, nx));
    for i in 1..horizon {
        let next = sys.a() * &powers[i - 1];
        powers.push(next);
    }

    let mut f = DMatrix::zeros(horizon * nx, nx);
    for (i, p) in powers.iter().enumerate() {
        f.view_mut((i * nx, 0), (nx, nx)).copy_from(p);
    }

    let mut t = DMatrix::zeros(horizon * nx, (horizon - 1) * nx);
    for i in 0..horizon {
        for j in 0..i {
            t.view_mut((i * nx, j * nx), (nx, nx))
                .copy_from(&powers[i - j - 1]);
        }
    }

    let l = &t * kron_identity(horizon - 1, sys.b());
    Ok(LiftMatrices {
        horizon,
        f,
        t,
        l,
        c_tilde: kron_identity(horizon, sys.c()),
        d_tilde: kron_identity(horizon, sys.d()),
    })
}

fn stacked_output_map(lift: &LiftMatrices) -> DMatrix<f64> {
    let (cy, cx) = lift.c_tilde.shape();
    let ds = lift.d_tilde.nrows();
    let mut g = DMatrix::zeros(cy + ds, cx);
    g.view_mut((0, 0), (cy, cx)).copy_from(&lift.c_tilde);
    g.view_mut((cy, 0), (ds, cx)).copy_from(&lift.d_tilde);
    g
}

fn lift_from_moments(
    sys: &LtiSystem,
    lift: &LiftMatrices,
    mu_x: &DVector<f64>,
    sigma_x: &DMatrix<f64>,
    stacked_inputs: &DVector<f64>,
) -> Result<GaussianDist> {
    let k = lift.horizon;
    let expected = (k - 1) * sys.nu();
    if stacked_inputs.len() != expected {
        return Err(Error::dim("U", expected, stacked_inputs.len()));
    }
    let g = stacked_output_map(lift);
    let mean = &g * (&lift.f * mu_x + &lift.l * stacked_inputs);

    let q = &lift.f * sigma_x * lift.f.transpose()
        + &lift.t * kron_identity(k - 1, sys.sigma_m()) * lift.t.transpose();
    let mut cov = &g * q * g.transpose();
    let ky = k * sys.ny();
    let noise = kron_identity(k, sys.sigma_w());
    let mut top_left = cov.view_mut((0, 0), (ky, ky));
    top_left += noise;
    symmetrize(&mut cov);

    let m = cov.nrows();
    let min_eig = min_eigenvalue(&cov);
    if !(min_eig > PD_REL_TOL * cov.trace() / m as f64) {
        return Err(Error::NotPositiveDefinite {
            field: "lifted covariance",
            min_eigenvalue: min_eig,
        });
    }
    Ok(GaussianDist { mean, cov })
}

/// Joint Gaussian of `(Y^K, S^K)` from the initial-state prior.
///
/// `stacked_inputs` is `(U(1), …, U(K-1))` flattened, length `(K-1) n_u`.
pub fn lifted_joint(
    sys: &LtiSystem,
    horizon: usize,
    stacked_inputs: &DVector<f64>,
) -> Result<GaussianDist> {
    let lift = build_lift_matrices(sys, horizon)?;
    lift_from_moments(sys, &lift, sys.mu_x1(), sys.sigma_x1(), stacked_inputs)
}

/// Trailing `K n_s` block of a lifted joint.
pub fn marginal_private(
    joint: &GaussianDist,
    horizon: usize,
    ny: usize,
    ns: usize,
) -> Result<GaussianDist> {
    let expected = horizon * (ny + ns);
    if joint.dim() != expected {
        return Err(Error::dim("joint", expected, joint.dim()));
    }
    let start = horizon * ny;
    let idx: Vec<usize> = (start..expected).collect();
    joint.marginal(&idx)
}

fn check_inputs(sys: &LtiSystem, inputs: &[DVector<f64>], needed: usize) -> Result<()> {
    if inputs.len() < needed {
        return Err(Error::dim(
            "U",
            format!("at least {needed} input vectors"),
            inputs.len(),
        ));
    }
    if let Some(u) = inputs[..needed].iter().find(|u| u.len() != sys.nu()) {
        return Err(Error::dim("U", sys.nu(), u.len()));
    }
    Ok(())
}

/// Mean and covariance of `X(k)`; `inputs[i]` is `U(i+1)`.
///
/// `U(k-1)` drives the step `k-1 -> k`, as in the state equation.
pub fn state_moments_recursion(
    sys: &LtiSystem,
    k: usize,
    inputs: &[DVector<f64>],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if k == 0 {
        return Err(Error::InvalidArgument("time index k must be >= 1".into()));
    }
    check_inputs(sys, inputs, k - 1)?;
    let mut mu = sys.mu_x1().clone();
    let mut sigma = sys.sigma_x1().clone();
    for u in &inputs[..k - 1] {
        mu = sys.a() * &mu + sys.b() * u;
        sigma = sys.a() * &sigma * sys.a().transpose() + sys.sigma_m();
        symmetrize(&mut sigma);
    }
    Ok((mu, sigma))
}

/// Joint Gaussian of `(Y(k..k+K-1), S(k..k+K-1))`.
///
/// `inputs[i]` is `U(i+1)`; at least `k + K - 2` entries are required.
pub fn lifted_joint_window(
    sys: &LtiSystem,
    k: usize,
    horizon: usize,
    inputs: &[DVector<f64>],
) -> Result<GaussianDist> {
    if k == 0 {
        return Err(Error::InvalidArgument("time index k must be >= 1".into()));
    }
    let lift = build_lift_matrices(sys, horizon)?;
    check_inputs(sys, inputs, k + horizon - 2)?;
    let (mu, sigma) = state_moments_recursion(sys, k, inputs)?;
    let stacked = stack_inputs(&inputs[k - 1..k + horizon - 2], sys.nu());
    lift_from_moments(sys, &lift, &mu, &sigma, &stacked)
}

pub fn stack_inputs(inputs: &[DVector<f64>], nu: usize) -> DVector<f64> {
    DVector::from_iterator(inputs.len() * nu, inputs.iter().flat_map(|u| u.iter().copied()))
}
