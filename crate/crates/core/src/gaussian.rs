//! Label-efficient auditing of non-homogeneous linear classifiers when each
//! group is a Gaussian population.
//!
//! For `h(x) = sign(<a,x> + b)` and `x ~ N(0, I)`, the positive rate is
//! `Phi(b / |a|) = Phi(s r)` with `s = sign(b)` and
//! `r = sqrt(1 / sum_i m_i^-2)`, `m_i = -b / a_i` the axis crossings. The
//! estimator locates the crossings that are not too far out by bisection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::error::{AuditError, Result};

/// Largest `beta` used; bigger values are clamped with a warning.
pub const BETA_CAP: f64 = 1e12;
/// Diagonal jitter tried when a covariance is only semidefinite.
pub const CHOLESKY_JITTER: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> Result<f64> {
    if z.is_nan() {
        return Err(AuditError::InvalidInput("normal_cdf of NaN".into()));
    }
    Ok(phi(z))
}

fn phi(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Answers `h(x)` for points of `R^d`.
pub trait SignOracle {
    fn dim(&self) -> usize;
    fn query_point(&mut self, x: &[f64]) -> Result<Label>;
}

impl<O: SignOracle + ?Sized> SignOracle for &mut O {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn query_point(&mut self, x: &[f64]) -> Result<Label> {
        (**self).query_point(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn new(a: Vec<f64>, b: f64) -> Result<Self> {
        if a.is_empty() || a.iter().all(|&v| v == 0.0) || a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(AuditError::InvalidInput("linear model needs a finite nonzero weight vector".into()));
        }
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }

    pub fn predict(&self, x: &[f64]) -> Label {
        Label::of_value(self.score(x))
    }

    /// Axis crossing `-b / a_i`; infinite when `a_i = 0`.
    pub fn crossing(&self, i: usize) -> f64 {
        -self.b / self.a[i]
    }
}

impl SignOracle for LinearModel {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn query_point(&mut self, x: &[f64]) -> Result<Label> {
        if x.len() != self.a.len() {
            return Err(AuditError::InvalidInput(format!("point has dimension {}, model {}", x.len(), self.a.len())));
        }
        Ok(self.predict(x))
    }
}

/// Counts every query; nothing is cached.
pub struct CountingSignOracle<O> {
    inner: O,
    queries: usize,
}

impl<O: SignOracle> CountingSignOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, queries: 0 }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: SignOracle> SignOracle for CountingSignOracle<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn query_point(&mut self, x: &[f64]) -> Result<Label> {
        self.queries += 1;
        self.inner.query_point(x)
    }
}

/// `z -> oracle(mean + L z)`: one query to the inner oracle per query.
pub struct AffineOracle<O> {
    inner: O,
    mean: DVector<f64>,
    l: DMatrix<f64>,
}

impl<O: SignOracle> AffineOracle<O> {
    pub fn new(inner: O, mean: DVector<f64>, l: DMatrix<f64>) -> Self {
        Self { inner, mean, l }
    }
}

impl<O: SignOracle> SignOracle for AffineOracle<O> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn query_point(&mut self, z: &[f64]) -> Result<Label> {
        let x = &self.mean + &self.l * DVector::from_column_slice(z);
        self.inner.query_point(x.as_slice())
    }
}

fn axis_point(d: usize, i: usize, t: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[i] = t;
    x
}

/// Bisects `[-beta, beta]` along axis `coord` until the bracket is shorter
/// than `eps`; `label_neg` and `label_pos` are the known labels at the ends.
pub fn binary_search<O: SignOracle>(
    oracle: &mut O,
    coord: usize,
    beta: f64,
    eps: f64,
    label_neg: Label,
    label_pos: Label,
) -> Result<f64> {
    if label_neg == label_pos {
        return Err(AuditError::NoCrossing { coord });
    }
    let d = oracle.dim();
    let (mut l, mut u) = (-beta, beta);
    let mut m = 0.0;
    while u - l >= eps {
        m = 0.5 * (u + l);
        if oracle.query_point(&axis_point(d, coord, m))? == label_neg {
            l = m;
        } else {
            u = m;
        }
    }
    Ok(m)
}

/// `sqrt(1 / sum_i m_i^-2)`; zero as soon as some `|m_i| < 1e-12`.
pub fn inverse_root_sum(m: &[f64]) -> f64 {
    if m.iter().any(|v| v.abs() < 1e-12) {
        return 0.0;
    }
    (1.0 / m.iter().map(|v| v.powi(-2)).sum::<f64>()).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    EarlyReturn,
    Full,
}

/// Labels at `+radius e_coord` and `-radius e_coord` compared.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordinateTest {
    pub coord: usize,
    pub radius: f64,
    pub same_sign: bool,
}

#[derive(Clone, Debug)]
pub struct GammaEstimate {
    pub gamma_hat: f64,
    pub queries: usize,
    pub branch: Branch,
    pub sign: Label,
    /// Coordinates whose crossing was searched, with the estimates.
    pub m_hat: Vec<(usize, f64)>,
    pub tests: Vec<CoordinateTest>,
    pub alpha: f64,
    pub beta: f64,
}

pub fn alpha(d: usize, eps: f64) -> f64 {
    (2.0 * d as f64 * (1.0 / eps).ln()).sqrt()
}

pub fn beta(d: usize, eps: f64) -> f64 {
    let b = 2.0 * (d as f64).powf(2.5) * (1.0 / eps).ln().powf(0.75) * (1.0 / eps).sqrt();
    if b > BETA_CAP {
        log::warn!("beta = {b:e} exceeds {BETA_CAP:e}; clamping");
        BETA_CAP
    } else {
        b
    }
}

/// Estimates `Pr_{x ~ N(0, I)}(h(x) = +1)` to within `eps`.
pub fn estimate_positive<O: SignOracle>(oracle: O, eps: f64) -> Result<GammaEstimate> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(AuditError::InvalidInput(format!("eps must lie in (0, 1/2), got {eps}")));
    }
    let d = oracle.dim();
    if d == 0 {
        return Err(AuditError::InvalidInput("dimension must be positive".into()));
    }
    let mut oracle = CountingSignOracle::new(oracle);
    let (alpha, beta) = (alpha(d, eps), beta(d, eps));
    let sign = oracle.query_point(&vec![0.0; d])?;
    let mut tests = Vec::with_capacity(2 * d);
    let mut probe = |oracle: &mut CountingSignOracle<O>, coord: usize, radius: f64| -> Result<(Label, Label)> {
        let pos = oracle.query_point(&axis_point(d, coord, radius))?;
        let neg = oracle.query_point(&axis_point(d, coord, -radius))?;
        tests.push(CoordinateTest { coord, radius, same_sign: pos == neg });
        Ok((neg, pos))
    };
    let mut all_same = true;
    for i in 0..d {
        let (neg, pos) = probe(&mut oracle, i, alpha)?;
        all_same &= neg == pos;
    }
    if all_same {
        let gamma_hat = if sign.is_pos() { 1.0 } else { 0.0 };
        return Ok(GammaEstimate {
            gamma_hat,
            queries: oracle.queries(),
            branch: Branch::EarlyReturn,
            sign,
            m_hat: Vec::new(),
            tests,
            alpha,
            beta,
        });
    }
    let mut m_hat = Vec::new();
    for i in 0..d {
        let (neg, pos) = probe(&mut oracle, i, beta)?;
        if neg != pos {
            m_hat.push((i, binary_search(&mut oracle, i, beta, eps, neg, pos)?));
        }
    }
    let m: Vec<f64> = m_hat.iter().map(|&(_, v)| v).collect();
    let r_hat = inverse_root_sum(&m);
    let s = f64::from(sign.sign());
    Ok(GammaEstimate {
        gamma_hat: phi(s * r_hat),
        queries: oracle.queries(),
        branch: Branch::Full,
        sign,
        m_hat,
        tests,
        alpha,
        beta,
    })
}

/// Lower Cholesky factor; retries once with a tiny diagonal jitter so that
/// singular covariances are accepted.
pub fn cholesky(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !s.is_square() {
        return Err(AuditError::InvalidInput(format!("covariance is {}x{}", s.nrows(), s.ncols())));
    }
    let n = s.nrows();
    for i in 0..n {
        for j in 0..i {
            if (s[(i, j)] - s[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(AuditError::InvalidInput(format!("covariance not symmetric at ({i}, {j})")));
            }
        }
    }
    if let Some(c) = s.clone().cholesky() {
        return Ok(c.l());
    }
    let jittered = s + DMatrix::identity(n, n) * CHOLESKY_JITTER;
    jittered
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| AuditError::NotPsd(format!("factorization fails even with jitter {CHOLESKY_JITTER:e}")))
}

/// Two Gaussian groups: `x | group b ~ N(mean_b, cov_b)`.
#[derive(Clone, Debug)]
pub struct GaussianPopulations {
    pub means: [DVector<f64>; 2],
    pub covs: [DMatrix<f64>; 2],
    factors: [DMatrix<f64>; 2],
}

#[derive(Serialize, Deserialize)]
struct RawPopulations {
    m0: Vec<f64>,
    m1: Vec<f64>,
    s0: Vec<Vec<f64>>,
    s1: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], d: usize) -> Result<DMatrix<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(AuditError::InvalidInput(format!("covariance must be {d}x{d}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

impl GaussianPopulations {
    pub fn new(means: [DVector<f64>; 2], covs: [DMatrix<f64>; 2]) -> Result<Self> {
        let d = means[0].len();
        if d == 0 || means[1].len() != d || covs.iter().any(|c| c.nrows() != d || c.ncols() != d) {
            return Err(AuditError::InvalidInput("population dimensions disagree".into()));
        }
        let factors = [cholesky(&covs[0])?, cholesky(&covs[1])?];
        Ok(Self { means, covs, factors })
    }

    /// Both groups `N(0, I)` shifted to the given means.
    pub fn isotropic(m0: Vec<f64>, m1: Vec<f64>) -> Result<Self> {
        let d = m0.len();
        Self::new([DVector::from_vec(m0), DVector::from_vec(m1)], [DMatrix::identity(d, d), DMatrix::identity(d, d)])
    }

    /// JSON object with keys `m0`, `m1`, `s0`, `s1` (covariances as rows).
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawPopulations = serde_json::from_str(text)?;
        let d = raw.m0.len();
        Self::new(
            [DVector::from_vec(raw.m0), DVector::from_vec(raw.m1)],
            [matrix_from_rows(&raw.s0, d)?, matrix_from_rows(&raw.s1, d)?],
        )
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn factor(&self, group: usize) -> &DMatrix<f64> {
        &self.factors[group]
    }

    /// Exact difference of the model's positive rates between the groups.
    pub fn true_mu(&self, model: &LinearModel, orientation: Orientation) -> f64 {
        let g0 = analytic_gamma(model, &self.means[0], &self.factors[0]);
        let g1 = analytic_gamma(model, &self.means[1], &self.factors[1]);
        match orientation {
            Orientation::GroupOneMinusZero => g1 - g0,
            Orientation::GroupZeroMinusOne => g0 - g1,
        }
    }
}

/// `Phi((<a, mean> + b) / |L^T a|)`, the exact positive rate of the model
/// under `N(mean, L L^T)`; a step when the projected spread vanishes.
pub fn analytic_gamma(model: &LinearModel, mean: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let a = DVector::from_column_slice(&model.a);
    let center = a.dot(mean) + model.b;
    let spread = (l.transpose() * &a).norm();
    if spread == 0.0 {
        return if center >= 0.0 { 1.0 } else { 0.0 };
    }
    phi(center / spread)
}

/// `Phi(b / |a|)`, the positive rate under `N(0, I)`.
pub fn standard_gamma(model: &LinearModel) -> f64 {
    let d = model.dim();
    analytic_gamma(model, &DVector::zeros(d), &DMatrix::identity(d, d))
}

/// Model with `a ~ N(0, I)` and `b ~ N(0, 1)`.
pub fn random_model(d: usize, seed: u64) -> LinearModel {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: f64 = StandardNormal.sample(&mut rng);
        if let Ok(m) = LinearModel::new(a, b) {
            return m;
        }
    }
}

/// Which difference of group rates is reported.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Orientation {
    /// Group 1 minus group 0, matching the finite-class auditors.
    #[default]
    GroupOneMinusZero,
    GroupZeroMinusOne,
}

#[derive(Clone, Debug)]
pub struct GaussianAudit {
    pub estimate: f64,
    pub groups: [GammaEstimate; 2],
    pub queries: usize,
}

/// Estimates each group's positive rate at `eps / 2` through the affine
/// reparametrization and reports their difference.
pub fn gaussian_audit<O: SignOracle>(
    mut oracle: O,
    pops: &GaussianPopulations,
    eps: f64,
    orientation: Orientation,
) -> Result<GaussianAudit> {
    if oracle.dim() != pops.dim() {
        return Err(AuditError::InvalidInput(format!(
            "oracle dimension {} does not match populations {}",
            oracle.dim(),
            pops.dim()
        )));
    }
    let mut estimate_group = |b: usize| {
        let composed = AffineOracle::new(&mut oracle, pops.means[b].clone(), pops.factors[b].clone());
        estimate_positive(composed, eps / 2.0)
    };
    let g0 = estimate_group(0)?;
    let g1 = estimate_group(1)?;
    let estimate = match orientation {
        Orientation::GroupOneMinusZero => g1.gamma_hat - g0.gamma_hat,
        Orientation::GroupZeroMinusOne => g0.gamma_hat - g1.gamma_hat,
    };
    let queries = g0.queries + g1.queries;
    Ok(GaussianAudit { estimate, groups: [g0, g1], queries })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erf by its everywhere-convergent series
    /// `2/sqrt(pi) e^{-x^2} sum_n 2^n x^{2n+1} / (1*3*...*(2n+1))`.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 1.0;
            term *= 2.0 * x * x / (2.0 * n + 1.0);
            sum += term;
        }
        2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
    }

    fn phi_series(z: f64) -> f64 {
        0.5 * (1.0 + erf_series(z / std::f64::consts::SQRT_2))
    }

    #[test]
    fn cdf_matches_series() {
        assert_eq!(normal_cdf(0.0).unwrap(), 0.5);
        assert!((normal_cdf(1.0).unwrap() - 0.8413447461).abs() < 1e-10);
        for i in -60..=60 {
            let z = i as f64 / 10.0;
            assert!((phi(z) - phi_series(z)).abs() < 1e-10, "z = {z}");
        }
        assert!(normal_cdf(f64::NAN).is_err());
    }

    #[test]
    fn cholesky_small_cases() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((cholesky(&id).unwrap() - &id).amax() < 1e-15);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let l = cholesky(&d).unwrap();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15 && (l[(1, 1)] - 3.0).abs() < 1e-15);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = cholesky(&singular).unwrap();
        assert!((&l * l.transpose() - &singular).amax() < 1e-9);
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky(&indefinite), Err(AuditError::NotPsd(_))));
    }

    #[test]
    fn bisection_query_count_and_accuracy() {
        let mut o = CountingSignOracle::new(LinearModel::new(vec![1.0], -0.5).unwrap());
        let m = binary_search(&mut o, 0, 4.0, 1e-3, Label::Neg, Label::Pos).unwrap();
        assert!((0.499..=0.501).contains(&m));
        assert_eq!(o.queries(), 13);
        assert!(matches!(
            binary_search(&mut o, 0, 4.0, 1e-3, Label::Pos, Label::Pos),
            Err(AuditError::NoCrossing { coord: 0 })
        ));
    }

    #[test]
    fn bisection_near_the_edge() {
        let c = -4.0 + 5e-4;
        let mut o = LinearModel::new(vec![1.0], -c).unwrap();
        let m = binary_search(&mut o, 0, 4.0, 1e-3, Label::Neg, Label::Pos).unwrap();
        assert!((m - c).abs() <= 1e-3);
    }

    #[test]
    fn estimate_positive_cases() {
        let e = estimate_positive(LinearModel::new(vec![1.0], -1.0).unwrap(), 0.05).unwrap();
        assert!((e.gamma_hat - phi_series(-1.0)).abs() <= 0.05);
        assert_eq!(e.branch, Branch::Full);
        let low = estimate_positive(LinearModel::new(vec![1.0], -10.0).unwrap(), 0.1).unwrap();
        assert_eq!((low.gamma_hat, low.branch, low.queries), (0.0, Branch::EarlyReturn, 3));
        let high = estimate_positive(LinearModel::new(vec![1.0], 10.0).unwrap(), 0.1).unwrap();
        assert_eq!(high.gamma_hat, 1.0);
    }

    #[test]
    fn analytic_gamma_cases() {
        let m = LinearModel::new(vec![1.0, 0.0], 0.0).unwrap();
        let zero = DVector::zeros(2);
        let id = DMatrix::identity(2, 2);
        assert_eq!(analytic_gamma(&m, &zero, &id), 0.5);
        let m = LinearModel::new(vec![3.0, 4.0], -2.0).unwrap();
        assert!((analytic_gamma(&m, &zero, &id) - phi(-0.4)).abs() < 1e-15);
        assert_eq!(analytic_gamma(&m, &zero, &DMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn shifted_means_audit() {
        let pops = GaussianPopulations::isotropic(vec![0.0, 0.0], vec![1.5, 0.0]).unwrap();
        let model = LinearModel::new(vec![1.0, 0.5], -0.3).unwrap();
        let truth = analytic_gamma(&model, &pops.means[1], pops.factor(1))
            - analytic_gamma(&model, &pops.means[0], pops.factor(0));
        let r = gaussian_audit(model.clone(), &pops, 0.05, Orientation::default()).unwrap();
        assert!((r.estimate - truth).abs() <= 0.05);
        let flipped = gaussian_audit(model, &pops, 0.05, Orientation::GroupZeroMinusOne).unwrap();
        assert_eq!(flipped.estimate, -r.estimate);
    }
}
