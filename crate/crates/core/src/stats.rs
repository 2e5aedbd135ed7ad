//! Engagement statistics: risk ratios, signed-rank and rank-correlation
//! tests, a random-intercept logistic model fitted by Laplace approximation,
//! and variance inflation factors.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::cohort::MatchedPairs;
use crate::corpus::{CommunityType, FirstPostEvent, PostKind};
use crate::scoring::logistic;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("an arm is empty ({n_treated} treated, {n_control} control)")]
    EmptyArm { n_treated: usize, n_control: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("input is constant; rank correlation is undefined")]
    Constant,
    #[error("column `{0}` is identically zero; its coefficient is not identifiable")]
    Identifiability(String),
    #[error("coefficient for `{column}` diverged ({value:.3}); the outcome is separated")]
    Separation { column: String, value: f64 },
    #[error("{0} group(s): a random intercept needs at least 2")]
    TooFewGroups(usize),
    #[error("information matrix is singular")]
    Singular,
    #[error("non-finite value during fit: {0}")]
    NonFinite(&'static str),
}

/// Engagement risk ratio of one community pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrResult {
    pub community: String,
    pub kind: PostKind,
    pub p_treated: f64,
    pub p_control: f64,
    /// `None` when no control engaged.
    pub err: Option<f64>,
    pub n_treated: usize,
    pub n_control: usize,
    pub engaged_treated: usize,
    pub engaged_control: usize,
}

impl ErrResult {
    pub fn is_defined(&self) -> bool {
        self.err.is_some()
    }
}

/// `(engaged_treated / n_treated) / (engaged_control / n_control)`.
pub fn err_from_counts(
    community: &str,
    kind: PostKind,
    engaged_treated: usize,
    n_treated: usize,
    engaged_control: usize,
    n_control: usize,
) -> Result<ErrResult, StatsError> {
    if n_treated == 0 || n_control == 0 {
        return Err(StatsError::EmptyArm { n_treated, n_control });
    }
    let p_treated = engaged_treated as f64 / n_treated as f64;
    let p_control = engaged_control as f64 / n_control as f64;
    Ok(ErrResult {
        community: community.to_string(),
        kind,
        p_treated,
        p_control,
        err: (p_control > 0.0).then(|| p_treated / p_control),
        n_treated,
        n_control,
        engaged_treated,
        engaged_control,
    })
}

/// ERR over an event pool, splitting on the treatment flag.
pub fn err(community: &str, kind: PostKind, events: &[FirstPostEvent]) -> Result<ErrResult, StatsError> {
    let (t, c): (Vec<&FirstPostEvent>, Vec<&FirstPostEvent>) = events.iter().partition(|e| e.treated);
    err_from_counts(
        community,
        kind,
        t.iter().filter(|e| e.engaged).count(),
        t.len(),
        c.iter().filter(|e| e.engaged).count(),
        c.len(),
    )
}

/// ERR over matched pairs.
pub fn err_matched(community: &str, kind: PostKind, pairs: &MatchedPairs) -> Result<ErrResult, StatsError> {
    let n = pairs.pairs.len();
    err_from_counts(
        community,
        kind,
        pairs.pairs.iter().filter(|p| p.treated.engaged).count(),
        n,
        pairs.pairs.iter().filter(|p| p.control.engaged).count(),
        n,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: String,
}

/// Midranks (1-based) of `values`; ties share the mean of their ranks.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Largest sample size for which the exact null distribution is computed.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences.
    pub n: usize,
    pub zeros_dropped: usize,
    /// Two-sided exact p-value; present for `n <= 25`.
    pub p_exact: Option<f64>,
    /// Two-sided normal approximation with continuity and tie correction.
    pub p_normal: f64,
    pub degenerate: bool,
}

impl WilcoxonResult {
    /// The exact p-value when available, otherwise the approximation.
    pub fn p_value(&self) -> f64 {
        self.p_exact.unwrap_or(self.p_normal)
    }

    pub fn to_test_result(&self) -> TestResult {
        let method = if self.degenerate {
            "wilcoxon signed-rank (degenerate: all differences zero)"
        } else if self.p_exact.is_some() {
            "wilcoxon signed-rank, exact"
        } else {
            "wilcoxon signed-rank, normal approximation"
        };
        TestResult { statistic: self.statistic, p_value: self.p_value(), n: self.n, method: method.into() }
    }
}

/// Exact two-sided p-value `min(1, 2·P(W+ <= t))` under the sign-flip null.
/// Ranks must be multiples of one half.
pub fn wilcoxon_exact_p(ranks: &[f64], t: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * t).round() as usize;
    let below: f64 = counts[..=limit.min(total)].iter().sum();
    (2.0 * below / 2f64.powi(ranks.len() as i32)).min(1.0)
}

pub fn wilcoxon_signed_rank(diffs: &[f64]) -> WilcoxonResult {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let zeros_dropped = diffs.len() - nonzero.len();
    let n = nonzero.len();
    if n == 0 {
        return WilcoxonResult {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            zeros_dropped,
            p_exact: Some(1.0),
            p_normal: 1.0,
            degenerate: true,
        };
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    // Folding from +0 keeps an empty side at +0 rather than `sum()`'s -0.
    let side = |positive: bool| {
        nonzero.iter().zip(&ranks).filter(|(d, _)| (**d > 0.0) == positive).fold(0.0, |acc, (_, r)| acc + r)
    };
    let (w_plus, w_minus) = (side(true), side(false));
    let t = w_plus.min(w_minus);

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let g = (j - i + 1) as f64;
        tie_term += g * g * g - g;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let p_normal = if var <= 0.0 {
        1.0
    } else {
        let dev = ((t - mean).abs() - 0.5).max(0.0);
        let z = dev / var.sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * std_normal.cdf(-z)).clamp(0.0, 1.0)
    };
    let p_exact = (n <= WILCOXON_EXACT_MAX_N).then(|| wilcoxon_exact_p(&ranks, t));
    WilcoxonResult { statistic: t, w_plus, w_minus, n, zeros_dropped, p_exact, p_normal, degenerate: false }
}

/// Spearman rank correlation with a Student-t p-value on n - 2 degrees of
/// freedom.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<TestResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { needed: 3, got: x.len() });
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let r = pearson(&rx, &ry).ok_or(StatsError::Constant)?;
    let df = (x.len() - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.cdf(-t.abs())).clamp(0.0, 1.0)
    };
    Ok(TestResult { statistic: r, p_value, n: x.len(), method: "spearman rank correlation, t approximation".into() })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Variance inflation factor of each column (intercept excluded): regress
/// the column on the others plus an intercept and return `1 / (1 - R²)`.
/// Collinear columns give `f64::INFINITY`.
pub fn vif(columns: &[Vec<f64>]) -> Result<Vec<f64>, StatsError> {
    if columns.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: columns.len() });
    }
    let n = columns[0].len();
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(StatsError::LengthMismatch(n, bad.len()));
    }
    let k = columns.len();
    Ok((0..k)
        .map(|target| {
            let y = DVector::from_column_slice(&columns[target]);
            let mut x = DMatrix::from_element(n, k, 1.0);
            for (c, j) in (0..k).filter(|&j| j != target).enumerate() {
                for i in 0..n {
                    x[(i, c + 1)] = columns[j][i];
                }
            }
            let mean = y.mean();
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            if sst <= 0.0 {
                return f64::INFINITY;
            }
            let svd = x.clone().svd(true, true);
            let Ok(beta) = svd.solve(&y, 1e-12) else {
                return f64::INFINITY;
            };
            let resid = &y - &x * beta;
            let r2 = 1.0 - resid.norm_squared() / sst;
            if 1.0 - r2 < 1e-10 {
                f64::INFINITY
            } else {
                1.0 / (1.0 - r2)
            }
        })
        .collect())
}

/// Rows grouped contiguously by group index, ready for the mixed model.
#[derive(Debug, Clone)]
pub struct GroupedData {
    pub columns: Vec<String>,
    /// Row-major design, `columns.len()` entries per row.
    pub x: Vec<f64>,
    /// Successes per row.
    pub y: Vec<f64>,
    /// Observations per row; one unless identical rows were merged.
    pub trials: Vec<f64>,
    pub group_names: Vec<String>,
    /// Row range of each group.
    pub group_ranges: Vec<std::ops::Range<usize>>,
}

impl GroupedData {
    /// Sorts rows by group name (stable within a group) and builds ranges.
    pub fn new(columns: Vec<String>, rows: Vec<(String, Vec<f64>, bool)>) -> Self {
        let mut rows = rows;
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let p = columns.len();
        let mut x = Vec::with_capacity(rows.len() * p);
        let mut y = Vec::with_capacity(rows.len());
        let mut group_names: Vec<String> = Vec::new();
        let mut group_ranges = Vec::new();
        for (i, (g, r, yy)) in rows.into_iter().enumerate() {
            assert_eq!(r.len(), p, "row width must match the column count");
            if group_names.last() != Some(&g) {
                if let Some(last) = group_ranges.last_mut() {
                    let last: &mut std::ops::Range<usize> = last;
                    last.end = i;
                }
                group_names.push(g);
                group_ranges.push(i..i);
            }
            x.extend(r);
            y.push(if yy { 1.0 } else { 0.0 });
        }
        if let Some(last) = group_ranges.last_mut() {
            last.end = y.len();
        }
        let trials = vec![1.0; y.len()];
        GroupedData { columns, x, y, trials, group_names, group_ranges }
    }

    /// The same likelihood with identical design rows of a group merged into
    /// one binomial row. Untreated newcomers all share one row, so this
    /// roughly halves the work of every pass.
    pub fn merged(&self) -> GroupedData {
        let p = self.p();
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut trials = Vec::new();
        let mut group_ranges = Vec::with_capacity(self.group_ranges.len());
        for range in &self.group_ranges {
            let start = y.len();
            let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
            for i in range.clone() {
                let row = self.row(i);
                let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
                let k = *slot.entry(key).or_insert_with(|| {
                    x.extend_from_slice(row);
                    y.push(0.0);
                    trials.push(0.0);
                    y.len() - 1
                });
                y[k] += self.y[i];
                trials[k] += self.trials[i];
            }
            group_ranges.push(start..y.len());
        }
        debug_assert_eq!(x.len(), y.len() * p);
        GroupedData { columns: self.columns.clone(), x, y, trials, group_names: self.group_names.clone(), group_ranges }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Sigma2 {
    /// Estimate the random-intercept variance.
    Estimate,
    /// Hold it fixed; zero gives an ordinary logistic regression.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedConfig {
    pub sigma2: Sigma2,
    pub max_iter: usize,
    /// Convergence threshold on the largest coefficient change.
    pub tolerance: f64,
    /// Search interval for `ln σ²`.
    pub log_sigma2_bounds: (f64, f64),
    /// Width at which the `ln σ²` search stops.
    pub log_sigma2_tolerance: f64,
    /// A coefficient beyond this magnitude signals separation.
    pub separation_bound: f64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            sigma2: Sigma2::Estimate,
            max_iter: 200,
            tolerance: 1e-6,
            log_sigma2_bounds: (-10.0, 5.0),
            log_sigma2_tolerance: 1e-6,
            separation_bound: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedFit {
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma2: f64,
    /// Random intercept per group, keyed by group name.
    pub u: BTreeMap<String, f64>,
    /// Laplace-approximate marginal log-likelihood at the optimum (up to a
    /// constant).
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct Inner {
    beta: Vec<f64>,
    u: Vec<f64>,
    value: f64,
    info: DMatrix<f64>,
    converged: bool,
    iterations: usize,
}

impl GroupedData {
    fn fixed_part(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect()
    }

    /// Mode of each group's penalized log-likelihood, by safeguarded Newton.
    fn solve_u(&self, eta: &[f64], sigma2: f64, u: &mut [f64]) {
        if sigma2 <= 0.0 {
            u.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        for (g, range) in self.group_ranges.iter().enumerate() {
            let mut ug = u[g];
            for _ in 0..100 {
                let (mut grad, mut w) = (-ug / sigma2, 1.0 / sigma2);
                for i in range.clone() {
                    let p = logistic(eta[i] + ug);
                    grad += self.y[i] - self.trials[i] * p;
                    w += self.trials[i] * p * (1.0 - p);
                }
                let step = (grad / w).clamp(-5.0, 5.0);
                ug += step;
                if step.abs() < 1e-12 * (1.0 + ug.abs()) {
                    break;
                }
            }
            u[g] = ug;
        }
    }

    /// Laplace objective, gradient and Schur-complement information at
    /// `(beta, sigma2)` for already-solved modes `u`, in one pass.
    fn evaluate(&self, eta: &[f64], sigma2: f64, u: &[f64], want_derivs: bool) -> (f64, Vec<f64>, DMatrix<f64>) {
        let p = self.p();
        let mut value = 0.0;
        let mut grad = vec![0.0; p];
        let mut info = vec![0.0; p * p];
        let mut a = vec![0.0; p];
        let mut cx = vec![0.0; p];
        for (g, range) in self.group_ranges.iter().enumerate() {
            let ug = u[g];
            let mut ll = 0.0;
            let mut wsum = 0.0;
            let mut csum = 0.0;
            a.iter_mut().for_each(|v| *v = 0.0);
            cx.iter_mut().for_each(|v| *v = 0.0);
            for i in range.clone() {
                let lin = eta[i] + ug;
                // One exponential serves both the log-likelihood and p.
                let e = (-lin.abs()).exp();
                ll += self.y[i] * lin - self.trials[i] * (lin.max(0.0) + e.ln_1p());
                if !want_derivs && sigma2 <= 0.0 {
                    continue;
                }
                let pr = if lin >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                let w = self.trials[i] * pr * (1.0 - pr);
                wsum += w;
                if want_derivs {
                    let c = w * (1.0 - 2.0 * pr);
                    csum += c;
                    let x = self.row(i);
                    let r = self.y[i] - self.trials[i] * pr;
                    for k in 0..p {
                        let xk = x[k];
                        // Untreated rows are mostly zeros; skipping them is exact.
                        if xk == 0.0 {
                            continue;
                        }
                        grad[k] += r * xk;
                        a[k] += w * xk;
                        cx[k] += c * xk;
                        let wxk = w * xk;
                        let row = &mut info[k * p..k * p + k + 1];
                        for (slot, xl) in row.iter_mut().zip(x) {
                            *slot += wxk * xl;
                        }
                    }
                }
            }
            if sigma2 > 0.0 {
                value += ll - ug * ug / (2.0 * sigma2) - 0.5 * (1.0 + sigma2 * wsum).ln();
                if want_derivs {
                    let h = wsum + 1.0 / sigma2;
                    // Derivative of the log-determinant term through both the
                    // direct dependence on beta and the shift of the mode:
                    // dW/dβ = Σ c_i (x_i − a/h).
                    for k in 0..p {
                        let dw = cx[k] - csum * a[k] / h;
                        grad[k] -= 0.5 * dw / h;
                        for l in 0..=k {
                            info[k * p + l] -= a[k] * a[l] / h;
                        }
                    }
                }
            } else {
                value += ll;
            }
        }
        let info = DMatrix::from_fn(p, p, |k, l| if l <= k { info[k * p + l] } else { info[l * p + k] });
        (value, grad, info)
    }

    fn check_identifiable(&self) -> Result<(), StatsError> {
        for (k, name) in self.columns.iter().enumerate() {
            if (0..self.n()).all(|i| self.row(i)[k] == 0.0) {
                return Err(StatsError::Identifiability(name.clone()));
            }
        }
        Ok(())
    }

    /// Penalized Newton for beta at fixed sigma2, with backtracking.
    fn fit_inner(&self, sigma2: f64, start_beta: &[f64], start_u: &[f64], cfg: &MixedConfig) -> Result<Inner, StatsError> {
        let mut beta = start_beta.to_vec();
        let mut u = start_u.to_vec();
        let eta = self.fixed_part(&beta);
        self.solve_u(&eta, sigma2, &mut u);
        let (mut value, mut grad, mut info) = self.evaluate(&eta, sigma2, &u, true);
        let mut converged = false;
        let mut iterations = 0;
        while iterations < cfg.max_iter {
            iterations += 1;
            if !value.is_finite() {
                return Err(StatsError::NonFinite("objective"));
            }
            let step = match info.clone().cholesky() {
                Some(ch) => ch.solve(&DVector::from_column_slice(&grad)),
                None => {
                    let lu = info.clone().lu();
                    lu.solve(&DVector::from_column_slice(&grad)).ok_or(StatsError::Singular)?
                }
            };
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
                let ceta = self.fixed_part(&cand);
                let mut cu = u.clone();
                self.solve_u(&ceta, sigma2, &mut cu);
                let ev = self.evaluate(&ceta, sigma2, &cu, true);
                if ev.0.is_finite() && ev.0 >= value - 1e-10 * value.abs().max(1.0) {
                    accepted = Some((cand, cu, ev));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, cu, ev)) = accepted else {
                // No ascent direction left at working precision.
                converged = true;
                break;
            };
            let change = cand.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            beta = cand;
            u = cu;
            if let Some((k, &b)) = beta.iter().enumerate().find(|(_, b)| b.abs() > cfg.separation_bound) {
                return Err(StatsError::Separation { column: self.columns[k].clone(), value: b });
            }
            value = ev.0;
            grad = ev.1;
            info = ev.2;
            if change < cfg.tolerance {
                converged = true;
                break;
            }
        }
        Ok(Inner { beta, u, value, info, converged, iterations })
    }

    /// Laplace-approximate marginal log-likelihood at `(beta, sigma2)`,
    /// with the group modes solved from scratch.
    pub fn laplace_log_likelihood(&self, beta: &[f64], sigma2: f64) -> f64 {
        let eta = self.fixed_part(beta);
        let mut u = vec![0.0; self.group_ranges.len()];
        self.solve_u(&eta, sigma2, &mut u);
        self.evaluate(&eta, sigma2, &u, false).0
    }

    /// Analytic gradient of the Laplace log-likelihood in beta.
    pub fn laplace_gradient(&self, beta: &[f64], sigma2: f64) -> Vec<f64> {
        let eta = self.fixed_part(beta);
        let mut u = vec![0.0; self.group_ranges.len()];
        self.solve_u(&eta, sigma2, &mut u);
        self.evaluate(&eta, sigma2, &u, true).1
    }
}

/// Fits a random-intercept logistic model.
///
/// For fixed σ² the Laplace objective is maximized over β by Newton steps
/// with backtracking, solving each group's intercept mode in an inner loop;
/// σ² is profiled by golden-section search on `ln σ²`.
pub fn fit_mixed_logistic(data: &GroupedData, cfg: &MixedConfig) -> Result<MixedFit, StatsError> {
    if data.n() == 0 {
        return Err(StatsError::TooFewObservations { needed: 1, got: 0 });
    }
    data.check_identifiable()?;
    let data = &data.merged();
    let groups = data.group_ranges.len();
    let p = data.p();
    let zero_u = vec![0.0; groups];
    let zero_beta = vec![0.0; p];

    let (inner, sigma2, outer_ok) = match cfg.sigma2 {
        Sigma2::Fixed(s) => {
            let s = s.max(0.0);
            if s > 0.0 && groups < 1 {
                return Err(StatsError::TooFewGroups(groups));
            }
            (data.fit_inner(s, &zero_beta, &zero_u, cfg)?, s, true)
        }
        Sigma2::Estimate => {
            if groups < 2 {
                return Err(StatsError::TooFewGroups(groups));
            }
            // Warm start from the fixed-effects fit.
            let start = data.fit_inner(0.0, &zero_beta, &zero_u, cfg)?;
            let mut warm_beta = start.beta.clone();
            let mut warm_u = zero_u.clone();
            let mut all_ok = start.converged;
            let mut profile = |x: f64| -> Result<f64, StatsError> {
                let r = data.fit_inner(x.exp(), &warm_beta, &warm_u, cfg)?;
                all_ok &= r.converged;
                warm_beta = r.beta;
                warm_u = r.u;
                Ok(r.value)
            };
            let (mut a, mut b) = cfg.log_sigma2_bounds;
            let invphi = (5f64.sqrt() - 1.0) / 2.0;
            let mut c = b - invphi * (b - a);
            let mut d = a + invphi * (b - a);
            let mut fc = profile(c)?;
            let mut fd = profile(d)?;
            while b - a > cfg.log_sigma2_tolerance {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - invphi * (b - a);
                    fc = profile(c)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + invphi * (b - a);
                    fd = profile(d)?;
                }
            }
            let best = if fc >= fd { c } else { d };
            let tight = MixedConfig { tolerance: cfg.tolerance.min(1e-9), ..*cfg };
            let s = best.exp();
            let fin = data.fit_inner(s, &warm_beta, &warm_u, &tight)?;
            (fin, s, all_ok)
        }
    };

    let cov = inner
        .info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| inner.info.clone().try_inverse())
        .ok_or(StatsError::Singular)?;
    let se = (0..p).map(|k| cov[(k, k)].max(0.0).sqrt()).collect();
    Ok(MixedFit {
        columns: data.columns.clone(),
        beta: inner.beta,
        se,
        sigma2,
        u: data.group_names.iter().cloned().zip(inner.u).collect(),
        log_likelihood: inner.value,
        converged: inner.converged && outer_ok,
        iterations: inner.iterations,
    })
}

/// Names of the engagement model's fixed effects, in order.
pub const ENGAGEMENT_COLUMNS: [&str; 5] = ["intercept", "reply", "reply_x_sentiment", "reply_x_toxicity", "reply_x_attack"];

/// How reply toxicity and attack enter the design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "threshold")]
pub enum AttributeMode {
    Continuous,
    /// Indicator of score at or above the cutoff.
    Threshold(f64),
}

/// Design row `[1, reply, reply·s, reply·t, reply·a]` for one event.
pub fn engagement_row(event: &FirstPostEvent, mode: AttributeMode) -> [f64; 5] {
    match (&event.first_reply, event.treated) {
        (Some(r), true) => {
            let (t, a) = match mode {
                AttributeMode::Continuous => (r.toxicity, r.attack),
                AttributeMode::Threshold(c) => ((r.toxicity >= c) as u8 as f64, (r.attack >= c) as u8 as f64),
            };
            [1.0, 1.0, r.sentiment, t, a]
        }
        (_, true) => [1.0, 1.0, 0.0, 0.0, 0.0],
        _ => [1.0, 0.0, 0.0, 0.0, 0.0],
    }
}

pub fn engagement_data(events: &[FirstPostEvent], mode: AttributeMode) -> GroupedData {
    let mut sorted: Vec<&FirstPostEvent> = events.iter().collect();
    sorted.sort_by(|a, b| (&a.community, &a.user).cmp(&(&b.community, &b.user)));
    GroupedData::new(
        ENGAGEMENT_COLUMNS.iter().map(|s| s.to_string()).collect(),
        sorted
            .into_iter()
            .map(|e| (e.community.clone(), engagement_row(e, mode).to_vec(), e.engaged))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngagementModel {
    pub kind: PostKind,
    pub community_type: CommunityType,
    pub mode: AttributeMode,
    pub beta: [f64; 5],
    pub se: [f64; 5],
    pub sigma2: f64,
    pub u: BTreeMap<String, f64>,
    pub converged: bool,
    pub log_likelihood: f64,
    pub n_events: usize,
    /// Treated events whose reply could not be scored (features zero).
    pub unscored_replies: usize,
    /// Variance inflation factors of the four non-intercept columns.
    pub vif: Vec<f64>,
}

impl EngagementModel {
    /// `β₀ + u_c + treated · (β_r + β_s s + β_t t + β_a a)`.
    pub fn linear_predictor(&self, intercept: f64, treated: bool, s: f64, t: f64, a: f64) -> f64 {
        let b = &self.beta;
        let mut eta = b[0] + intercept;
        if treated {
            eta += b[1] + b[2] * s + b[3] * t + b[4] * a;
        }
        eta
    }

    /// Whether zeroing toxicity and attack and clamping sentiment at zero
    /// can only raise every probability.
    pub fn nicer_dominates(&self) -> bool {
        self.beta[2] >= 0.0 && self.beta[3] <= 0.0 && self.beta[4] <= 0.0
    }
}

/// Fits one engagement model on the events of one kind and community type.
pub fn fit_engagement_model(
    events: &[FirstPostEvent],
    kind: PostKind,
    community_type: CommunityType,
    mode: AttributeMode,
    cfg: &MixedConfig,
) -> Result<EngagementModel, StatsError> {
    let events: Vec<FirstPostEvent> = events.iter().filter(|e| e.kind == kind).cloned().collect();
    let data = engagement_data(&events, mode);
    let fit = fit_mixed_logistic(&data, cfg)?;
    let columns: Vec<Vec<f64>> = (1..5).map(|k| (0..data.n()).map(|i| data.row(i)[k]).collect()).collect();
    let vif = vif(&columns)?;
    let mut beta = [0.0; 5];
    let mut se = [0.0; 5];
    beta.copy_from_slice(&fit.beta);
    se.copy_from_slice(&fit.se);
    Ok(EngagementModel {
        kind,
        community_type,
        mode,
        beta,
        se,
        sigma2: fit.sigma2,
        u: fit.u,
        converged: fit.converged,
        log_likelihood: fit.log_likelihood,
        n_events: events.len(),
        unscored_replies: events.iter().filter(|e| e.first_reply.as_ref().is_some_and(|r| !r.scored)).count(),
        vif,
    })
}

/// Fits the four kind × community-type models in parallel.
pub fn fit_all_models(
    events: &BTreeMap<CommunityType, Vec<FirstPostEvent>>,
    mode: AttributeMode,
    cfg: &MixedConfig,
) -> Vec<(PostKind, CommunityType, Result<EngagementModel, StatsError>)> {
    let jobs: Vec<(PostKind, CommunityType)> = CommunityType::ALL
        .iter()
        .flat_map(|&t| PostKind::ALL.iter().map(move |&k| (k, t)))
        .collect();
    jobs.into_par_iter()
        .map(|(k, t)| {
            let empty = Vec::new();
            let ev = events.get(&t).unwrap_or(&empty);
            (k, t, fit_engagement_model(ev, k, t, mode, cfg))
        })
        .collect()
}
