//! Matched cohorts: greedy Mahalanobis nearest-neighbour matching of treated
//! and control newcomers within a community, matching of hateful communities
//! to comparable non-hateful ones, and the simulated-ban correction.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::{FirstPostEvent, Post, PostKind};

/// Per-community cap on the number of events entering a matching pool.
pub const DEFAULT_POOL_CAP: usize = 30_000;
/// Candidate control communities must be strictly larger than this...
pub const DEFAULT_MIN_CANDIDATE_SIZE: u64 = 10_000;
/// ...and strictly smaller than this.
pub const DEFAULT_MAX_CANDIDATE_SIZE: u64 = 2_000_000;
const RIDGE_FACTOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("feature vectors have dimensions {left} and {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("too few events to match: {treated} treated, {control} control (need at least 2 each)")]
    TooFewEvents { treated: usize, control: usize },
    #[error("covariance matrix is singular even after ridge regularization")]
    SingularCovariance,
    #[error("{candidates} candidate communities cannot cover {hateful} hateful communities")]
    TooFewCandidates { hateful: usize, candidates: usize },
    #[error("no newcomer in `{0}` posted a second time")]
    NoReturningUsers(String),
    #[error("event `{user}` is missing covariate {feature}")]
    MissingCovariate { user: String, feature: &'static str },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityProfile {
    pub community: String,
    /// Number of distinct posting accounts.
    pub size: u64,
    pub ban_date: Option<i64>,
    /// 90th-percentile time between a newcomer's first and second post.
    pub p90_return: i64,
}

/// Nearest-rank percentile (`q` in (0, 1]) of unsorted values.
pub fn nearest_rank(values: &[i64], q: f64) -> Option<i64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

/// Time from each newcomer's first post to their next post (any thread),
/// for newcomers who posted at least twice. Sorted by user.
pub fn return_deltas(events: &[FirstPostEvent], posts: &[Post]) -> Vec<i64> {
    let mut by_user: HashMap<&str, Vec<&Post>> = HashMap::new();
    for p in posts {
        by_user.entry(p.author.as_str()).or_default().push(p);
    }
    let mut sorted: Vec<&FirstPostEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.user.cmp(&b.user));
    sorted
        .into_iter()
        .filter_map(|e| {
            let own = by_user.get(e.user.as_str())?;
            own.iter()
                .filter(|p| p.community == e.community)
                .filter(|p| (p.created_at, p.id.as_str()) > (e.first_post_time, e.post_id.as_str()))
                .map(|p| p.created_at)
                .min()
                .map(|t| t - e.first_post_time)
        })
        .collect()
}

pub fn p90_return_time(events: &[FirstPostEvent], posts: &[Post]) -> Result<i64, CohortError> {
    let deltas = return_deltas(events, posts);
    if deltas.len() < 10 {
        let community = events.first().map(|e| e.community.as_str()).unwrap_or("");
        warn!(community, returning = deltas.len(), "fewer than 10 returning newcomers; p90 is unstable");
    }
    nearest_rank(&deltas, 0.9).ok_or_else(|| {
        CohortError::NoReturningUsers(events.first().map(|e| e.community.clone()).unwrap_or_default())
    })
}

/// Builds a profile; size counts distinct authors in `posts`.
pub fn community_profile(
    community: &str,
    events: &[FirstPostEvent],
    posts: &[Post],
    ban_date: Option<i64>,
) -> Result<CommunityProfile, CohortError> {
    let size = posts.iter().map(|p| p.author.as_str()).collect::<BTreeSet<_>>().len() as u64;
    Ok(CommunityProfile {
        community: community.to_string(),
        size: size.max(1),
        ban_date,
        p90_return: p90_return_time(events, posts)?.max(0),
    })
}

/// Truncates a control community at its matched hateful community's ban date.
///
/// Events later than `ban_date - p90` are dropped. For survivors, replies
/// after the ban are discarded and engagement is recomputed with the ban date
/// as the cutoff. `posts` are the community's posts.
pub fn apply_simulated_ban(
    events: &[FirstPostEvent],
    posts: &[Post],
    ban_date: i64,
    p90: i64,
) -> Vec<FirstPostEvent> {
    let window_end = ban_date - p90;
    let mut by_user: HashMap<&str, Vec<&Post>> = HashMap::new();
    for p in posts {
        by_user.entry(p.author.as_str()).or_default().push(p);
    }
    events
        .iter()
        .filter(|e| e.first_post_time <= ban_date && e.first_post_time <= window_end)
        .map(|e| {
            let mut e = e.clone();
            if e.first_reply.as_ref().is_some_and(|r| r.created_at > ban_date) {
                e.first_reply = None;
                e.treated = false;
            }
            e.engaged = by_user.get(e.user.as_str()).is_some_and(|own| {
                own.iter().any(|p| {
                    p.community == e.community
                        && p.created_at > e.first_post_time
                        && p.created_at <= ban_date
                        && p.thread_root() != e.thread_root
                })
            });
            e
        })
        .collect()
}

/// `sqrt((x - y)ᵀ · cov_inv · (x - y))`.
pub fn mahalanobis(x: &[f64], y: &[f64], cov_inv: &DMatrix<f64>) -> Result<f64, CohortError> {
    if x.len() != y.len() {
        return Err(CohortError::DimensionMismatch { left: x.len(), right: y.len() });
    }
    if cov_inv.nrows() != x.len() || cov_inv.ncols() != x.len() {
        return Err(CohortError::DimensionMismatch { left: x.len(), right: cov_inv.nrows() });
    }
    let d = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
    Ok((d.transpose() * cov_inv * &d)[(0, 0)].max(0.0).sqrt())
}

/// Pre-treatment covariates used for user matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    AccountAge,
    NestLevel,
    Valence,
    WordCount,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::AccountAge, Feature::NestLevel, Feature::Valence, Feature::WordCount];

    /// Submissions always sit at nest level 0, so that column is dropped.
    pub fn for_kind(kind: PostKind) -> Vec<Feature> {
        match kind {
            PostKind::Comment => Self::ALL.to_vec(),
            PostKind::Submission => vec![Feature::AccountAge, Feature::Valence, Feature::WordCount],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::AccountAge => "account_age",
            Feature::NestLevel => "nest_level",
            Feature::Valence => "valence",
            Feature::WordCount => "word_count",
        }
    }

    pub fn value(self, event: &FirstPostEvent) -> Option<f64> {
        let c = &event.covariates;
        match self {
            Feature::AccountAge => c.account_age.map(|a| a as f64),
            Feature::NestLevel => Some(c.nest_level as f64),
            Feature::Valence => Some(c.valence),
            Feature::WordCount => Some(c.word_count as f64),
        }
    }
}

fn feature_rows(events: &[FirstPostEvent], features: &[Feature]) -> Result<Vec<Vec<f64>>, CohortError> {
    events
        .iter()
        .map(|e| {
            features
                .iter()
                .map(|f| {
                    f.value(e).ok_or_else(|| CohortError::MissingCovariate {
                        user: e.user.clone(),
                        feature: f.as_str(),
                    })
                })
                .collect()
        })
        .collect()
}

/// Sample covariance of the rows with a ridge of `1e-6 · trace / d` added
/// to the diagonal.
pub fn pooled_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CohortError> {
    let d = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    if n < 2 || d == 0 {
        return Err(CohortError::SingularCovariance);
    }
    // Shift by the first row so constant columns give an exactly zero variance.
    let origin = &rows[0];
    let mut mean = vec![0.0; d];
    for r in rows {
        for k in 0..d {
            mean[k] += r[k] - origin[k];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (r[i] - origin[i] - mean[i]) * (r[j] - origin[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / (n - 1) as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let ridge = RIDGE_FACTOR * cov.trace() / d as f64;
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    Ok(cov)
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, CohortError> {
    if m.iter().any(|x| !x.is_finite()) || m.trace() <= 0.0 {
        return Err(CohortError::SingularCovariance);
    }
    m.clone().cholesky().map(|c| c.inverse()).ok_or(CohortError::SingularCovariance)
}

/// Maps rows into a space where Euclidean distance equals the Mahalanobis
/// distance under `cov_inv`.
fn whiten(rows: &[Vec<f64>], cov_inv: &DMatrix<f64>) -> Result<Vec<Vec<f64>>, CohortError> {
    let chol = cov_inv.clone().cholesky().ok_or(CohortError::SingularCovariance)?;
    let lt = chol.l().transpose();
    Ok(rows
        .iter()
        .map(|r| {
            let v = &lt * DVector::from_column_slice(r);
            v.iter().copied().collect()
        })
        .collect())
}

/// One greedy assignment, by index into the inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexPair {
    pub treated: usize,
    pub control: usize,
    pub distance: f64,
}

/// Greedy nearest-neighbour matching without replacement.
///
/// Treated rows are visited in `order`; each takes the closest still-free
/// control, with exact distance ties going to the control with the smallest
/// id. Returns the pairs in visiting order and the unmatched treated indices.
pub fn greedy_match(
    treated: &[Vec<f64>],
    control: &[Vec<f64>],
    control_ids: &[&str],
    cov_inv: &DMatrix<f64>,
    order: &[usize],
) -> Result<(Vec<IndexPair>, Vec<usize>), CohortError> {
    let d = cov_inv.nrows();
    for r in treated.iter().chain(control) {
        if r.len() != d {
            return Err(CohortError::DimensionMismatch { left: r.len(), right: d });
        }
    }
    let wt = whiten(treated, cov_inv)?;
    let wc = whiten(control, cov_inv)?;
    // Scan controls in id order so a strict `<` keeps the smallest id on ties.
    let mut scan: Vec<usize> = (0..control.len()).collect();
    scan.sort_by(|&a, &b| control_ids[a].cmp(control_ids[b]).then(a.cmp(&b)));
    let mut free = vec![true; control.len()];
    let mut remaining = control.len();
    let mut pairs = Vec::with_capacity(order.len().min(control.len()));
    let mut unmatched = Vec::new();
    for &t in order {
        if remaining == 0 {
            unmatched.push(t);
            continue;
        }
        let x = &wt[t];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for &c in &scan {
            if !free[c] {
                continue;
            }
            let dist: f64 = x.iter().zip(&wc[c]).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d || best == usize::MAX {
                best = c;
                best_d = dist;
            }
        }
        free[best] = false;
        remaining -= 1;
        pairs.push(IndexPair { treated: t, control: best, distance: best_d.sqrt() });
    }
    Ok((pairs, unmatched))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub feature: Feature,
    /// Standardized mean difference before matching.
    pub before: f64,
    /// Standardized mean difference among matched pairs, using the
    /// pre-matching pooled standard deviation.
    pub after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: FirstPostEvent,
    pub control: FirstPostEvent,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairs {
    pub features: Vec<Feature>,
    /// Row-major covariance (ridge included) used for the distances.
    pub covariance: Vec<f64>,
    pub pairs: Vec<MatchedPair>,
    pub unmatched_treated: Vec<String>,
    pub balance: Vec<Balance>,
}

fn mean_var(rows: &[&Vec<f64>], k: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    if rows.is_empty() {
        return (0.0, 0.0);
    }
    let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Standardized mean differences before and after matching.
pub fn balance(
    features: &[Feature],
    treated: &[Vec<f64>],
    control: &[Vec<f64>],
    pairs: &[IndexPair],
) -> Vec<Balance> {
    let t_all: Vec<&Vec<f64>> = treated.iter().collect();
    let c_all: Vec<&Vec<f64>> = control.iter().collect();
    let t_m: Vec<&Vec<f64>> = pairs.iter().map(|p| &treated[p.treated]).collect();
    let c_m: Vec<&Vec<f64>> = pairs.iter().map(|p| &control[p.control]).collect();
    features
        .iter()
        .enumerate()
        .map(|(k, &feature)| {
            let (mt, vt) = mean_var(&t_all, k);
            let (mc, vc) = mean_var(&c_all, k);
            let sd = ((vt + vc) / 2.0).sqrt();
            let smd = |a: f64, b: f64| if sd > 0.0 { (a - b) / sd } else { 0.0 };
            let (amt, _) = mean_var(&t_m, k);
            let (amc, _) = mean_var(&c_m, k);
            Balance { feature, before: smd(mt, mc), after: if pairs.is_empty() { 0.0 } else { smd(amt, amc) } }
        })
        .collect()
}

/// Seeded uniform subsample of at most `cap` events, taken from a canonical
/// (user-sorted) order so the result is independent of input order.
fn cap_pool(
    treated: &[FirstPostEvent],
    control: &[FirstPostEvent],
    cap: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<FirstPostEvent>, Vec<FirstPostEvent>) {
    let mut t: Vec<FirstPostEvent> = treated.to_vec();
    let mut c: Vec<FirstPostEvent> = control.to_vec();
    t.sort_by(|a, b| a.user.cmp(&b.user));
    c.sort_by(|a, b| a.user.cmp(&b.user));
    if t.len() + c.len() <= cap {
        return (t, c);
    }
    let mut all: Vec<(bool, usize)> =
        (0..t.len()).map(|i| (true, i)).chain((0..c.len()).map(|i| (false, i))).collect();
    all.shuffle(rng);
    all.truncate(cap);
    all.sort();
    let keep_t: Vec<FirstPostEvent> =
        all.iter().filter(|(is_t, _)| *is_t).map(|&(_, i)| t[i].clone()).collect();
    let keep_c: Vec<FirstPostEvent> =
        all.iter().filter(|(is_t, _)| !*is_t).map(|&(_, i)| c[i].clone()).collect();
    (keep_t, keep_c)
}

/// Matches treated newcomers to untreated ones within one community pool.
///
/// The combined pool is capped at `pool_cap` by seeded subsampling. The
/// covariance is estimated on the pooled features with a ridge. Treated
/// events are visited in a seeded shuffle of user-id order.
pub fn match_users(
    treated: &[FirstPostEvent],
    control: &[FirstPostEvent],
    features: &[Feature],
    pool_cap: usize,
    seed: u64,
) -> Result<MatchedPairs, CohortError> {
    if treated.len() < 2 || control.len() < 2 {
        return Err(CohortError::TooFewEvents { treated: treated.len(), control: control.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, c) = cap_pool(treated, control, pool_cap, &mut rng);
    if t.len() < 2 || c.len() < 2 {
        return Err(CohortError::TooFewEvents { treated: t.len(), control: c.len() });
    }
    let tx = feature_rows(&t, features)?;
    let cx = feature_rows(&c, features)?;
    let pooled: Vec<Vec<f64>> = tx.iter().chain(&cx).cloned().collect();
    let cov = pooled_covariance(&pooled)?;
    let cov_inv = spd_inverse(&cov)?;
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.shuffle(&mut rng);
    let ids: Vec<&str> = c.iter().map(|e| e.user.as_str()).collect();
    let (pairs, unmatched) = greedy_match(&tx, &cx, &ids, &cov_inv, &order)?;
    let balance = balance(features, &tx, &cx, &pairs);
    Ok(MatchedPairs {
        features: features.to_vec(),
        covariance: cov.transpose().iter().copied().collect(),
        pairs: pairs
            .iter()
            .map(|p| MatchedPair { treated: t[p.treated].clone(), control: c[p.control].clone(), distance: p.distance })
            .collect(),
        unmatched_treated: unmatched.iter().map(|&i| t[i].user.clone()).collect(),
        balance,
    })
}

/// Keeps candidate communities with `min < size < max`.
pub fn filter_candidates(candidates: &[CommunityProfile], min: u64, max: u64) -> Vec<CommunityProfile> {
    candidates.iter().filter(|c| c.size > min && c.size < max).cloned().collect()
}

fn community_features(p: &CommunityProfile) -> Vec<f64> {
    vec![(p.size.max(1) as f64).log10(), (1.0 + p.p90_return.max(0) as f64).log10()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityPair {
    pub hateful: CommunityProfile,
    pub control: CommunityProfile,
    pub distance: f64,
}

/// Pairs each hateful community with a distinct candidate by greedy
/// Mahalanobis matching on (log10 size, log10(1 + p90 return)). Hateful
/// communities are visited largest first.
pub fn match_communities(
    hateful: &[CommunityProfile],
    candidates: &[CommunityProfile],
) -> Result<Vec<CommunityPair>, CohortError> {
    if candidates.len() < hateful.len() {
        return Err(CohortError::TooFewCandidates { hateful: hateful.len(), candidates: candidates.len() });
    }
    if hateful.is_empty() {
        return Ok(Vec::new());
    }
    let hx: Vec<Vec<f64>> = hateful.iter().map(community_features).collect();
    let cx: Vec<Vec<f64>> = candidates.iter().map(community_features).collect();
    let pooled: Vec<Vec<f64>> = hx.iter().chain(&cx).cloned().collect();
    let cov = pooled_covariance(&pooled)?;
    let cov_inv = spd_inverse(&cov)?;
    let mut order: Vec<usize> = (0..hateful.len()).collect();
    order.sort_by(|&a, &b| {
        hateful[b].size.cmp(&hateful[a].size).then_with(|| hateful[a].community.cmp(&hateful[b].community))
    });
    let ids: Vec<&str> = candidates.iter().map(|c| c.community.as_str()).collect();
    let (pairs, _) = greedy_match(&hx, &cx, &ids, &cov_inv, &order)?;
    Ok(pairs
        .into_iter()
        .map(|p| CommunityPair {
            hateful: hateful[p.treated].clone(),
            control: candidates[p.control].clone(),
            distance: p.distance,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Covariates;
    use proptest::prelude::*;

    pub(crate) fn event(user: &str, t: i64, x: [f64; 4]) -> FirstPostEvent {
        FirstPostEvent {
            user: user.into(),
            community: "c".into(),
            kind: PostKind::Comment,
            post_id: format!("p_{user}"),
            thread_root: format!("r_{user}"),
            first_post_time: t,
            covariates: Covariates {
                account_age: Some(x[0] as i64),
                nest_level: x[1] as u32,
                valence: x[2],
                word_count: x[3] as u32,
            },
            treated: false,
            first_reply: None,
            engaged: false,
        }
    }

    fn post(id: &str, author: &str, t: i64, link: &str) -> Post {
        Post {
            id: id.into(),
            author: author.into(),
            community: "c".into(),
            created_at: t,
            parent_id: if id == link { None } else { Some(link.into()) },
            link_id: link.into(),
            body: "x".into(),
            author_created_at: Some(0),
        }
    }

    #[test]
    fn nearest_rank_examples() {
        let d: Vec<i64> = (1..=10).map(|i| i * 10).collect();
        assert_eq!(nearest_rank(&d, 0.9), Some(90));
        assert_eq!(nearest_rank(&[42], 0.9), Some(42));
        assert_eq!(nearest_rank(&[], 0.9), None);
    }

    #[test]
    fn p90_uses_second_post() {
        let events = vec![event("a", 100, [0.0; 4]), event("b", 100, [0.0; 4]), event("c", 5, [0.0; 4])];
        let mut posts = vec![post("p_a", "a", 100, "r_a"), post("x1", "a", 142, "r_a"), post("x2", "a", 500, "zz")];
        posts.push(post("p_b", "b", 100, "r_b"));
        posts.push(post("p_c", "c", 5, "r_c"));
        posts.push(post("x3", "c", 25, "other"));
        assert_eq!(return_deltas(&events, &posts), vec![42, 20]);
        assert_eq!(p90_return_time(&events, &posts).unwrap(), 42);
        assert!(p90_return_time(&events[1..2], &posts).is_err());
    }

    #[test]
    fn simulated_ban_boundary() {
        let events = vec![event("a", 900, [0.0; 4]), event("b", 901, [0.0; 4]), event("c", 2000, [0.0; 4])];
        let kept = apply_simulated_ban(&events, &[], 1000, 100);
        assert_eq!(kept.iter().map(|e| e.user.as_str()).collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn simulated_ban_recomputes_engagement() {
        let mut e = event("a", 100, [0.0; 4]);
        e.engaged = true;
        let posts = vec![post("p_a", "a", 100, "r_a"), post("later", "a", 950, "other")];
        assert!(apply_simulated_ban(&[e.clone()], &posts, 1000, 100)[0].engaged);
        assert!(!apply_simulated_ban(&[e], &posts, 900, 100)[0].engaged);
    }

    #[test]
    fn mahalanobis_examples() {
        let id = DMatrix::identity(2, 2);
        assert_eq!(mahalanobis(&[1.0, 2.0], &[1.0, 2.0], &id).unwrap(), 0.0);
        assert!((mahalanobis(&[3.0, 4.0], &[0.0, 0.0], &id).unwrap() - 5.0).abs() < 1e-12);
        let inv = DMatrix::from_diagonal(&DVector::from_vec(vec![0.25, 1.0]));
        assert!((mahalanobis(&[2.0, 0.0], &[0.0, 0.0], &inv).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(mahalanobis(&[1.0], &[1.0, 2.0], &id), Err(CohortError::DimensionMismatch { .. })));
    }

    #[test]
    fn greedy_picks_nearest_and_reports_exhaustion() {
        let id = DMatrix::identity(1, 1);
        let (pairs, un) = greedy_match(&[vec![0.0]], &[vec![2.0], vec![0.5]], &["x", "y"], &id, &[0]).unwrap();
        assert_eq!(pairs[0].control, 1);
        assert!((pairs[0].distance - 0.5).abs() < 1e-12);
        assert!(un.is_empty());
        let (pairs, un) = greedy_match(&[vec![0.0], vec![1.0]], &[vec![0.2]], &["x"], &id, &[0, 1]).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(un, vec![1]);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let id = DMatrix::identity(1, 1);
        let (pairs, _) = greedy_match(&[vec![0.0]], &[vec![1.0], vec![-1.0]], &["zed", "amy"], &id, &[0]).unwrap();
        assert_eq!(pairs[0].control, 1);
    }

    #[test]
    fn too_few_events_is_reported() {
        let t = vec![event("a", 1, [1.0, 1.0, 0.0, 3.0])];
        let c = vec![event("b", 1, [2.0, 1.0, 0.0, 3.0]), event("c", 1, [5.0, 2.0, 0.1, 8.0])];
        assert!(matches!(match_users(&t, &c, &Feature::ALL, 100, 1), Err(CohortError::TooFewEvents { .. })));
    }

    #[test]
    fn constant_pool_is_singular() {
        let t: Vec<_> = (0..3).map(|i| event(&format!("t{i}"), 1, [1.0; 4])).collect();
        let c: Vec<_> = (0..3).map(|i| event(&format!("c{i}"), 1, [1.0; 4])).collect();
        let r = match_users(&t, &c, &Feature::ALL, 100, 1);
        assert!(matches!(r, Err(CohortError::SingularCovariance)), "{r:?}");
    }

    fn profile(name: &str, size: u64, p90: i64) -> CommunityProfile {
        CommunityProfile { community: name.into(), size, ban_date: None, p90_return: p90 }
    }

    #[test]
    fn community_matching_examples() {
        let day = 86_400;
        let pairs = match_communities(
            &[profile("h", 100_000, day)],
            &[profile("far", 10_000, 10 * day), profile("near", 100_000, day)],
        )
        .unwrap();
        assert_eq!(pairs[0].control.community, "near");

        let pairs = match_communities(
            &[profile("h", 50_000, day)],
            &[profile("zz", 20_000, 3 * day), profile("aa", 20_000, 3 * day), profile("other", 1_000_000, 1)],
        )
        .unwrap();
        assert_eq!(pairs[0].control.community, "aa");

        assert!(matches!(
            match_communities(&[profile("a", 1, 1), profile("b", 2, 2)], &[profile("c", 3, 3)]),
            Err(CohortError::TooFewCandidates { .. })
        ));
    }

    #[test]
    fn candidate_filter_is_strict() {
        let c = vec![profile("a", 10_000, 1), profile("b", 10_001, 1), profile("c", 2_000_000, 1)];
        let kept = filter_candidates(&c, DEFAULT_MIN_CANDIDATE_SIZE, DEFAULT_MAX_CANDIDATE_SIZE);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].community, "b");
    }

    #[test]
    fn pool_cap_limits_combined_pool() {
        let t: Vec<_> = (0..30).map(|i| event(&format!("t{i:02}"), 1, [i as f64, 1.0 + (i % 3) as f64, 0.1 * i as f64, 5.0 + (i % 7) as f64])).collect();
        let c: Vec<_> = (0..60).map(|i| event(&format!("c{i:02}"), 1, [i as f64 * 0.5, 1.0 + (i % 4) as f64, -0.05 * i as f64, 3.0 + (i % 5) as f64])).collect();
        let m = match_users(&t, &c, &Feature::ALL, 40, 9).unwrap();
        assert!(m.pairs.len() + m.unmatched_treated.len() <= 40);
    }

    proptest! {
        #[test]
        fn matching_is_deterministic_and_without_replacement(
            seed in 0u64..1000,
            xs in proptest::collection::vec((0.0f64..1e6, 1u32..5, -1.0f64..1.0, 0u32..200), 8..40)) {
            let events: Vec<FirstPostEvent> = xs.iter().enumerate()
                .map(|(i, &(a, n, v, w))| event(&format!("u{i:03}"), 1, [a, n as f64, v, w as f64]))
                .collect();
            let (t, c) = events.split_at(events.len() / 3);
            let a = match_users(t, c, &Feature::ALL, 1000, seed);
            let mut rev_t = t.to_vec();
            rev_t.reverse();
            let b = match_users(&rev_t, c, &Feature::ALL, 1000, seed);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(&a, &b);
                    let controls: BTreeSet<&str> = a.pairs.iter().map(|p| p.control.user.as_str()).collect();
                    prop_assert_eq!(controls.len(), a.pairs.len());
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "input order changed the outcome"),
            }
        }
    }
}
