//! End-to-end acceptance checks. Runs sequentially with its own `main` and
//! prints one PASS/FAIL line per criterion; exits non-zero on any failure.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use firstreply_core::cohort::greedy_match;
use firstreply_core::corpus::BotFilter;
use firstreply_core::lexicon::{fit_sage, SageConfig};
use firstreply_core::scoring::{ScoreCache, StubScorer};
use firstreply_core::simulate::{simulate_growth, Scenario};
use firstreply_core::stats::{
    engagement_data, fit_engagement_model, fit_mixed_logistic, wilcoxon_signed_rank, AttributeMode, EngagementModel,
    MixedConfig, Sigma2,
};
use firstreply_core::study::{run_core, substitution_sensitivity, CohortConfig, StudyConfig, StudyCore, StudyInputs};
use firstreply_core::synth::{
    generate_corpus, model_events, published_betas, synth_hate_lexicon, ModelDesign, ReplyDistribution, SynthCorpus,
    SynthParams,
};
use firstreply_core::{CommunityType, FirstPostEvent, PostKind, SentimentLexicon};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("hateful communities retain commenters worse than non-hateful ones", err_direction),
        ("planted engagement coefficients are recovered", coefficient_recovery),
        ("signed-rank p-values match enumeration and permutation", wilcoxon_oracles),
        ("greedy matching picks nearest free controls and improves balance", matching_oracle),
        ("sparse vocabulary fit reaches the grid-search optimum", sage_oracle),
        ("nicer replies never shrink hateful communities", counterfactual_dominance),
        ("hate-word substitution barely moves reply scores", substitution_shift),
        ("pipeline output is byte-identical across runs and thread counts", determinism),
        ("threshold models agree in sign with continuous ones", threshold_signs),
    ];
    // `ACCEPTANCE_ONLY=2,5` restricts the run to the listed criteria.
    let only: Option<BTreeSet<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} — {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} — {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Synthetic corpora through the in-memory pipeline

fn study_inputs<'a>(corpus: &SynthCorpus, scorer: &'a StubScorer) -> StudyInputs<'a> {
    StudyInputs {
        posts: corpus.posts.clone(),
        background: corpus.background.clone(),
        bot_filter: BotFilter::new(["bot"], Vec::<String>::new()),
        hate_words: corpus
            .annotations
            .iter()
            .filter(|(_, r)| r.iter().map(|&v| v as u32).sum::<u32>() >= 4)
            .map(|(w, _)| w.clone())
            .collect::<BTreeSet<_>>(),
        ban_dates: corpus
            .truth
            .communities
            .iter()
            .filter_map(|c| c.ban_date.map(|b| (c.name.clone(), b)))
            .collect(),
        scorer,
        lexicon: SentimentLexicon::builtin(),
    }
}

fn study_config() -> StudyConfig {
    StudyConfig { cohort: CohortConfig { candidate_min_size: 0, ..Default::default() }, ..Default::default() }
}

fn run_synthetic(params: &SynthParams) -> Result<(SynthCorpus, StudyCore), String> {
    let corpus = generate_corpus(params).map_err(|e| e.to_string())?;
    let scorer = StubScorer::new(corpus.stub_lexicons.clone());
    let core = run_core(study_inputs(&corpus, &scorer), &study_config()).map_err(|e| e.to_string())?;
    Ok((corpus, core))
}

fn err_direction() -> Outcome {
    let start = Instant::now();
    let mut ordered = 0;
    let mut misdetected = 0;
    let mut undefined = Vec::new();
    for seed in 0..100u64 {
        let (corpus, core) = run_synthetic(&SynthParams::balanced(seed, 10, 10, 2000))?;
        misdetected += core
            .detections
            .iter()
            .filter(|d| {
                corpus.truth.communities.iter().find(|c| c.name == d.community).map(|c| c.community_type)
                    != Some(d.community_type())
            })
            .count();
        match (
            core.mean_err(CommunityType::Hateful, PostKind::Comment),
            core.mean_err(CommunityType::NonHateful, PostKind::Comment),
        ) {
            (Some(h), Some(n)) => ordered += (h < n) as usize,
            _ => undefined.push(seed),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "{ordered}/100 seeds with mean hateful comment ERR below non-hateful, {misdetected} misdetected communities, \
         undefined seeds {undefined:?}, {secs:.0} s"
    );
    ensure(ordered >= 95 && secs < 300.0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Engagement model recovery

/// Textbook iteratively reweighted least squares for plain logistic
/// regression.
fn irls(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut beta = vec![0.0; p];
    for _ in 0..100 {
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut xtwz = DVector::<f64>::zeros(p);
        for (row, &yi) in x.iter().zip(y) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = 1.0 / (1.0 + (-eta).exp());
            let w = mu * (1.0 - mu);
            let z = eta + (yi - mu) / w;
            for i in 0..p {
                xtwz[i] += row[i] * w * z;
                for j in 0..p {
                    xtwx[(i, j)] += row[i] * w * row[j];
                }
            }
        }
        let next = xtwx.lu().solve(&xtwz).expect("nonsingular normal equations");
        let change = next.iter().zip(&beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        beta = next.iter().copied().collect();
        if change < 1e-13 {
            break;
        }
    }
    beta
}

fn coefficient_recovery() -> Outcome {
    let design = ModelDesign::published(2024);
    let (events, _) = model_events(&design).map_err(|e| e.to_string())?;
    let data = engagement_data(&events, AttributeMode::Continuous);
    let fit = fit_mixed_logistic(&data, &MixedConfig::default()).map_err(|e| e.to_string())?;
    ensure(fit.converged, || "fit did not converge".into())?;
    let mut worst_z: f64 = 0.0;
    for k in 0..5 {
        let z = (fit.beta[k] - design.beta[k]) / fit.se[k];
        worst_z = worst_z.max(z.abs());
        ensure(z.abs() <= 3.0, || {
            format!("{}: {:.4} ± {:.4}, truth {}", fit.columns[k], fit.beta[k], fit.se[k], design.beta[k])
        })?;
    }
    let rel = (fit.sigma2 - design.sigma2).abs() / design.sigma2;
    ensure(rel <= 0.5, || format!("sigma2 {:.4} vs {}", fit.sigma2, design.sigma2))?;

    let h = 1e-5;
    let mut worst_g: f64 = 0.0;
    for k in 0..5 {
        let (mut bp, mut bm) = (fit.beta.clone(), fit.beta.clone());
        bp[k] += h;
        bm[k] -= h;
        let g = (data.laplace_log_likelihood(&bp, fit.sigma2) - data.laplace_log_likelihood(&bm, fit.sigma2)) / (2.0 * h);
        worst_g = worst_g.max(g.abs());
    }
    let g_s2 = (data.laplace_log_likelihood(&fit.beta, fit.sigma2 + h)
        - data.laplace_log_likelihood(&fit.beta, fit.sigma2 - h))
        / (2.0 * h);
    worst_g = worst_g.max(g_s2.abs());
    ensure(worst_g < 1e-3, || format!("finite-difference gradient {worst_g:.2e}"))?;

    let single = ModelDesign { groups: 1, sigma2: 0.0, ..ModelDesign::published(7) };
    let (events, _) = model_events(&single).map_err(|e| e.to_string())?;
    let data = engagement_data(&events, AttributeMode::Continuous);
    let p = data.columns.len();
    let rows: Vec<Vec<f64>> = data.x.chunks(p).map(<[f64]>::to_vec).collect();
    let y: Vec<f64> = data.y.clone();
    let oracle = irls(&rows, &y);
    let fixed = fit_mixed_logistic(&data, &MixedConfig { sigma2: Sigma2::Fixed(0.0), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let irls_gap = fixed.beta.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure(irls_gap < 1e-6, || format!("sigma2 = 0 fit differs from IRLS by {irls_gap:.2e}"))?;

    Ok(format!(
        "max |z| {worst_z:.2}, sigma2 {:.3} (truth {}), max |gradient| {worst_g:.1e}, IRLS gap {irls_gap:.1e}",
        fit.sigma2, design.sigma2
    ))
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-rank

fn oracle_midranks(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&a| {
            let below = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// `(T, p)` by enumerating all sign assignments of the non-zero differences.
fn enumerated_p(diffs: &[f64]) -> (f64, f64) {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return (0.0, 1.0);
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = oracle_midranks(&abs);
    let w_plus: f64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let t = w_plus.min(total - w_plus);
    let n = ranks.len();
    let mut at_most = 0u64;
    for mask in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if w <= t + 1e-9 {
            at_most += 1;
        }
    }
    (t, (2.0 * at_most as f64 / (1u64 << n) as f64).min(1.0))
}

fn wilcoxon_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n = rng.random_range(1..=10);
        let diffs: Vec<f64> = (0..n)
            .map(|_| if case % 2 == 0 { rng.random_range(-3i32..=3) as f64 } else { rng.random_range(-2.0..2.0) })
            .collect();
        let r = wilcoxon_signed_rank(&diffs);
        let (t, p) = enumerated_p(&diffs);
        let got = r.p_exact.ok_or_else(|| format!("no exact p for n = {n}"))?;
        ensure(r.statistic == t, || format!("case {case} {diffs:?}: statistic {} vs {t}", r.statistic))?;
        worst = worst.max((got - p).abs());
        ensure((got - p).abs() <= 1e-12, || format!("case {case} {diffs:?}: p {got} vs {p}"))?;
    }

    let mut worst_mc: f64 = 0.0;
    for (i, shift) in [0.0, 0.3, 0.6].into_iter().enumerate() {
        let noise = Normal::new(shift, 1.0).unwrap();
        let diffs: Vec<f64> = (0..25).map(|_| noise.sample(&mut rng)).collect();
        let r = wilcoxon_signed_rank(&diffs);
        let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
        let ranks = oracle_midranks(&abs);
        let total: f64 = ranks.iter().sum();
        let mean = total / 2.0;
        let observed = (r.w_plus - mean).abs();
        let draws = 1_000_000;
        let mut extreme = 0u64;
        for _ in 0..draws {
            let bits: u32 = rng.random();
            let w: f64 = (0..25).filter(|k| bits >> k & 1 == 1).map(|k| ranks[k]).sum();
            if (w - mean).abs() >= observed - 1e-9 {
                extreme += 1;
            }
        }
        let estimate = extreme as f64 / draws as f64;
        worst_mc = worst_mc.max((r.p_normal - estimate).abs());
        ensure((r.p_normal - estimate).abs() <= 0.02, || {
            format!("n = 25 vector {i}: normal p {:.4} vs permutation {estimate:.4}", r.p_normal)
        })?;
    }
    Ok(format!("200 exact cases, max gap {worst:.1e}; n = 25 normal vs permutation max gap {worst_mc:.4}"))
}

// ---------------------------------------------------------------------------
// Matching

fn random_rows(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<Vec<f64>> {
    let z = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let a: f64 = z.sample(rng) + shift;
            let b: f64 = z.sample(rng) + shift;
            let c: f64 = z.sample(rng) + shift;
            let d: f64 = z.sample(rng) + shift;
            // Mixed scales and a correlated pair.
            vec![400.0 * a + 900.0, 1.5 * b + 0.8 * a, 0.3 * c, 25.0 * d + 40.0]
        })
        .collect()
}

fn sample_covariance_inverse(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    cov.try_inverse().expect("invertible covariance")
}

fn quad_distance(x: &[f64], y: &[f64], inv: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += (x[i] - y[i]) * inv[(i, j)] * (x[j] - y[j]);
        }
    }
    s.max(0.0).sqrt()
}

fn smd(treated: &[&Vec<f64>], control: &[&Vec<f64>], all_t: &[Vec<f64>], all_c: &[Vec<f64>], k: usize) -> f64 {
    let mean = |v: &[&Vec<f64>]| v.iter().map(|r| r[k]).sum::<f64>() / v.len() as f64;
    let var = |v: &[Vec<f64>]| {
        let m = v.iter().map(|r| r[k]).sum::<f64>() / v.len() as f64;
        v.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    (mean(treated) - mean(control)) / ((var(all_t) + var(all_c)) / 2.0).sqrt()
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut pairs_checked = 0;
    let mut worst_ratio: f64 = 0.0;
    for pool in 0..100 {
        let nt = rng.random_range(20..=200);
        let nc = rng.random_range(3 * nt..=600);
        let treated = random_rows(&mut rng, nt, 1.0);
        let control = random_rows(&mut rng, nc, 0.0);
        let ids: Vec<String> = (0..nc).map(|i| format!("c{i:04}")).collect();
        let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let pooled: Vec<Vec<f64>> = treated.iter().chain(&control).cloned().collect();
        let inv = sample_covariance_inverse(&pooled);
        let mut order: Vec<usize> = (0..nt).collect();
        for i in (1..nt).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let (pairs, unmatched) = greedy_match(&treated, &control, &id_refs, &inv, &order).map_err(|e| e.to_string())?;
        ensure(unmatched.is_empty() && pairs.len() == nt, || format!("pool {pool}: {} unmatched", unmatched.len()))?;
        let mut free = vec![true; nc];
        for (step, p) in pairs.iter().enumerate() {
            ensure(p.treated == order[step], || format!("pool {pool}: visiting order broken at {step}"))?;
            let x = &treated[p.treated];
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for c in 0..nc {
                if free[c] {
                    let d = quad_distance(x, &control[c], &inv);
                    if d < best_d {
                        best = c;
                        best_d = d;
                    }
                }
            }
            ensure(free[p.control], || format!("pool {pool}: control {} reused", p.control))?;
            let chosen = quad_distance(x, &control[p.control], &inv);
            ensure(p.control == best || chosen <= best_d * (1.0 + 1e-9), || {
                format!("pool {pool} step {step}: chose {} at {chosen}, nearest {best} at {best_d}", p.control)
            })?;
            free[p.control] = false;
            pairs_checked += 1;
        }
        let all_t: Vec<&Vec<f64>> = treated.iter().collect();
        let all_c: Vec<&Vec<f64>> = control.iter().collect();
        let m_t: Vec<&Vec<f64>> = pairs.iter().map(|p| &treated[p.treated]).collect();
        let m_c: Vec<&Vec<f64>> = pairs.iter().map(|p| &control[p.control]).collect();
        for k in 0..4 {
            let before = smd(&all_t, &all_c, &treated, &control, k).abs();
            let after = smd(&m_t, &m_c, &treated, &control, k).abs();
            worst_ratio = worst_ratio.max(after / before);
            ensure(after <= before, || format!("pool {pool} (nt {nt}, nc {nc}) feature {k}: |SMD| {before:.4} -> {after:.4}"))?;
        }
    }
    Ok(format!("{pairs_checked} pairs over 100 pools match the exhaustive scan; worst |SMD| ratio {worst_ratio:.3}"))
}

// ---------------------------------------------------------------------------
// Sparse vocabulary model

fn counts(words: &[u64]) -> BTreeMap<String, u64> {
    words.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, &c)| (format!("w{i:03}"), c)).collect()
}

/// Penalized negative log-likelihood, computed directly.
fn direct_objective(c: &[f64], m: &[f64], eta: &[f64], lambda: f64) -> f64 {
    let logits: Vec<f64> = m.iter().zip(eta).map(|(a, b)| a + b).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let total: f64 = c.iter().sum();
    -c.iter().zip(&logits).map(|(a, l)| a * l).sum::<f64>()
        + total * lse
        + lambda * eta.iter().map(|e| e.abs()).sum::<f64>()
}

/// Minimum over successively finer 4-D grids centred on the incumbent.
fn grid_minimum(c: &[f64], m: &[f64], lambda: f64) -> f64 {
    let steps = 10i32;
    let mut center = [0.0f64; 4];
    let mut half = 8.0;
    let mut best = direct_objective(c, m, &center, lambda);
    for _ in 0..14 {
        let h = half / steps as f64;
        let origin = center;
        for i in -steps..=steps {
            for j in -steps..=steps {
                for k in -steps..=steps {
                    for l in -steps..=steps {
                        let eta = [
                            origin[0] + i as f64 * h,
                            origin[1] + j as f64 * h,
                            origin[2] + k as f64 * h,
                            origin[3] + l as f64 * h,
                        ];
                        let f = direct_objective(c, m, &eta, lambda);
                        if f < best {
                            best = f;
                            center = eta;
                        }
                    }
                }
            }
        }
        // Zero is always a candidate: the optimum often has exact zeros.
        for mask in 0..16 {
            let mut eta = center;
            for (d, e) in eta.iter_mut().enumerate() {
                if mask >> d & 1 == 1 {
                    *e = 0.0;
                }
            }
            let f = direct_objective(c, m, &eta, lambda);
            if f < best {
                best = f;
                center = eta;
            }
        }
        half *= 0.3;
    }
    best
}

fn sage_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut fits = 0;
    let monotone = |trace: &[f64]| trace.windows(2).all(|w| w[1] <= w[0]);
    for case in 0..12 {
        let target: Vec<u64> = (0..4).map(|_| rng.random_range(1..60)).collect();
        let background: Vec<u64> = (0..4).map(|_| rng.random_range(0..200)).collect();
        let lambda = [0.5, 1.0, 3.0][case % 3];
        let cfg = SageConfig { min_count: 1, lambda, ..Default::default() };
        let model = fit_sage(&counts(&target), &counts(&background), &cfg).map_err(|e| e.to_string())?;
        fits += 1;
        ensure(monotone(&model.objective_trace), || format!("case {case}: objective increased"))?;
        let smoothed: Vec<f64> = background.iter().map(|&b| b as f64 + cfg.smoothing).collect();
        let norm: f64 = smoothed.iter().sum();
        let m: Vec<f64> = smoothed.iter().map(|s| (s / norm).ln()).collect();
        let c: Vec<f64> = target.iter().map(|&t| t as f64).collect();
        let fitted = direct_objective(&c, &m, &model.eta, lambda);
        let grid = grid_minimum(&c, &m, lambda);
        worst = worst.max((fitted - grid).abs());
        ensure((fitted - grid).abs() <= 1e-4, || format!("case {case}: fitted {fitted} vs grid {grid}"))?;
    }

    let mut sparsity_ok = 0;
    for case in 0..30 {
        let target: Vec<u64> = (0..60).map(|_| rng.random_range(0..80)).collect();
        let background: Vec<u64> = (0..60).map(|_| rng.random_range(0..400)).collect();
        let mut nonzero = Vec::new();
        for lambda in [0.1, 1.0, 10.0] {
            let cfg = SageConfig { min_count: 1, lambda, ..Default::default() };
            let model = fit_sage(&counts(&target), &counts(&background), &cfg).map_err(|e| e.to_string())?;
            fits += 1;
            ensure(monotone(&model.objective_trace), || format!("sparsity case {case}: objective increased"))?;
            nonzero.push(model.nonzero());
        }
        ensure(nonzero.windows(2).all(|w| w[1] <= w[0]), || format!("case {case}: nonzero counts {nonzero:?}"))?;
        sparsity_ok += 1;
    }
    Ok(format!(
        "max objective gap to grid {worst:.1e}; {fits} fits with non-increasing objective; \
         sparsity monotone in {sparsity_ok}/30 corpora"
    ))
}

// ---------------------------------------------------------------------------
// Counterfactual growth

fn design_model(design: &ModelDesign, intercepts: &[f64], ty: CommunityType) -> EngagementModel {
    EngagementModel {
        kind: PostKind::Comment,
        community_type: ty,
        mode: AttributeMode::Continuous,
        beta: design.beta,
        se: [0.0; 5],
        sigma2: design.sigma2,
        u: intercepts.iter().enumerate().map(|(g, &u)| (format!("group{g:02}"), u)).collect(),
        converged: true,
        log_likelihood: 0.0,
        n_events: 0,
        unscored_replies: 0,
        vif: Vec::new(),
    }
}

fn by_group(events: Vec<FirstPostEvent>) -> BTreeMap<String, Vec<FirstPostEvent>> {
    let mut out: BTreeMap<String, Vec<FirstPostEvent>> = BTreeMap::new();
    for e in events {
        out.entry(e.community.clone()).or_default().push(e);
    }
    out
}

fn counterfactual_dominance() -> Outcome {
    let betas = published_betas();
    let hateful = ModelDesign {
        groups: 5,
        users_per_group: 2000,
        features: ReplyDistribution::hostile(),
        beta: betas.hateful.comment,
        ..ModelDesign::published(11)
    };
    let benign = ModelDesign {
        features: ReplyDistribution::benign(),
        beta: betas.non_hateful.comment,
        ..ModelDesign { seed: 12, ..hateful.clone() }
    };
    let (h_events, h_u) = model_events(&hateful).map_err(|e| e.to_string())?;
    let (b_events, b_u) = model_events(&benign).map_err(|e| e.to_string())?;
    let h_model = [design_model(&hateful, &h_u, CommunityType::Hateful)];
    let b_model = [design_model(&benign, &b_u, CommunityType::NonHateful)];
    ensure(h_model[0].nicer_dominates(), || "hateful coefficients do not imply dominance".into())?;
    let (h_groups, b_groups) = (by_group(h_events), by_group(b_events));

    let mean_increase = |models: &[EngagementModel], groups: &BTreeMap<String, Vec<FirstPostEvent>>, seed: u64| {
        let mut sum = 0.0;
        let mut dominated = true;
        for events in groups.values() {
            let d = simulate_growth(models, events, Scenario::Default, seed).map_err(|e| e.to_string())?;
            let n = simulate_growth(models, events, Scenario::Nicer, seed).map_err(|e| e.to_string())?;
            dominated &= n.final_count() >= d.final_count();
            sum += 100.0 * (n.final_count() as f64 - d.final_count() as f64) / d.final_count().max(1) as f64;
        }
        Ok::<_, String>((sum / groups.len() as f64, dominated))
    };
    let (mut dominant, mut ordered) = (0, 0);
    let (mut h_total, mut b_total) = (0.0, 0.0);
    for seed in 0..100u64 {
        let (h, dom) = mean_increase(&h_model, &h_groups, seed)?;
        let (b, _) = mean_increase(&b_model, &b_groups, seed)?;
        dominant += dom as usize;
        ordered += (h > b) as usize;
        h_total += h;
        b_total += b;
    }
    let detail = format!(
        "nicer ≥ default in {dominant}/100 seeds; hateful increase above benign in {ordered}/100 \
         (mean {:.2}% vs {:.2}%)",
        h_total / 100.0,
        b_total / 100.0
    );
    ensure(dominant == 100 && ordered == 100, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Hate-word substitution

fn substitution_shift() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in [3u64, 4, 5] {
        let params = SynthParams::balanced(seed, 6, 6, 2000);
        ensure(params.hate_word_rate == 0.08, || "unexpected injection rate".into())?;
        let (corpus, core) = run_synthetic(&params)?;
        let scorer = StubScorer::new(corpus.stub_lexicons.clone());
        let by_id: HashMap<&str, &firstreply_core::Post> = core.posts.iter().map(|p| (p.id.as_str(), p)).collect();
        let rows = substitution_sensitivity(
            &core.cohorts,
            &by_id,
            &synth_hate_lexicon(params.hate_terms),
            &scorer,
            &SentimentLexicon::builtin(),
            &mut ScoreCache::in_memory(),
        )
        .map_err(|e| e.to_string())?;
        let hateful_rows: Vec<_> = rows.iter().filter(|r| r.community_type == CommunityType::Hateful).collect();
        ensure(!hateful_rows.is_empty(), || format!("seed {seed}: no hateful study communities"))?;
        ensure(hateful_rows.iter().any(|r| r.changed > 0), || format!("seed {seed}: no reply contained a hate word"))?;

        let planted_mean = |ty: CommunityType| {
            let names: BTreeSet<&str> = corpus
                .truth
                .communities
                .iter()
                .filter(|c| c.community_type == ty)
                .map(|c| c.name.as_str())
                .collect();
            let v: Vec<&[f64; 3]> =
                corpus.truth.replies.iter().filter(|r| names.contains(r.community.as_str())).map(|r| &r.planted).collect();
            [0, 1, 2].map(|k| v.iter().map(|p| p[k]).sum::<f64>() / v.len() as f64)
        };
        let (h, n) = (planted_mean(CommunityType::Hateful), planted_mean(CommunityType::NonHateful));
        for (k, name) in ["sentiment", "toxicity", "attack"].iter().enumerate() {
            let gap = (h[k] - n[k]).abs();
            let shift = hateful_rows.iter().map(|r| r.substituted[k] - r.original[k]).sum::<f64>()
                / hateful_rows.len() as f64;
            worst = worst.max(shift.abs() / gap);
            ensure(shift.abs() < 0.2 * gap, || {
                format!("seed {seed} {name}: shift {shift:.4} vs planted gap {gap:.4}")
            })?;
        }
    }
    Ok(format!("largest shift is {:.1}% of the planted gap (3 seeds, 8% injection)", 100.0 * worst))
}

// ---------------------------------------------------------------------------
// Determinism of the command-line pipeline

fn firstreply(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_firstreply")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("`firstreply {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn compare_trees(a: &Path, b: &Path) -> Result<usize, String> {
    let (ta, tb) = (tree(a), tree(b));
    ensure(ta.keys().eq(tb.keys()), || format!("file lists differ: {:?} vs {:?}", ta.keys(), tb.keys()))?;
    for (name, bytes) in &ta {
        ensure(&tb[name] == bytes, || format!("{} differs", name.display()))?;
    }
    Ok(ta.len())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("data");
    let data_s = data.display().to_string();
    firstreply(&[
        "synth",
        "--set",
        &format!("synth_dir={data_s:?}"),
        "--set",
        "synth_hateful=4",
        "--set",
        "synth_non_hateful=4",
        "--set",
        "synth_users=2000",
    ])?;
    let config = data.join("pipeline.toml").display().to_string();
    let mut dirs = Vec::new();
    for (run, threads) in [("a", 1), ("b", 1), ("c", 3)] {
        let out = tmp.path().join(format!("out-{run}"));
        firstreply(&[
            "all",
            "-c",
            &config,
            "--set",
            &format!("output_dir={:?}", out.display().to_string()),
            "--set",
            &format!("threads={threads}"),
        ])?;
        dirs.push(out);
    }
    let files = compare_trees(&dirs[0], &dirs[1])?;
    compare_trees(&dirs[0], &dirs[2])?;
    Ok(format!("{files} files identical across two single-threaded runs and a three-thread run"))
}

// ---------------------------------------------------------------------------
// Threshold vs. continuous attributes

fn threshold_signs() -> Outcome {
    let cfg = MixedConfig::default();
    let mut agree = 0;
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let (events, _) = model_events(&ModelDesign::published(seed)).map_err(|e| e.to_string())?;
        let fit = |mode| fit_engagement_model(&events, PostKind::Comment, CommunityType::Hateful, mode, &cfg);
        match (fit(AttributeMode::Continuous), fit(AttributeMode::Threshold(0.7))) {
            (Ok(c), Ok(t)) => {
                agree += c.beta.iter().zip(&t.beta).all(|(a, b)| a.signum() == b.signum()) as usize;
            }
            (c, t) => failures.push(format!("seed {seed}: {:?} / {:?}", c.err(), t.err())),
        }
    }
    let detail = format!("all five signs agree in {agree}/100 seeds; failed fits {failures:?}");
    ensure(agree >= 90 && failures.is_empty(), || detail.clone())?;
    Ok(detail)
}
