//! End-to-end study orchestration on in-memory data: ingest, detection of
//! hateful communities, scoring, cohort construction, statistics,
//! simulation and the substitution-sensitivity comparison. The command-line
//! tool persists each stage's output; tests call these functions directly.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::cohort::{
    apply_simulated_ban, community_profile, filter_candidates, match_communities, match_users, CohortError,
    CommunityPair, CommunityProfile, Feature, MatchedPairs, DEFAULT_MAX_CANDIDATE_SIZE, DEFAULT_MIN_CANDIDATE_SIZE,
    DEFAULT_POOL_CAP,
};
use crate::corpus::{
    canonical_sort, dedup_posts, extract_all, filter_bots, partition_by_community, BotFilter, CommunityType,
    CorpusError, ExtractReport, FirstPostEvent, Post, PostKind,
};
use crate::lexicon::{
    classify_community, count_words, fit_sage, substitute_hate_words, top_distinctive_words, HateLexicon, LexiconError,
    SageConfig, DEFAULT_TOP_K,
};
use crate::scoring::{score_texts, AttributeScorer, ScoreCache, ScoreError, SentimentAnalyzer, SentimentLexicon, TextScores};
use crate::seeding::derive_seed;
use crate::simulate::{replicate, simulate_growth, GrowthCurve, Replication, Scenario, SimulateError};
use crate::stats::{
    err_matched, fit_all_models, spearman, wilcoxon_signed_rank, AttributeMode, EngagementModel, ErrResult,
    MixedConfig, StatsError, WilcoxonResult,
};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Simulate(#[from] SimulateError),
    #[error("no posts in the archive")]
    EmptyArchive,
    #[error("{kind} model for {community_type} communities failed: {source}")]
    Model { kind: PostKind, community_type: CommunityType, source: StatsError },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub posts: usize,
    pub duplicates: usize,
    pub bot_posts: usize,
}

/// Deduplicates, removes bot accounts and sorts canonically.
pub fn ingest(posts: Vec<Post>, filter: &BotFilter) -> (Vec<Post>, IngestReport) {
    let (posts, duplicates) = dedup_posts(posts);
    let before = posts.len();
    let mut posts = filter_bots(posts, filter);
    let bot_posts = before - posts.len();
    canonical_sort(&mut posts);
    let report = IngestReport { posts: posts.len(), duplicates, bot_posts };
    (posts, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub community: String,
    pub vocabulary_size: usize,
    pub converged: bool,
    /// Most distinctive words, strongest first.
    pub top_words: Vec<String>,
    /// Annotated hate words among `top_words`.
    pub hate_words: Vec<String>,
    pub hateful: bool,
}

impl Detection {
    pub fn community_type(&self) -> CommunityType {
        if self.hateful {
            CommunityType::Hateful
        } else {
            CommunityType::NonHateful
        }
    }
}

/// Fits a distinctive-vocabulary model per community against the
/// background corpus and classifies communities by how many annotated hate
/// words reach the top `top_k`.
pub fn detect(
    by_community: &BTreeMap<String, Vec<Post>>,
    background: &[Post],
    hate_words: &BTreeSet<String>,
    sage: &SageConfig,
    top_k: usize,
) -> Result<Vec<Detection>, StudyError> {
    let bg = count_words(background.iter().filter(|p| !p.is_deleted()).map(|p| p.body.as_str()));
    by_community
        .par_iter()
        .map(|(community, posts)| {
            let target = count_words(posts.iter().filter(|p| !p.is_deleted()).map(|p| p.body.as_str()));
            let model = fit_sage(&target, &bg, sage)?;
            let top_words = top_distinctive_words(&model, top_k);
            let hits: Vec<String> = top_words.iter().filter(|w| hate_words.contains(*w)).cloned().collect();
            Ok(Detection {
                community: community.clone(),
                vocabulary_size: model.vocabulary.len(),
                converged: model.converged,
                hateful: classify_community(hits.len()),
                top_words,
                hate_words: hits,
            })
        })
        .collect()
}

/// Scores every non-deleted post body and returns scores keyed by post id.
/// With a cache, previously scored texts are reused and new scores are
/// recorded; without one, each distinct text is scored directly.
pub fn score_posts(
    posts: &[Post],
    scorer: &dyn AttributeScorer,
    lexicon: &SentimentLexicon,
    cache: Option<&mut ScoreCache>,
) -> Result<HashMap<String, TextScores>, StudyError> {
    let live: Vec<&Post> = posts.iter().filter(|p| !p.is_deleted()).collect();
    if let Some(cache) = cache {
        score_texts(live.iter().map(|p| p.body.as_str()), scorer, lexicon, cache)?;
        return Ok(live.par_iter().filter_map(|p| cache.get(&p.body).map(|s| (p.id.clone(), s))).collect());
    }
    let mut slot: FxHashMap<&str, usize> = FxHashMap::default();
    let mut unique: Vec<String> = Vec::new();
    for p in &live {
        slot.entry(p.body.as_str()).or_insert_with(|| {
            unique.push(p.body.clone());
            unique.len() - 1
        });
    }
    let analyzer = SentimentAnalyzer::new(lexicon);
    let mut scored = Vec::with_capacity(unique.len());
    for (text, r) in unique.iter().zip(scorer.score_batch(&unique)) {
        let a = r?;
        scored.push(TextScores { sentiment: analyzer.score(text), toxicity: a.toxicity, attack: a.attack });
    }
    Ok(live.iter().map(|p| (p.id.clone(), scored[slot[p.body.as_str()]])).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub candidate_min_size: u64,
    pub candidate_max_size: u64,
    pub pool_cap: usize,
    pub matching_seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            candidate_min_size: DEFAULT_MIN_CANDIDATE_SIZE,
            candidate_max_size: DEFAULT_MAX_CANDIDATE_SIZE,
            pool_cap: DEFAULT_POOL_CAP,
            matching_seed: 0,
        }
    }
}

/// A matched pool of one community and post kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMatch {
    pub community: String,
    pub kind: PostKind,
    pub pairs: MatchedPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub community: String,
    pub kind: Option<PostKind>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohorts {
    pub profiles: Vec<CommunityProfile>,
    pub community_pairs: Vec<CommunityPair>,
    /// Study communities (hateful with a ban date, plus their controls).
    pub types: BTreeMap<String, CommunityType>,
    /// Events after the ban-window correction, keyed by community.
    pub events: BTreeMap<String, Vec<FirstPostEvent>>,
    pub pools: Vec<PoolMatch>,
    pub skipped: Vec<Skipped>,
    pub extraction: BTreeMap<String, ExtractReport>,
}

/// Builds event pools, matches communities and users, and applies the real
/// or simulated ban window to every study community.
///
/// Hateful communities need a ban date; those without one are reported and
/// left out. Every hateful community's events are cut at its own ban date
/// and p90 return window; each matched control is cut at its partner's.
pub fn build_cohorts(
    by_community: &BTreeMap<String, Vec<Post>>,
    scores: &HashMap<String, TextScores>,
    types: &BTreeMap<String, CommunityType>,
    ban_dates: &BTreeMap<String, i64>,
    cfg: &CohortConfig,
) -> Result<Cohorts, StudyError> {
    let end_of_data = by_community.values().flatten().map(|p| p.created_at).max().ok_or(StudyError::EmptyArchive)?;
    let mut skipped = Vec::new();
    let mut cutoffs = BTreeMap::new();
    for (c, t) in types {
        if !by_community.contains_key(c) {
            continue;
        }
        match (t, ban_dates.get(c)) {
            (CommunityType::Hateful, Some(&b)) => {
                cutoffs.insert(c.clone(), b);
            }
            (CommunityType::Hateful, None) => {
                warn!(community = %c, "hateful community without a ban date is left out");
                skipped.push(Skipped { community: c.clone(), kind: None, reason: "no ban date".into() });
            }
            (CommunityType::NonHateful, _) => {
                cutoffs.insert(c.clone(), end_of_data);
            }
        }
    }
    let extracted = extract_all(by_community, &cutoffs, scores)?;

    let mut hateful = Vec::new();
    let mut candidates = Vec::new();
    for (c, (events, _)) in &extracted {
        let ty = types[c];
        let ban = (ty == CommunityType::Hateful).then(|| cutoffs[c]);
        match community_profile(c, events, &by_community[c], ban) {
            Ok(p) if ty == CommunityType::Hateful => hateful.push(p),
            Ok(p) => candidates.push(p),
            Err(e) => skipped.push(Skipped { community: c.clone(), kind: None, reason: e.to_string() }),
        }
    }
    let eligible = filter_candidates(&candidates, cfg.candidate_min_size, cfg.candidate_max_size);
    let community_pairs = match_communities(&hateful, &eligible)?;

    let mut study_types = BTreeMap::new();
    let mut events = BTreeMap::new();
    for pair in &community_pairs {
        let ban = pair.hateful.ban_date.expect("hateful profiles carry a ban date");
        let p90 = pair.hateful.p90_return;
        for (c, ty) in [(&pair.hateful.community, CommunityType::Hateful), (&pair.control.community, CommunityType::NonHateful)] {
            let windowed = apply_simulated_ban(&extracted[c].0, &by_community[c], ban, p90);
            study_types.insert(c.clone(), ty);
            events.insert(c.clone(), windowed);
        }
    }

    let jobs: Vec<(&String, PostKind)> =
        events.keys().flat_map(|c| PostKind::ALL.iter().map(move |&k| (c, k))).collect();
    let results: Vec<(String, PostKind, Result<MatchedPairs, CohortError>)> = jobs
        .into_par_iter()
        .map(|(c, kind)| {
            let pool: Vec<&FirstPostEvent> =
                events[c].iter().filter(|e| e.kind == kind && e.has_complete_covariates()).collect();
            let treated: Vec<FirstPostEvent> = pool.iter().filter(|e| e.treated).map(|e| (*e).clone()).collect();
            let control: Vec<FirstPostEvent> = pool.iter().filter(|e| !e.treated).map(|e| (*e).clone()).collect();
            let seed = derive_seed(cfg.matching_seed, &["match", c, kind.as_str()]);
            (c.clone(), kind, match_users(&treated, &control, &Feature::for_kind(kind), cfg.pool_cap, seed))
        })
        .collect();
    let mut pools = Vec::new();
    for (community, kind, r) in results {
        match r {
            Ok(pairs) => pools.push(PoolMatch { community, kind, pairs }),
            Err(CohortError::TooFewEvents { treated, control }) => skipped.push(Skipped {
                community,
                kind: Some(kind),
                reason: format!("too few events to match ({treated} treated, {control} control)"),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let mut profiles: Vec<CommunityProfile> = hateful.into_iter().chain(candidates).collect();
    profiles.sort_by(|a, b| a.community.cmp(&b.community));
    skipped.sort_by(|a, b| (&a.community, a.kind).cmp(&(&b.community, b.kind)));

    Ok(Cohorts {
        profiles,
        community_pairs,
        types: study_types,
        events,
        pools,
        skipped,
        extraction: extracted.into_iter().map(|(c, (_, r))| (c, r)).collect(),
    })
}

/// ERR of every matched pool.
pub fn err_table(cohorts: &Cohorts) -> Vec<ErrResult> {
    cohorts.pools.iter().filter_map(|p| err_matched(&p.community, p.kind, &p.pairs).ok()).collect()
}

/// Mean scored first-reply features (sentiment, toxicity, attack) of the
/// treated members of a matched pool; `None` without scored replies.
pub fn mean_reply_features(pool: &MatchedPairs) -> Option<[f64; 3]> {
    let mut sums = [0.0; 3];
    let mut n = 0usize;
    for p in &pool.pairs {
        if let Some(r) = p.treated.first_reply.as_ref().filter(|r| r.scored) {
            sums[0] += r.sentiment;
            sums[1] += r.toxicity;
            sums[2] += r.attack;
            n += 1;
        }
    }
    (n > 0).then(|| sums.map(|s| s / n as f64))
}

/// A paired comparison of hateful communities against their controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub kind: PostKind,
    /// `err`, `sentiment`, `toxicity` or `attack`.
    pub measure: String,
    pub mean_hateful: f64,
    pub mean_control: f64,
    pub result: WilcoxonResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub kind: PostKind,
    pub attribute: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub note: String,
}

const MEASURES: [&str; 4] = ["err", "sentiment", "toxicity", "attack"];

/// Per-pool measures used by the paired tests and correlations.
fn pool_measures(cohorts: &Cohorts, errs: &[ErrResult]) -> BTreeMap<(String, PostKind), [Option<f64>; 4]> {
    let err_of: BTreeMap<(&str, PostKind), Option<f64>> =
        errs.iter().map(|e| ((e.community.as_str(), e.kind), e.err)).collect();
    cohorts
        .pools
        .iter()
        .map(|p| {
            let e = err_of.get(&(p.community.as_str(), p.kind)).copied().flatten();
            let f = mean_reply_features(&p.pairs);
            ((p.community.clone(), p.kind), [e, f.map(|f| f[0]), f.map(|f| f[1]), f.map(|f| f[2])])
        })
        .collect()
}

/// Wilcoxon signed-rank tests of hateful minus matched-control ERR and
/// mean reply attributes, per post kind. Pairs where either side is
/// undefined are left out.
pub fn paired_tests(cohorts: &Cohorts, errs: &[ErrResult]) -> Vec<PairedTest> {
    let measures = pool_measures(cohorts, errs);
    let mut out = Vec::new();
    for kind in PostKind::ALL {
        for (m, name) in MEASURES.iter().enumerate() {
            let mut h = Vec::new();
            let mut c = Vec::new();
            for pair in &cohorts.community_pairs {
                let get = |name: &str| measures.get(&(name.to_string(), kind)).and_then(|v| v[m]);
                if let (Some(a), Some(b)) = (get(&pair.hateful.community), get(&pair.control.community)) {
                    h.push(a);
                    c.push(b);
                }
            }
            if h.is_empty() {
                continue;
            }
            let diffs: Vec<f64> = h.iter().zip(&c).map(|(a, b)| a - b).collect();
            out.push(PairedTest {
                kind,
                measure: name.to_string(),
                mean_hateful: h.iter().sum::<f64>() / h.len() as f64,
                mean_control: c.iter().sum::<f64>() / c.len() as f64,
                result: wilcoxon_signed_rank(&diffs),
            });
        }
    }
    out
}

/// Spearman correlation of community ERR with mean reply attributes across
/// all study communities, per post kind.
pub fn correlations(cohorts: &Cohorts, errs: &[ErrResult]) -> Vec<Correlation> {
    let measures = pool_measures(cohorts, errs);
    let mut out = Vec::new();
    for kind in PostKind::ALL {
        for (m, name) in MEASURES.iter().enumerate().skip(1) {
            let (x, y): (Vec<f64>, Vec<f64>) = measures
                .iter()
                .filter(|((_, k), _)| *k == kind)
                .filter_map(|(_, v)| Some((v[m]?, v[0]?)))
                .unzip();
            let (rho, p_value, note) = match spearman(&x, &y) {
                Ok(r) => (Some(r.statistic), Some(r.p_value), r.method),
                Err(e) => (None, None, e.to_string()),
            };
            out.push(Correlation { kind, attribute: name.to_string(), n: x.len(), rho, p_value, note });
        }
    }
    out
}

/// Study events grouped by community type.
pub fn events_by_type(cohorts: &Cohorts) -> BTreeMap<CommunityType, Vec<FirstPostEvent>> {
    let mut out: BTreeMap<CommunityType, Vec<FirstPostEvent>> = BTreeMap::new();
    for (c, events) in &cohorts.events {
        out.entry(cohorts.types[c]).or_default().extend(events.iter().cloned());
    }
    out
}

/// Fits the four engagement models; any failure is returned as an error.
pub fn fit_models(
    cohorts: &Cohorts,
    mode: AttributeMode,
    cfg: &MixedConfig,
) -> Result<Vec<EngagementModel>, StudyError> {
    let mut out = Vec::new();
    for (kind, community_type, r) in fit_all_models(&events_by_type(cohorts), mode, cfg) {
        out.push(r.map_err(|source| StudyError::Model { kind, community_type, source })?);
    }
    out.sort_by_key(|m| (m.community_type, m.kind));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthSummary {
    pub community: String,
    pub community_type: CommunityType,
    pub replications: usize,
    pub mean_default_final: f64,
    pub mean_nicer_final: f64,
    /// Mean of the defined per-replication percent increases.
    pub mean_percent_increase: Option<f64>,
    /// Whether the community's models guarantee nicer ≥ default.
    pub dominance_guaranteed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    /// Curves of the first replication, both scenarios, per community.
    pub curves: Vec<GrowthCurve>,
    pub replications: Vec<Replication>,
    pub summary: Vec<GrowthSummary>,
}

/// Replication seeds derived from a base seed.
pub fn replication_seeds(seed: u64, replications: usize) -> Vec<u64> {
    (0..replications).map(|i| derive_seed(seed, &["replication", &i.to_string()])).collect()
}

/// Simulates every study community under both scenarios.
pub fn simulate_study(
    cohorts: &Cohorts,
    models: &[EngagementModel],
    seed: u64,
    replications: usize,
) -> Result<Simulation, StudyError> {
    let seeds = replication_seeds(seed, replications);
    let results: Vec<Result<(Vec<GrowthCurve>, Vec<Replication>, GrowthSummary), StudyError>> = cohorts
        .events
        .par_iter()
        .map(|(c, events)| {
            let ty = cohorts.types[c];
            let own: Vec<EngagementModel> = models.iter().filter(|m| m.community_type == ty).cloned().collect();
            let reps = replicate(&own, events, &seeds)?;
            let mut curves = Vec::new();
            if let Some(&first) = seeds.first() {
                for s in Scenario::ALL {
                    let mut curve = simulate_growth(&own, events, s, first)?;
                    curve.community = c.clone();
                    curves.push(curve);
                }
            }
            let n = reps.len().max(1) as f64;
            let defined: Vec<f64> = reps.iter().filter_map(|r| r.percent_increase).collect();
            let summary = GrowthSummary {
                community: c.clone(),
                community_type: ty,
                replications: reps.len(),
                mean_default_final: reps.iter().map(|r| r.default_final as f64).sum::<f64>() / n,
                mean_nicer_final: reps.iter().map(|r| r.nicer_final as f64).sum::<f64>() / n,
                mean_percent_increase: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
                dominance_guaranteed: own.iter().all(EngagementModel::nicer_dominates),
            };
            let reps = reps.into_iter().map(|mut r| {
                r.community = c.clone();
                r
            });
            Ok((curves, reps.collect(), summary))
        })
        .collect();
    let mut sim = Simulation { curves: Vec::new(), replications: Vec::new(), summary: Vec::new() };
    for r in results {
        let (c, reps, s) = r?;
        sim.curves.extend(c);
        sim.replications.extend(reps);
        sim.summary.push(s);
    }
    Ok(sim)
}

/// Mean first-reply scores of one community before and after replacing
/// hate words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionRow {
    pub community: String,
    pub community_type: CommunityType,
    pub replies: usize,
    /// Replies whose text contained at least one hate word.
    pub changed: usize,
    pub original: [f64; 3],
    pub substituted: [f64; 3],
}

/// Rescores every scored first reply of the study communities with hate
/// words replaced by their neutral substitutes.
pub fn substitution_sensitivity(
    cohorts: &Cohorts,
    posts: &HashMap<&str, &Post>,
    hate: &HateLexicon,
    scorer: &dyn AttributeScorer,
    lexicon: &SentimentLexicon,
    cache: &mut ScoreCache,
) -> Result<Vec<SubstitutionRow>, StudyError> {
    let mut per_community: Vec<(String, CommunityType, Vec<(String, String)>)> = Vec::new();
    for (c, events) in &cohorts.events {
        let mut texts = Vec::new();
        for e in events {
            let Some(r) = e.first_reply.as_ref().filter(|r| r.scored) else { continue };
            let Some(p) = posts.get(r.post_id.as_str()) else { continue };
            texts.push((p.body.clone(), substitute_hate_words(&p.body, hate)));
        }
        per_community.push((c.clone(), cohorts.types[c], texts));
    }
    score_texts(
        per_community.iter().flat_map(|(_, _, t)| t.iter().flat_map(|(a, b)| [a.as_str(), b.as_str()])),
        scorer,
        lexicon,
        cache,
    )?;
    let mut out = Vec::new();
    for (community, community_type, texts) in per_community {
        let mut original = [0.0; 3];
        let mut substituted = [0.0; 3];
        let mut changed = 0;
        for (a, b) in &texts {
            let (sa, sb) = (cache.get(a).unwrap_or_default(), cache.get(b).unwrap_or_default());
            changed += (a != b) as usize;
            for (acc, s) in [(&mut original, sa), (&mut substituted, sb)] {
                acc[0] += s.sentiment;
                acc[1] += s.toxicity;
                acc[2] += s.attack;
            }
        }
        let n = texts.len().max(1) as f64;
        out.push(SubstitutionRow {
            community,
            community_type,
            replies: texts.len(),
            changed,
            original: original.map(|v| v / n),
            substituted: substituted.map(|v| v / n),
        });
    }
    Ok(out)
}

/// Inputs of an in-memory run.
pub struct StudyInputs<'a> {
    pub posts: Vec<Post>,
    pub background: Vec<Post>,
    pub bot_filter: BotFilter,
    pub hate_words: BTreeSet<String>,
    pub ban_dates: BTreeMap<String, i64>,
    pub scorer: &'a dyn AttributeScorer,
    pub lexicon: SentimentLexicon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sage: SageConfig,
    pub top_k: usize,
    pub cohort: CohortConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { sage: SageConfig::default(), top_k: DEFAULT_TOP_K, cohort: CohortConfig::default() }
    }
}

/// Outputs up to the ERR table.
#[derive(Debug, Clone)]
pub struct StudyCore {
    pub ingest: IngestReport,
    pub detections: Vec<Detection>,
    pub posts: Vec<Post>,
    pub scores: HashMap<String, TextScores>,
    pub cohorts: Cohorts,
    pub errs: Vec<ErrResult>,
}

impl StudyCore {
    /// Mean defined ERR of one community type and post kind.
    pub fn mean_err(&self, ty: CommunityType, kind: PostKind) -> Option<f64> {
        let v: Vec<f64> = self
            .errs
            .iter()
            .filter(|e| e.kind == kind && self.cohorts.types.get(&e.community) == Some(&ty))
            .filter_map(|e| e.err)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Ingest, detection, scoring, cohorts and ERR.
pub fn run_core(inputs: StudyInputs<'_>, cfg: &StudyConfig) -> Result<StudyCore, StudyError> {
    let (posts, ingest) = ingest(inputs.posts, &inputs.bot_filter);
    if posts.is_empty() {
        return Err(StudyError::EmptyArchive);
    }
    let by_community = partition_by_community(&posts);
    let detections = detect(&by_community, &inputs.background, &inputs.hate_words, &cfg.sage, cfg.top_k)?;
    let types: BTreeMap<String, CommunityType> =
        detections.iter().map(|d| (d.community.clone(), d.community_type())).collect();
    let scores = score_posts(&posts, inputs.scorer, &inputs.lexicon, None)?;
    let cohorts = build_cohorts(&by_community, &scores, &types, &inputs.ban_dates, &cfg.cohort)?;
    let errs = err_table(&cohorts);
    Ok(StudyCore { ingest, detections, posts, scores, cohorts, errs })
}
