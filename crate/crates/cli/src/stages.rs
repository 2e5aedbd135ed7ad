//! Pipeline stages. Each stage reads its predecessors' artifacts from the
//! output directory, writes its own and records them in the manifest.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use firstreply_core::corpus::{parse_archive, parse_list, read_archive, BotFilter, CommunityType, Post, PostKind};
use firstreply_core::lexicon::{aggregate_annotations, AnnotationSheet, HateLexicon, HateLexiconEntry, SageConfig};
use firstreply_core::scoring::{
    AttributeScorer, RemoteConfig, RemoteScorer, ScoreCache, SentimentLexicon, StubLexicons, StubScorer, TextScores,
};
use firstreply_core::simulate::GrowthCurve;
use firstreply_core::stats::{fit_all_models, AttributeMode, EngagementModel, ErrResult, MixedConfig, ENGAGEMENT_COLUMNS};
use firstreply_core::study::{
    self, build_cohorts, correlations, detect, err_table, events_by_type, fit_models, paired_tests, score_posts,
    simulate_study, substitution_sensitivity, CohortConfig, Cohorts, Correlation, Detection, GrowthSummary,
    PairedTest, Simulation, SubstitutionRow,
};
use firstreply_core::synth::{generate_corpus, to_archive_lines, SynthParams, HATE_REPLACEMENT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use tracing::{info, warn};

use crate::config::{PipelineConfig, ScorerKind};
use crate::error::CliError;
use crate::manifest::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Detect,
    Score,
    Cohort,
    Stats,
    Simulate,
    Synth,
    Report,
    All,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] =
        [Stage::Ingest, Stage::Detect, Stage::Score, Stage::Cohort, Stage::Stats, Stage::Simulate, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Detect => "detect",
            Stage::Score => "score",
            Stage::Cohort => "cohort",
            Stage::Stats => "stats",
            Stage::Simulate => "simulate",
            Stage::Synth => "synth",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

/// Runs one stage (or the whole pipeline for [`Stage::All`]).
pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<(), CliError> {
    match stage {
        Stage::All => Stage::PIPELINE.iter().try_for_each(|&s| run(s, cfg)),
        Stage::Ingest => ingest(cfg),
        Stage::Detect => detect_stage(cfg),
        Stage::Score => score(cfg),
        Stage::Cohort => cohort(cfg),
        Stage::Stats => stats(cfg),
        Stage::Simulate => simulate(cfg),
        Stage::Report => report(cfg),
        Stage::Synth => synth(cfg),
    }
}

fn resume(cfg: &PipelineConfig, stage: Stage) -> Result<Workspace, CliError> {
    Workspace::resume(&cfg.output_dir, &cfg.hash(), stage.name())
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    w.into_inner().expect("in-memory writer")
}

fn csv_rows<T: serde::de::DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>, CliError> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Data(format!("{name}: {e}")))
}

fn parse_posts(text: &str, name: &str) -> Result<Vec<Post>, CliError> {
    let parsed = parse_archive(text.as_bytes()).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
    if parsed.malformed() > 0 {
        return Err(CliError::Data(format!("{name}: {} malformed lines", parsed.malformed())));
    }
    Ok(parsed.posts)
}

fn load_text(ws: &mut Workspace, path: &Path) -> Result<String, CliError> {
    String::from_utf8(ws.input(path)?).map_err(|_| CliError::Data(format!("{} is not UTF-8", path.display())))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Serialize)]
struct ArchiveReport {
    path: String,
    lines: usize,
    malformed: usize,
    first_malformed_lines: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct IngestSummary {
    archives: Vec<ArchiveReport>,
    background: Vec<ArchiveReport>,
    outside_candidates: usize,
    report: study::IngestReport,
    background_posts: usize,
    communities: usize,
}

fn read_archives(ws: &mut Workspace, paths: &[std::path::PathBuf]) -> Result<(Vec<Post>, Vec<ArchiveReport>), CliError> {
    let mut posts = Vec::new();
    let mut reports = Vec::new();
    for p in paths {
        ws.input(p)?;
        let parsed = read_archive(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        if parsed.malformed() > 0 {
            warn!(path = %p.display(), malformed = parsed.malformed(), "skipping malformed archive lines");
        }
        reports.push(ArchiveReport {
            path: p.display().to_string(),
            lines: parsed.total_lines,
            malformed: parsed.malformed(),
            first_malformed_lines: parsed.malformed_lines.iter().take(10).copied().collect(),
        });
        posts.extend(parsed.posts);
    }
    Ok((posts, reports))
}

fn ingest(cfg: &PipelineConfig) -> Result<(), CliError> {
    cfg.check_inputs()?;
    let mut ws = Workspace::fresh(&cfg.output_dir, &cfg.hash(), "ingest")?;
    let (mut posts, archives) = read_archives(&mut ws, &cfg.archives)?;
    let mut outside_candidates = 0;
    if let Some(path) = &cfg.candidates {
        let keep: BTreeSet<String> = parse_list(&load_text(&mut ws, path)?).into_iter().collect();
        let before = posts.len();
        posts.retain(|p| keep.contains(&p.community));
        outside_candidates = before - posts.len();
    }
    let blocklist = match &cfg.bot_blocklist {
        Some(p) => parse_list(&load_text(&mut ws, p)?),
        None => Vec::new(),
    };
    let filter = BotFilter::new(&cfg.bot_patterns, &blocklist);
    let (posts, report) = study::ingest(posts, &filter);
    if posts.is_empty() {
        return Err(CliError::Data("no posts left after ingest".into()));
    }
    let (background, bg_reports) = read_archives(&mut ws, &cfg.background)?;
    let (background, _) = study::ingest(background, &filter);
    let communities = posts.iter().map(|p| p.community.as_str()).collect::<BTreeSet<_>>().len();
    info!(posts = posts.len(), communities, "ingested");
    ws.write("posts.ndjson", to_archive_lines(&posts).as_bytes())?;
    ws.write("background.ndjson", to_archive_lines(&background).as_bytes())?;
    ws.write_json(
        "ingest.json",
        &IngestSummary {
            archives,
            background: bg_reports,
            outside_candidates,
            report,
            background_posts: background.len(),
            communities,
        },
    )?;
    ws.commit()?;
    Ok(())
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Serialize, Deserialize)]
struct TypeRow {
    community: String,
    community_type: CommunityType,
    hate_word_hits: usize,
    vocabulary_size: usize,
    converged: bool,
}

#[derive(Debug, Serialize)]
struct AnnotationReport {
    source: &'static str,
    rated_words: usize,
    raters: usize,
    fleiss_kappa: Option<f64>,
    hate_words: BTreeSet<String>,
}

fn sentiment_lexicon(ws: &mut Workspace, cfg: &PipelineConfig) -> Result<SentimentLexicon, CliError> {
    match &cfg.sentiment_lexicon {
        Some(p) => Ok(SentimentLexicon::from_tsv(&load_text(ws, p)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            .with_builtin_rules()),
        None => Ok(SentimentLexicon::builtin()),
    }
}

fn detect_stage(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Detect)?;
    let posts = parse_posts(&ws.read_string("posts.ndjson", "ingest")?, "posts.ndjson")?;
    let background = parse_posts(&ws.read_string("background.ndjson", "ingest")?, "background.ndjson")?;
    if background.is_empty() {
        return Err(CliError::Config("detection needs a non-empty background corpus".into()));
    }
    let given_lexicon = match &cfg.hate_lexicon {
        Some(p) => Some(
            HateLexicon::from_tsv(&load_text(&mut ws, p)?)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        ),
        None => None,
    };
    let annotation = match (&cfg.annotations, &given_lexicon) {
        (Some(p), _) => {
            let sheet = AnnotationSheet::from_csv(ws.input(p)?.as_slice())
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            let summary = aggregate_annotations(&sheet);
            AnnotationReport {
                source: "annotations",
                rated_words: sheet.rows().len(),
                raters: sheet.raters(),
                fleiss_kappa: Some(summary.fleiss_kappa),
                hate_words: summary.hate_words,
            }
        }
        (None, Some(lex)) => AnnotationReport {
            source: "hate_lexicon",
            rated_words: lex.len(),
            raters: 0,
            fleiss_kappa: None,
            hate_words: lex.words().map(str::to_string).collect(),
        },
        (None, None) => return Err(CliError::Config("detection needs `annotations` or `hate_lexicon`".into())),
    };
    let lexicon = match given_lexicon {
        Some(l) => l,
        None => HateLexicon::new(
            annotation
                .hate_words
                .iter()
                .map(|w| {
                    let e = HateLexiconEntry { replacement: HATE_REPLACEMENT.into(), note: "default replacement".into() };
                    (w.clone(), e)
                })
                .collect(),
        )
        .map_err(|e| CliError::Config(e.to_string()))?,
    };
    lexicon
        .check_against_sentiment(&sentiment_lexicon(&mut ws, cfg)?)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let sage = SageConfig { lambda: cfg.sage_lambda, ..SageConfig::default() };
    let by_community = firstreply_core::corpus::partition_by_community(&posts);
    let detections = detect(&by_community, &background, &annotation.hate_words, &sage, cfg.top_k)?;
    for d in detections.iter().filter(|d| !d.converged) {
        warn!(community = %d.community, "distinctive-vocabulary fit hit its iteration cap");
    }
    let rows: Vec<TypeRow> = detections
        .iter()
        .map(|d| TypeRow {
            community: d.community.clone(),
            community_type: d.community_type(),
            hate_word_hits: d.hate_words.len(),
            vocabulary_size: d.vocabulary_size,
            converged: d.converged,
        })
        .collect();
    ws.write_json("annotation_summary.json", &annotation)?;
    ws.write("hate_lexicon.tsv", lexicon.to_tsv().as_bytes())?;
    ws.write_json("detections.json", &detections)?;
    ws.write("community_types.csv", &csv_bytes(&rows))?;
    ws.commit()?;
    Ok(())
}

// ---------------------------------------------------------------- score

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRow {
    post_id: String,
    sentiment: f64,
    toxicity: f64,
    attack: f64,
}

fn make_scorer(ws: &mut Workspace, cfg: &PipelineConfig) -> Result<Box<dyn AttributeScorer>, CliError> {
    match cfg.scorer {
        ScorerKind::Stub => {
            let lex = match &cfg.stub_lexicon {
                Some(p) => StubLexicons::from_tsv(&load_text(ws, p)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
                None => StubLexicons::builtin(),
            };
            Ok(Box::new(StubScorer::new(lex)))
        }
        ScorerKind::Remote => {
            let mut rc = RemoteConfig::new(cfg.remote_endpoint.clone());
            rc.api_key = std::env::var(&cfg.remote_api_key_env).ok();
            rc.requests_per_second = cfg.remote_rate_limit;
            rc.timeout = Duration::from_secs(cfg.remote_timeout_secs);
            Ok(Box::new(RemoteScorer::new(rc)))
        }
    }
}

fn score_cache(cfg: &PipelineConfig) -> Result<ScoreCache, CliError> {
    match &cfg.score_cache {
        Some(p) => ScoreCache::open(p).map_err(|e| CliError::Data(e.to_string())),
        None => Ok(ScoreCache::in_memory()),
    }
}

fn score(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Score)?;
    let posts = parse_posts(&ws.read_string("posts.ndjson", "ingest")?, "posts.ndjson")?;
    let scorer = make_scorer(&mut ws, cfg)?;
    let lexicon = sentiment_lexicon(&mut ws, cfg)?;
    let scores = match &cfg.score_cache {
        Some(_) => score_posts(&posts, scorer.as_ref(), &lexicon, Some(&mut score_cache(cfg)?))?,
        None => score_posts(&posts, scorer.as_ref(), &lexicon, None)?,
    };
    let mut rows: Vec<ScoreRow> = scores
        .into_iter()
        .map(|(post_id, s)| ScoreRow { post_id, sentiment: s.sentiment, toxicity: s.toxicity, attack: s.attack })
        .collect();
    rows.sort_by(|a, b| a.post_id.cmp(&b.post_id));
    info!(scored = rows.len(), "scored posts");
    ws.write("scores.csv", &csv_bytes(&rows))?;
    ws.commit()?;
    Ok(())
}

// ---------------------------------------------------------------- cohort

#[derive(Debug, Deserialize)]
struct BanRow {
    community: String,
    ban_date: i64,
}

#[derive(Debug, Serialize)]
struct ErrRow<'a> {
    community: &'a str,
    community_type: CommunityType,
    kind: PostKind,
    err: Option<f64>,
    p_treated: f64,
    p_control: f64,
    n_treated: usize,
    n_control: usize,
    engaged_treated: usize,
    engaged_control: usize,
}

#[derive(Debug, Serialize)]
struct PairRow<'a> {
    hateful: &'a str,
    control: &'a str,
    hateful_size: u64,
    control_size: u64,
    ban_date: Option<i64>,
    p90_return: i64,
    distance: f64,
}

#[derive(Debug, Serialize)]
struct BalanceRow<'a> {
    community: &'a str,
    kind: PostKind,
    feature: &'a str,
    smd_before: f64,
    smd_after: f64,
    pairs: usize,
    unmatched_treated: usize,
}

#[derive(Debug, Serialize)]
struct SkippedRow<'a> {
    community: &'a str,
    kind: Option<PostKind>,
    reason: &'a str,
}

fn cohort(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Cohort)?;
    let posts = parse_posts(&ws.read_string("posts.ndjson", "ingest")?, "posts.ndjson")?;
    let types: BTreeMap<String, CommunityType> =
        csv_rows::<TypeRow>(&ws.read("community_types.csv", "detect")?, "community_types.csv")?
            .into_iter()
            .map(|r| (r.community, r.community_type))
            .collect();
    let scores: HashMap<String, TextScores> = csv_rows::<ScoreRow>(&ws.read("scores.csv", "score")?, "scores.csv")?
        .into_iter()
        .map(|r| (r.post_id, TextScores { sentiment: r.sentiment, toxicity: r.toxicity, attack: r.attack }))
        .collect();
    let ban_dates: BTreeMap<String, i64> = match &cfg.ban_dates {
        Some(p) => csv_rows::<BanRow>(&ws.input(p)?, &p.display().to_string())?
            .into_iter()
            .map(|r| (r.community, r.ban_date))
            .collect(),
        None => BTreeMap::new(),
    };
    let cc = CohortConfig {
        candidate_min_size: cfg.candidate_min_size,
        candidate_max_size: cfg.candidate_max_size,
        pool_cap: cfg.pool_cap,
        matching_seed: cfg.matching_seed,
    };
    ws.seed("matching_seed", cfg.matching_seed);
    let by_community = firstreply_core::corpus::partition_by_community(&posts);
    let cohorts = build_cohorts(&by_community, &scores, &types, &ban_dates, &cc)?;
    if cohorts.community_pairs.is_empty() {
        warn!("no hateful community could be paired with a control");
    }
    let errs = err_table(&cohorts);
    ws.write_json("cohorts.json", &cohorts)?;
    ws.write("err_table.csv", &csv_bytes(&err_rows(&cohorts, &errs)))?;
    let pairs: Vec<PairRow> = cohorts
        .community_pairs
        .iter()
        .map(|p| PairRow {
            hateful: &p.hateful.community,
            control: &p.control.community,
            hateful_size: p.hateful.size,
            control_size: p.control.size,
            ban_date: p.hateful.ban_date,
            p90_return: p.hateful.p90_return,
            distance: p.distance,
        })
        .collect();
    ws.write("community_pairs.csv", &csv_bytes(&pairs))?;
    let balance: Vec<BalanceRow> = cohorts
        .pools
        .iter()
        .flat_map(|p| {
            p.pairs.balance.iter().map(move |b| BalanceRow {
                community: &p.community,
                kind: p.kind,
                feature: b.feature.as_str(),
                smd_before: b.before,
                smd_after: b.after,
                pairs: p.pairs.pairs.len(),
                unmatched_treated: p.pairs.unmatched_treated.len(),
            })
        })
        .collect();
    ws.write("balance.csv", &csv_bytes(&balance))?;
    let skipped: Vec<SkippedRow> = cohorts
        .skipped
        .iter()
        .map(|s| SkippedRow { community: &s.community, kind: s.kind, reason: &s.reason })
        .collect();
    ws.write("skipped.csv", &csv_bytes(&skipped))?;
    ws.commit()?;
    Ok(())
}

fn err_rows<'a>(cohorts: &'a Cohorts, errs: &'a [ErrResult]) -> Vec<ErrRow<'a>> {
    errs.iter()
        .map(|e| ErrRow {
            community: &e.community,
            community_type: cohorts.types[&e.community],
            kind: e.kind,
            err: e.err,
            p_treated: e.p_treated,
            p_control: e.p_control,
            n_treated: e.n_treated,
            n_control: e.n_control,
            engaged_treated: e.engaged_treated,
            engaged_control: e.engaged_control,
        })
        .collect()
}

// ---------------------------------------------------------------- stats

#[derive(Debug, Serialize)]
struct PairedRow<'a> {
    kind: PostKind,
    measure: &'a str,
    pairs: usize,
    mean_hateful: f64,
    mean_control: f64,
    statistic: f64,
    w_plus: f64,
    w_minus: f64,
    zeros_dropped: usize,
    p_exact: Option<f64>,
    p_normal: f64,
    degenerate: bool,
}

#[derive(Debug, Serialize)]
struct CorrelationRow<'a> {
    kind: PostKind,
    attribute: &'a str,
    n: usize,
    rho: Option<f64>,
    p_value: Option<f64>,
    note: &'a str,
}

#[derive(Debug, Serialize)]
struct CoefficientRow<'a> {
    mode: &'a str,
    kind: PostKind,
    community_type: CommunityType,
    column: &'a str,
    beta: f64,
    se: f64,
    z: f64,
    p_value: f64,
    vif: Option<f64>,
    sigma2: f64,
    converged: bool,
}

/// One threshold-mode sensitivity fit, successful or not.
#[derive(Debug, Serialize, Deserialize)]
struct SensitivityFit {
    kind: PostKind,
    community_type: CommunityType,
    model: Option<EngagementModel>,
    error: Option<String>,
}

fn normal_two_sided(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    2.0 * Normal::standard().sf(z.abs())
}

fn coefficient_rows<'a>(mode: &'a str, models: &'a [EngagementModel]) -> Vec<CoefficientRow<'a>> {
    models
        .iter()
        .flat_map(|m| {
            ENGAGEMENT_COLUMNS.iter().enumerate().map(move |(k, col)| {
                let z = if m.se[k] > 0.0 { m.beta[k] / m.se[k] } else { f64::NAN };
                CoefficientRow {
                    mode,
                    kind: m.kind,
                    community_type: m.community_type,
                    column: col,
                    beta: m.beta[k],
                    se: m.se[k],
                    z,
                    p_value: normal_two_sided(z),
                    vif: (k > 0).then(|| m.vif.get(k - 1).copied()).flatten(),
                    sigma2: m.sigma2,
                    converged: m.converged,
                }
            })
        })
        .collect()
}

fn stats(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Stats)?;
    let cohorts: Cohorts = ws.read_json("cohorts.json", "cohort")?;
    let errs = err_table(&cohorts);
    let tests = paired_tests(&cohorts, &errs);
    let corr = correlations(&cohorts, &errs);
    ws.write("paired_tests.csv", &csv_bytes(&paired_rows(&tests)))?;
    ws.write_json("paired_tests.json", &tests)?;
    ws.write("correlations.csv", &csv_bytes(&correlation_rows(&corr)))?;

    let mixed = MixedConfig::default();
    let models = match fit_models(&cohorts, AttributeMode::Continuous, &mixed) {
        Ok(m) => m,
        Err(e) => {
            ws.commit()?;
            return Err(e.into());
        }
    };
    ws.write_json("models.json", &models)?;
    let threshold = AttributeMode::Threshold(cfg.threshold);
    let mut sensitivity: Vec<SensitivityFit> = fit_all_models(&events_by_type(&cohorts), threshold, &mixed)
        .into_iter()
        .map(|(kind, community_type, r)| match r {
            Ok(m) => SensitivityFit { kind, community_type, model: Some(m), error: None },
            Err(e) => {
                warn!(%kind, %community_type, error = %e, "threshold-mode fit failed");
                SensitivityFit { kind, community_type, model: None, error: Some(e.to_string()) }
            }
        })
        .collect();
    sensitivity.sort_by_key(|s| (s.community_type, s.kind));
    ws.write_json("models_threshold.json", &sensitivity)?;
    let threshold_models: Vec<EngagementModel> = sensitivity.iter().filter_map(|s| s.model.clone()).collect();
    let mut coefs = coefficient_rows("continuous", &models);
    coefs.extend(coefficient_rows("threshold", &threshold_models));
    ws.write("model_coefficients.csv", &csv_bytes(&coefs))?;
    ws.commit()?;
    let stalled: Vec<String> = models
        .iter()
        .filter(|m| !m.converged)
        .map(|m| format!("{} {}", m.community_type, m.kind))
        .collect();
    if !stalled.is_empty() {
        return Err(CliError::Convergence(format!(
            "engagement model(s) hit the iteration cap: {}; see models.json",
            stalled.join(", ")
        )));
    }
    Ok(())
}

fn paired_rows(tests: &[PairedTest]) -> Vec<PairedRow<'_>> {
    tests
        .iter()
        .map(|t| PairedRow {
            kind: t.kind,
            measure: &t.measure,
            pairs: t.result.n + t.result.zeros_dropped,
            mean_hateful: t.mean_hateful,
            mean_control: t.mean_control,
            statistic: t.result.statistic,
            w_plus: t.result.w_plus,
            w_minus: t.result.w_minus,
            zeros_dropped: t.result.zeros_dropped,
            p_exact: t.result.p_exact,
            p_normal: t.result.p_normal,
            degenerate: t.result.degenerate,
        })
        .collect()
}

fn correlation_rows(corr: &[Correlation]) -> Vec<CorrelationRow<'_>> {
    corr.iter()
        .map(|c| CorrelationRow {
            kind: c.kind,
            attribute: &c.attribute,
            n: c.n,
            rho: c.rho,
            p_value: c.p_value,
            note: &c.note,
        })
        .collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    community: &'a str,
    scenario: &'a str,
    timestamp: i64,
    cumulative_count: u64,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    community: &'a str,
    community_type: CommunityType,
    percent_increase: Option<f64>,
    mean_default_final: f64,
    mean_nicer_final: f64,
    replications: usize,
    dominance_guaranteed: bool,
}

fn curve_rows(curves: &[GrowthCurve]) -> Vec<CurveRow<'_>> {
    curves
        .iter()
        .flat_map(|c| {
            c.points.iter().map(move |&(t, n)| CurveRow {
                community: &c.community,
                scenario: c.scenario.as_str(),
                timestamp: t,
                cumulative_count: n,
                seed: c.seed,
            })
        })
        .collect()
}

fn summary_rows(summary: &[GrowthSummary]) -> Vec<SummaryRow<'_>> {
    summary
        .iter()
        .map(|s| SummaryRow {
            community: &s.community,
            community_type: s.community_type,
            percent_increase: s.mean_percent_increase,
            mean_default_final: s.mean_default_final,
            mean_nicer_final: s.mean_nicer_final,
            replications: s.replications,
            dominance_guaranteed: s.dominance_guaranteed,
        })
        .collect()
}

fn simulate(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Simulate)?;
    let cohorts: Cohorts = ws.read_json("cohorts.json", "cohort")?;
    let models: Vec<EngagementModel> = ws.read_json("models.json", "stats")?;
    ws.seed("simulation_seed", cfg.simulation_seed);
    let sim: Simulation = simulate_study(&cohorts, &models, cfg.simulation_seed, cfg.replications)?;
    for s in sim.summary.iter().filter(|s| !s.dominance_guaranteed) {
        info!(community = %s.community, "model coefficients do not guarantee nicer ≥ default");
    }
    ws.write("growth_curves.csv", &csv_bytes(&curve_rows(&sim.curves)))?;
    ws.write("growth_summary.csv", &csv_bytes(&summary_rows(&sim.summary)))?;
    ws.write("replications.csv", &csv_bytes(&sim.replications))?;
    ws.write_json("growth_summary.json", &sim.summary)?;
    ws.commit()?;
    Ok(())
}

// ---------------------------------------------------------------- report

#[derive(Debug, Serialize)]
struct SubstitutionCsv<'a> {
    community: &'a str,
    community_type: CommunityType,
    replies: usize,
    changed: usize,
    sentiment: f64,
    sentiment_substituted: f64,
    toxicity: f64,
    toxicity_substituted: f64,
    attack: f64,
    attack_substituted: f64,
}

fn report(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut ws = resume(cfg, Stage::Report)?;
    let posts = parse_posts(&ws.read_string("posts.ndjson", "ingest")?, "posts.ndjson")?;
    let lexicon = HateLexicon::from_tsv(&ws.read_string("hate_lexicon.tsv", "detect")?)
        .map_err(|e| CliError::Data(format!("hate_lexicon.tsv: {e}")))?;
    let detections: Vec<Detection> = ws.read_json("detections.json", "detect")?;
    let cohorts: Cohorts = ws.read_json("cohorts.json", "cohort")?;
    let tests: Vec<PairedTest> = ws.read_json("paired_tests.json", "stats")?;
    let models: Vec<EngagementModel> = ws.read_json("models.json", "stats")?;
    let sensitivity: Vec<SensitivityFit> = ws.read_json("models_threshold.json", "stats")?;
    let summary: Vec<GrowthSummary> = ws.read_json("growth_summary.json", "simulate")?;

    let scorer = make_scorer(&mut ws, cfg)?;
    let sentiment = sentiment_lexicon(&mut ws, cfg)?;
    let by_id: HashMap<&str, &Post> = posts.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut cache = score_cache(cfg)?;
    let rows = substitution_sensitivity(&cohorts, &by_id, &lexicon, scorer.as_ref(), &sentiment, &mut cache)?;
    let csv_rows: Vec<SubstitutionCsv> = rows
        .iter()
        .map(|r| SubstitutionCsv {
            community: &r.community,
            community_type: r.community_type,
            replies: r.replies,
            changed: r.changed,
            sentiment: r.original[0],
            sentiment_substituted: r.substituted[0],
            toxicity: r.original[1],
            toxicity_substituted: r.substituted[1],
            attack: r.original[2],
            attack_substituted: r.substituted[2],
        })
        .collect();
    ws.write("substitution.csv", &csv_bytes(&csv_rows))?;
    let errs = err_table(&cohorts);
    let md = render_report(&detections, &cohorts, &errs, &tests, &models, &sensitivity, &summary, &rows);
    ws.write("report.md", md.as_bytes())?;
    ws.commit()?;
    Ok(())
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "—".to_string(), |v| format!("{v:.digits$}"))
}

#[allow(clippy::too_many_arguments)]
fn render_report(
    detections: &[Detection],
    cohorts: &Cohorts,
    errs: &[ErrResult],
    tests: &[PairedTest],
    models: &[EngagementModel],
    sensitivity: &[SensitivityFit],
    summary: &[GrowthSummary],
    substitution: &[SubstitutionRow],
) -> String {
    let mut s = String::from("# Newcomer engagement report\n\n");
    let hateful = detections.iter().filter(|d| d.hateful).count();
    let _ = writeln!(s, "## Detection\n\n{} communities, {} classified hateful.\n", detections.len(), hateful);
    s.push_str("| community | hate words in top list | hateful |\n|---|---:|---|\n");
    for d in detections {
        let _ = writeln!(s, "| {} | {} | {} |", d.community, d.hate_words.len(), d.hateful);
    }

    s.push_str("\n## Matched community pairs\n\n| hateful | control | distance |\n|---|---|---:|\n");
    for p in &cohorts.community_pairs {
        let _ = writeln!(s, "| {} | {} | {:.3} |", p.hateful.community, p.control.community, p.distance);
    }
    if !cohorts.skipped.is_empty() {
        s.push_str("\nLeft out:\n\n");
        for k in &cohorts.skipped {
            let kind = k.kind.map_or(String::new(), |k| format!(" ({k})"));
            let _ = writeln!(s, "- {}{}: {}", k.community, kind, k.reason);
        }
    }

    s.push_str("\n## Engagement risk ratio\n\n| community | type | kind | ERR | treated | control |\n|---|---|---|---:|---:|---:|\n");
    for e in errs {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {}/{} | {}/{} |",
            e.community,
            cohorts.types[&e.community],
            e.kind,
            opt(e.err, 3),
            e.engaged_treated,
            e.n_treated,
            e.engaged_control,
            e.n_control
        );
    }

    s.push_str("\n## Paired tests (hateful − control)\n\n| kind | measure | mean hateful | mean control | T | p exact | p normal |\n|---|---|---:|---:|---:|---:|---:|\n");
    for t in tests {
        let _ = writeln!(
            s,
            "| {} | {} | {:.3} | {:.3} | {} | {} | {:.4} |",
            t.kind,
            t.measure,
            t.mean_hateful,
            t.mean_control,
            t.result.statistic,
            opt(t.result.p_exact, 4),
            t.result.p_normal
        );
    }

    s.push_str("\n## Engagement models\n\n| type | kind | mode | ");
    s.push_str(&ENGAGEMENT_COLUMNS.join(" | "));
    s.push_str(" | σ² | converged |\n|---|---|---|");
    s.push_str(&"---:|".repeat(ENGAGEMENT_COLUMNS.len() + 1));
    s.push_str("---|\n");
    let threshold: Vec<&EngagementModel> = sensitivity.iter().filter_map(|f| f.model.as_ref()).collect();
    for (mode, m) in models.iter().map(|m| ("continuous", m)).chain(threshold.into_iter().map(|m| ("threshold", m))) {
        let _ = write!(s, "| {} | {} | {} |", m.community_type, m.kind, mode);
        for k in 0..5 {
            let _ = write!(s, " {:.3} ± {:.3} |", m.beta[k], m.se[k]);
        }
        let _ = writeln!(s, " {:.3} | {} |", m.sigma2, m.converged);
    }
    for f in sensitivity.iter().filter(|f| f.model.is_none()) {
        let _ = writeln!(
            s,
            "\nThreshold-mode {} {} fit failed: {}",
            f.community_type,
            f.kind,
            f.error.as_deref().unwrap_or("unknown error")
        );
    }

    s.push_str("\n## Simulated growth (nicer vs. default replies)\n\n| community | type | % increase | dominance guaranteed |\n|---|---|---:|---|\n");
    for g in summary {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            g.community,
            g.community_type,
            opt(g.mean_percent_increase, 2),
            g.dominance_guaranteed
        );
    }

    s.push_str("\n## Hate-word substitution\n\n| community | type | replies changed | Δ sentiment | Δ toxicity | Δ attack |\n|---|---|---:|---:|---:|---:|\n");
    for r in substitution {
        let d = |k: usize| r.substituted[k] - r.original[k];
        let _ = writeln!(
            s,
            "| {} | {} | {}/{} | {:+.4} | {:+.4} | {:+.4} |",
            r.community,
            r.community_type,
            r.changed,
            r.replies,
            d(0),
            d(1),
            d(2)
        );
    }
    s
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Serialize)]
struct SynthBan<'a> {
    community: &'a str,
    ban_date: i64,
}

/// Writes a synthetic corpus with its truth ledger, lexicons and a ready
/// `pipeline.toml` whose output directory is `out` next to it.
fn synth(cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut params = SynthParams::balanced(cfg.synth_seed, cfg.synth_hateful, cfg.synth_non_hateful, cfg.synth_users);
    params.hate_word_rate = cfg.synth_hate_word_rate;
    let corpus = generate_corpus(&params)?;
    let mut ws = Workspace::fresh(&cfg.synth_dir, &cfg.hash(), "synth")?;
    ws.seed("synth_seed", cfg.synth_seed);
    ws.write("archive.ndjson", to_archive_lines(&corpus.posts).as_bytes())?;
    ws.write("background.ndjson", to_archive_lines(&corpus.background).as_bytes())?;
    let bans: Vec<SynthBan> = params
        .communities
        .iter()
        .filter_map(|c| c.ban_date.map(|b| SynthBan { community: &c.name, ban_date: b }))
        .collect();
    ws.write("ban_dates.csv", &csv_bytes(&bans))?;
    let mut sheet = csv::Writer::from_writer(Vec::new());
    let raters = corpus.annotations.first().map_or(0, |r| r.1.len());
    let mut header = vec!["word".to_string()];
    header.extend((1..=raters).map(|i| format!("rater{i}")));
    sheet.write_record(&header).expect("in-memory writer");
    for (w, r) in &corpus.annotations {
        let mut rec = vec![w.clone()];
        rec.extend(r.iter().map(|x| x.to_string()));
        sheet.write_record(&rec).expect("in-memory writer");
    }
    ws.write("annotations.csv", &sheet.into_inner().expect("in-memory writer"))?;
    ws.write("stub_lexicon.tsv", corpus.stub_lexicons.to_tsv().as_bytes())?;
    ws.write("hate_lexicon.tsv", corpus.hate_lexicon.to_tsv().as_bytes())?;
    ws.write_json("truth.json", &corpus.truth)?;
    let toml = format!(
        "# Pipeline config for the synthetic corpus in this directory.\n\
         output_dir = \"out\"\n\
         archives = [\"archive.ndjson\"]\n\
         background = [\"background.ndjson\"]\n\
         ban_dates = \"ban_dates.csv\"\n\
         annotations = \"annotations.csv\"\n\
         hate_lexicon = \"hate_lexicon.tsv\"\n\
         stub_lexicon = \"stub_lexicon.tsv\"\n\
         bot_patterns = [\"bot\"]\n\
         scorer = \"stub\"\n\
         # Synthetic communities are far smaller than the default size floor.\n\
         candidate_min_size = 0\n\
         matching_seed = {}\n\
         simulation_seed = {}\n\
         replications = {}\n\
         threshold = {:?}\n",
        cfg.matching_seed, cfg.simulation_seed, cfg.replications, cfg.threshold
    );
    ws.write("pipeline.toml", toml.as_bytes())?;
    info!(posts = corpus.posts.len(), dir = %cfg.synth_dir.display(), "synthetic corpus written");
    ws.commit()?;
    Ok(())
}
