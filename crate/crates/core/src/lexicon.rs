//! Community-distinctive vocabulary (SAGE), annotation aggregation, hateful
//! community classification and neutral-synonym substitution.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::SentimentLexicon;
use crate::text;

/// A word is hateful when its annotation total reaches this value.
pub const HATE_WORD_MIN_TOTAL: u32 = 4;
/// A community is hateful when it has strictly more hate words than this.
pub const HATEFUL_COMMUNITY_MIN_EXCLUSIVE: usize = 5;
/// Number of distinctive words inspected per community.
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{0} corpus is empty")]
    EmptyCorpus(&'static str),
    #[error("no word reaches the minimum count of {0} in the target corpus")]
    EmptyVocabulary(u64),
    #[error("regularization strength must be finite and nonnegative, got {0}")]
    InvalidLambda(f64),
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { iteration: usize },
    #[error("annotation sheet: {0}")]
    Annotation(String),
    #[error("hate lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("replacement for `{word}` contains `{token}`, which is in the {which} lexicon")]
    ReplacementConflict {
        word: String,
        token: String,
        which: &'static str,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Word counts with the tokenization used for distinctive-vocabulary fits.
pub fn count_words<'a, I: IntoIterator<Item = &'a str>>(texts: I) -> BTreeMap<String, u64> {
    let mut counts: FxHashMap<Cow<'a, str>, u64> = FxHashMap::default();
    for t in texts {
        for w in text::vocab_token_refs(t) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts.into_iter().map(|(w, c)| (w.into_owned(), c)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    /// Minimum target-corpus count for a word to enter the vocabulary.
    pub min_count: u64,
    /// Additive smoothing of background counts.
    pub smoothing: f64,
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop after `patience` consecutive decreases smaller than this.
    pub tolerance: f64,
    pub patience: usize,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            min_count: 10,
            smoothing: 0.1,
            lambda: 1.0,
            max_iter: 20_000,
            tolerance: 1e-8,
            patience: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SageModel {
    pub vocabulary: Vec<String>,
    /// Background log-probabilities; `exp` sums to one.
    pub background: Vec<f64>,
    pub eta: Vec<f64>,
    pub lambda: f64,
    /// Objective value after each accepted iteration (first entry at eta = 0).
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl SageModel {
    pub fn nonzero(&self) -> usize {
        self.eta.iter().filter(|&&e| e != 0.0).count()
    }

    pub fn eta_of(&self, word: &str) -> Option<f64> {
        self.vocabulary
            .binary_search_by(|w| w.as_str().cmp(word))
            .ok()
            .map(|i| self.eta[i])
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn smooth_part(counts: &[f64], total: f64, m: &[f64], eta: &[f64]) -> f64 {
    let lin: f64 = counts.iter().zip(m).zip(eta).map(|((c, m), e)| c * (m + e)).sum();
    -lin + total * log_sum_exp(m.iter().zip(eta).map(|(m, e)| m + e))
}

/// [`smooth_part`] that also leaves the word distribution `softmax(m + eta)`
/// in `probs`.
fn smooth_part_with_probs(counts: &[f64], total: f64, m: &[f64], eta: &[f64], probs: &mut [f64]) -> f64 {
    let mut lin = 0.0;
    let mut max = f64::NEG_INFINITY;
    for k in 0..m.len() {
        let x = m[k] + eta[k];
        lin += counts[k] * x;
        probs[k] = x;
        max = max.max(x);
    }
    if !max.is_finite() {
        return f64::NAN;
    }
    let mut sum = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
    -lin + total * (max + sum.ln())
}

/// Penalized negative log-likelihood
/// `-c·(m+eta) + C·logsumexp(m+eta) + lambda·|eta|_1`.
pub fn sage_objective(counts: &[f64], background: &[f64], eta: &[f64], lambda: f64) -> f64 {
    let total: f64 = counts.iter().sum();
    smooth_part(counts, total, background, eta) + lambda * eta.iter().map(|e| e.abs()).sum::<f64>()
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Fits sparse deviations of a target corpus from a background corpus by
/// proximal gradient descent with backtracking. Every accepted step is
/// non-increasing in the objective.
pub fn fit_sage(
    target: &BTreeMap<String, u64>,
    background: &BTreeMap<String, u64>,
    config: &SageConfig,
) -> Result<SageModel, LexiconError> {
    if !(config.lambda.is_finite() && config.lambda >= 0.0) {
        return Err(LexiconError::InvalidLambda(config.lambda));
    }
    if target.values().sum::<u64>() == 0 {
        return Err(LexiconError::EmptyCorpus("target"));
    }
    if background.values().sum::<u64>() == 0 {
        return Err(LexiconError::EmptyCorpus("background"));
    }
    let vocabulary: Vec<String> = target
        .iter()
        .filter(|(_, &c)| c >= config.min_count && c > 0)
        .map(|(w, _)| w.clone())
        .collect();
    if vocabulary.is_empty() {
        return Err(LexiconError::EmptyVocabulary(config.min_count));
    }
    let counts: Vec<f64> = vocabulary.iter().map(|w| target[w] as f64).collect();
    let smoothed: Vec<f64> = vocabulary
        .iter()
        .map(|w| background.get(w).copied().unwrap_or(0) as f64 + config.smoothing)
        .collect();
    let norm = smoothed.iter().sum::<f64>().ln();
    let m: Vec<f64> = smoothed.iter().map(|b| b.ln() - norm).collect();
    let total: f64 = counts.iter().sum();
    let lambda = config.lambda;
    let n = vocabulary.len();

    let mut eta = vec![0.0; n];
    let mut probs = vec![0.0; n];
    let mut cand_probs = vec![0.0; n];
    let mut smooth = smooth_part_with_probs(&counts, total, &m, &eta, &mut probs);
    let mut objective = smooth;
    let mut trace = vec![objective];
    // The smooth part's Hessian is bounded by `total` times a covariance of
    // a categorical distribution, so 1/total is always a safe step.
    let mut step = 1.0 / total;
    let mut small = 0usize;
    let mut converged = false;
    let mut grad = vec![0.0; n];
    let mut cand = vec![0.0; n];

    for iteration in 0..config.max_iter {
        for k in 0..n {
            grad[k] = total * probs[k] - counts[k];
        }
        let mut t = step * 2.0;
        let (cand_smooth, cand_obj) = loop {
            for k in 0..n {
                cand[k] = soft_threshold(eta[k] - t * grad[k], t * lambda);
            }
            let cs = smooth_part_with_probs(&counts, total, &m, &cand, &mut cand_probs);
            let (mut lin, mut sq) = (0.0, 0.0);
            for k in 0..n {
                let d = cand[k] - eta[k];
                lin += grad[k] * d;
                sq += d * d;
            }
            if !cs.is_finite() {
                if t < 1e-300 {
                    return Err(LexiconError::NonFinite { iteration });
                }
                t *= 0.5;
                continue;
            }
            if cs <= smooth + lin + sq / (2.0 * t) || t <= 1.0 / total {
                let obj = cs + lambda * cand.iter().map(|e| e.abs()).sum::<f64>();
                break (cs, obj);
            }
            t *= 0.5;
        };
        if !cand_obj.is_finite() {
            return Err(LexiconError::NonFinite { iteration });
        }
        step = t;
        if cand_obj > objective {
            // Rounding noise at the optimum.
            converged = true;
            break;
        }
        let decrease = objective - cand_obj;
        std::mem::swap(&mut eta, &mut cand);
        std::mem::swap(&mut probs, &mut cand_probs);
        smooth = cand_smooth;
        objective = cand_obj;
        trace.push(objective);
        if decrease < config.tolerance {
            small += 1;
            if small >= config.patience {
                converged = true;
                break;
            }
        } else {
            small = 0;
        }
    }

    Ok(SageModel {
        vocabulary,
        background: m,
        eta,
        lambda,
        objective_trace: trace,
        converged,
    })
}

/// Up to `k` positive-deviation words, by eta descending then alphabetically.
pub fn top_distinctive_words(model: &SageModel, k: usize) -> Vec<String> {
    let mut words: Vec<(&String, f64)> = model
        .vocabulary
        .iter()
        .zip(&model.eta)
        .filter(|(_, &e)| e > 0.0)
        .map(|(w, &e)| (w, e))
        .collect();
    words.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    words.into_iter().take(k).map(|(w, _)| w.clone()).collect()
}

/// Per-word ratings (0 not hateful, 1 sometimes, 2 always), one per rater.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSheet {
    rows: Vec<(String, Vec<u8>)>,
}

impl AnnotationSheet {
    pub fn new(rows: Vec<(String, Vec<u8>)>) -> Result<Self, LexiconError> {
        let Some(first) = rows.first() else {
            return Err(LexiconError::Annotation("no rated words".into()));
        };
        let raters = first.1.len();
        if raters < 2 {
            return Err(LexiconError::Annotation(format!("need at least 2 raters, got {raters}")));
        }
        for (w, r) in &rows {
            if r.len() != raters {
                return Err(LexiconError::Annotation(format!(
                    "`{w}` has {} ratings, expected {raters}",
                    r.len()
                )));
            }
            if let Some(bad) = r.iter().find(|&&x| x > 2) {
                return Err(LexiconError::Annotation(format!("`{w}` has rating {bad} outside 0..=2")));
            }
        }
        Ok(AnnotationSheet { rows })
    }

    /// Reads `word,rater1,rater2,...` CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, LexiconError> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let word = rec.get(0).unwrap_or("").to_lowercase();
            let ratings = rec
                .iter()
                .skip(1)
                .map(|v| {
                    v.parse::<u8>().map_err(|_| {
                        LexiconError::Annotation(format!("`{word}` has non-integer rating `{v}`"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((word, ratings));
        }
        Self::new(rows)
    }

    pub fn raters(&self) -> usize {
        self.rows[0].1.len()
    }

    pub fn rows(&self) -> &[(String, Vec<u8>)] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub hate_words: BTreeSet<String>,
    pub fleiss_kappa: f64,
}

/// Fleiss' kappa over the three rating categories.
pub fn fleiss_kappa(sheet: &AnnotationSheet) -> f64 {
    let n = sheet.raters() as f64;
    let items = sheet.rows.len() as f64;
    let mut cat_totals = [0.0f64; 3];
    let mut p_bar = 0.0;
    for (_, r) in &sheet.rows {
        let mut counts = [0.0f64; 3];
        for &x in r {
            counts[x as usize] += 1.0;
        }
        for j in 0..3 {
            cat_totals[j] += counts[j];
        }
        p_bar += (counts.iter().map(|c| c * c).sum::<f64>() - n) / (n * (n - 1.0));
    }
    p_bar /= items;
    let p_e: f64 = cat_totals.iter().map(|t| (t / (items * n)).powi(2)).sum();
    if (1.0 - p_e).abs() < 1e-15 {
        // Every rating falls in one category: agreement is perfect.
        return 1.0;
    }
    (p_bar - p_e) / (1.0 - p_e)
}

pub fn aggregate_annotations(sheet: &AnnotationSheet) -> AnnotationSummary {
    let hate_words = sheet
        .rows
        .iter()
        .filter(|(_, r)| r.iter().map(|&x| x as u32).sum::<u32>() >= HATE_WORD_MIN_TOTAL)
        .map(|(w, _)| w.clone())
        .collect();
    AnnotationSummary { hate_words, fleiss_kappa: fleiss_kappa(sheet) }
}

pub fn classify_community(hate_word_count: usize) -> bool {
    hate_word_count > HATEFUL_COMMUNITY_MIN_EXCLUSIVE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HateLexiconEntry {
    pub replacement: String,
    pub note: String,
}

/// Hate words with neutral replacement phrases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HateLexicon {
    entries: BTreeMap<String, HateLexiconEntry>,
}

impl HateLexicon {
    /// Builds a lexicon; rejects empty replacements and replacements that
    /// themselves contain a lexicon word.
    pub fn new(entries: BTreeMap<String, HateLexiconEntry>) -> Result<Self, LexiconError> {
        let entries: BTreeMap<String, HateLexiconEntry> =
            entries.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        for (word, e) in &entries {
            if e.replacement.trim().is_empty() {
                return Err(LexiconError::Lexicon { line: 0, reason: format!("`{word}` has an empty replacement") });
            }
            for (a, b) in text::token_spans(&e.replacement) {
                let tok = e.replacement[a..b].to_lowercase();
                if entries.contains_key(&tok) {
                    return Err(LexiconError::ReplacementConflict { word: word.clone(), token: tok, which: "hate" });
                }
            }
        }
        Ok(HateLexicon { entries })
    }

    /// Parses `word<TAB>replacement<TAB>note` lines (`#` comments allowed).
    pub fn from_tsv(content: &str) -> Result<Self, LexiconError> {
        let mut entries = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 || cols[0].trim().is_empty() {
                return Err(LexiconError::Lexicon { line: i + 1, reason: "expected word<TAB>replacement[<TAB>note]".into() });
            }
            entries.insert(
                cols[0].trim().to_string(),
                HateLexiconEntry {
                    replacement: cols[1].trim().to_string(),
                    note: cols.get(2).map(|s| s.trim().to_string()).unwrap_or_default(),
                },
            );
        }
        Self::new(entries)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(w, e)| format!("{w}\t{}\t{}\n", e.replacement, e.note))
            .collect()
    }

    /// Fails when a replacement phrase uses a sentiment-bearing word.
    pub fn check_against_sentiment(&self, lexicon: &SentimentLexicon) -> Result<(), LexiconError> {
        for (word, e) in &self.entries {
            for (a, b) in text::token_spans(&e.replacement) {
                let tok = e.replacement[a..b].to_lowercase();
                if lexicon.contains(&tok) {
                    return Err(LexiconError::ReplacementConflict { word: word.clone(), token: tok, which: "sentiment" });
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn replacement(&self, token: &str) -> Option<&str> {
        self.entries.get(&token.to_lowercase()).map(|e| e.replacement.as_str())
    }
}

/// Replaces whole-token, case-insensitive lexicon matches with their neutral
/// phrase. Everything else is copied byte for byte.
pub fn substitute_hate_words(input: &str, lexicon: &HateLexicon) -> String {
    let mut out = String::with_capacity(input.len());
    let mut last = 0;
    for (a, b) in text::token_spans(input) {
        if let Some(rep) = lexicon.replacement(&input[a..b]) {
            out.push_str(&input[last..a]);
            out.push_str(rep);
            last = b;
        }
    }
    out.push_str(&input[last..]);
    out
}

pub fn contains_hate_word(input: &str, lexicon: &HateLexicon) -> bool {
    text::token_spans(input)
        .into_iter()
        .any(|(a, b)| lexicon.contains(&input[a..b]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|&(w, c)| (w.to_string(), c)).collect()
    }

    fn cfg(lambda: f64) -> SageConfig {
        SageConfig { min_count: 1, lambda, ..Default::default() }
    }

    #[test]
    fn background_is_normalized() {
        let t = counts(&[("aa", 20), ("bb", 15), ("cc", 30)]);
        let b = counts(&[("aa", 5), ("bb", 0), ("zz", 100)]);
        let m = fit_sage(&t, &b, &cfg(1.0)).unwrap();
        let s: f64 = m.background.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_distributions_give_zero_eta() {
        let t = counts(&[("aa", 40), ("bb", 20), ("cc", 20), ("dd", 20)]);
        let b = counts(&[("aa", 400), ("bb", 200), ("cc", 200), ("dd", 200)]);
        for lambda in [0.01, 0.5, 3.0] {
            let m = fit_sage(&t, &b, &SageConfig { min_count: 1, smoothing: 0.0, lambda, ..Default::default() }).unwrap();
            assert!(m.eta.iter().all(|&e| e.abs() < 1e-6), "{:?}", m.eta);
        }
    }

    #[test]
    fn dominating_penalty_gives_zero() {
        let t = counts(&[("w1", 4), ("w2", 1), ("w3", 1), ("w4", 1)]);
        let b = counts(&[("w1", 100), ("w2", 100), ("w3", 100), ("w4", 100)]);
        let m = fit_sage(&t, &b, &cfg(1e6)).unwrap();
        assert!(m.eta.iter().all(|&e| e == 0.0));
        assert!(top_distinctive_words(&m, 5).is_empty());
    }

    #[test]
    fn skewed_word_gets_largest_deviation() {
        let t = counts(&[("w1", 4), ("w2", 1), ("w3", 1), ("w4", 1)]);
        let b = counts(&[("w1", 100), ("w2", 100), ("w3", 100), ("w4", 100)]);
        let m = fit_sage(&t, &b, &cfg(0.1)).unwrap();
        assert!(m.converged);
        let w1 = m.eta_of("w1").unwrap();
        assert!(w1 > 0.0);
        assert!(m.eta.iter().all(|&e| e <= w1));
        assert_eq!(top_distinctive_words(&m, 1), vec!["w1"]);
        assert!(m.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn vocabulary_floor_and_errors() {
        let t = counts(&[("aa", 12), ("bb", 3)]);
        let b = counts(&[("aa", 1)]);
        let m = fit_sage(&t, &b, &SageConfig::default()).unwrap();
        assert_eq!(m.vocabulary, vec!["aa"]);
        assert!(matches!(fit_sage(&BTreeMap::new(), &b, &SageConfig::default()), Err(LexiconError::EmptyCorpus("target"))));
        assert!(matches!(fit_sage(&t, &BTreeMap::new(), &SageConfig::default()), Err(LexiconError::EmptyCorpus("background"))));
        let sparse = counts(&[("aa", 2)]);
        assert!(matches!(fit_sage(&sparse, &b, &SageConfig::default()), Err(LexiconError::EmptyVocabulary(10))));
    }

    #[test]
    fn top_words_tie_break() {
        let model = SageModel {
            vocabulary: vec!["a".into(), "b".into(), "c".into()],
            background: vec![0.0; 3],
            eta: vec![0.5, 0.5, -0.1],
            lambda: 1.0,
            objective_trace: vec![],
            converged: true,
        };
        assert_eq!(top_distinctive_words(&model, 2), vec!["a", "b"]);
        assert_eq!(top_distinctive_words(&model, 10), vec!["a", "b"]);
    }

    #[test]
    fn annotation_thresholds() {
        let sheet = AnnotationSheet::new(vec![
            ("slur".into(), vec![2, 2, 2]),
            ("edgy".into(), vec![2, 1, 0]),
            ("meh".into(), vec![2, 2, 0]),
        ])
        .unwrap();
        let s = aggregate_annotations(&sheet);
        assert!(s.hate_words.contains("slur"));
        assert!(!s.hate_words.contains("edgy"));
        assert!(s.hate_words.contains("meh"));
    }

    #[test]
    fn perfect_agreement_kappa_is_one() {
        let sheet = AnnotationSheet::new(vec![
            ("a".into(), vec![0, 0, 0]),
            ("b".into(), vec![2, 2, 2]),
            ("c".into(), vec![1, 1, 1]),
        ])
        .unwrap();
        assert!((fleiss_kappa(&sheet) - 1.0).abs() < 1e-12);
        let one_cat = AnnotationSheet::new(vec![("a".into(), vec![0, 0]), ("b".into(), vec![0, 0])]).unwrap();
        assert_eq!(fleiss_kappa(&one_cat), 1.0);
    }

    #[test]
    fn kappa_matches_hand_computation() {
        // Two items, three raters: (0,0,1) and (2,2,2).
        // P1 = (4+1-3)/6 = 1/3, P2 = 1, Pbar = 2/3.
        // p = (2/6, 1/6, 3/6), Pe = 14/36.
        let sheet = AnnotationSheet::new(vec![("x".into(), vec![0, 0, 1]), ("y".into(), vec![2, 2, 2])]).unwrap();
        let pe = 14.0 / 36.0;
        let expected = (2.0 / 3.0 - pe) / (1.0 - pe);
        assert!((fleiss_kappa(&sheet) - expected).abs() < 1e-12);
    }

    #[test]
    fn ragged_and_bad_sheets_fail() {
        assert!(AnnotationSheet::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![0])]).is_err());
        assert!(AnnotationSheet::new(vec![("a".into(), vec![3, 1])]).is_err());
        assert!(AnnotationSheet::new(vec![("a".into(), vec![1])]).is_err());
        let csv = "word,r1,r2,r3\nfoo,2,2,1\nbar,0,1\n";
        assert!(AnnotationSheet::from_csv(csv.as_bytes()).is_err());
        let ok = AnnotationSheet::from_csv("word,r1,r2\nFoo,2,2\n".as_bytes()).unwrap();
        assert_eq!(ok.rows()[0].0, "foo");
    }

    #[test]
    fn community_rule_is_strict() {
        assert!(!classify_community(0));
        assert!(!classify_community(5));
        assert!(classify_community(6));
    }

    fn lexicon() -> HateLexicon {
        HateLexicon::from_tsv("xslur\tblack person\texample\nape\tperson\t\n").unwrap()
    }

    #[test]
    fn substitution_rules() {
        let lex = lexicon();
        assert_eq!(substitute_hate_words("nothing to see here", &lex), "nothing to see here");
        assert_eq!(substitute_hate_words("\"XSLUR!\" he said", &lex), "\"black person!\" he said");
        assert_eq!(substitute_hate_words("grape apex ape-like", &lex), "grape apex person-like");
        assert!(contains_hate_word("an Ape", &lex));
        assert!(!contains_hate_word("grapes", &lex));
    }

    #[test]
    fn replacement_rules() {
        assert!(HateLexicon::from_tsv("aa\t \t").is_err());
        assert!(HateLexicon::from_tsv("aa\tbb\nbb\tcc\n").is_err());
        let lex = HateLexicon::from_tsv("aa\tgood person\n").unwrap();
        assert!(lex.check_against_sentiment(&SentimentLexicon::builtin()).is_err());
        assert!(lexicon().check_against_sentiment(&SentimentLexicon::builtin()).is_ok());
    }

    proptest! {
        #[test]
        fn substitution_is_idempotent(words in proptest::collection::vec(
            prop_oneof![Just("ape"), Just("APE"), Just("xslur"), Just("grape"), Just("the"), Just("!"), Just("x-slur")], 0..10),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just(", "), Just("-"), Just("")], 10)) {
            let lex = lexicon();
            let text: String = words.iter().zip(&seps).map(|(w, s)| format!("{w}{s}")).collect();
            let once = substitute_hate_words(&text, &lex);
            prop_assert_eq!(substitute_hate_words(&once, &lex), once.clone());
            prop_assert!(!contains_hate_word(&once, &lex));
        }

        #[test]
        fn classification_is_monotone(a in 0usize..50, b in 0usize..50) {
            if a <= b {
                prop_assert!(!classify_community(a) || classify_community(b));
            }
        }
    }
}
