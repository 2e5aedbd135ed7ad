//! Text scoring: lexicon-and-rule sentiment valence, and toxicity /
//! attack-on-commenter probabilities from either a remote scoring service or
//! a deterministic offline stub.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::text;

/// Multiplier applied to a valenced word under negation.
pub const NEGATION_SCALAR: f64 = -0.74;
/// Default booster increment.
pub const BOOSTER_INCREMENT: f64 = 0.293;
/// Multiplier for an ALL-CAPS valenced word in mixed-case text.
pub const CAPS_SCALAR: f64 = 1.733;
/// Magnitude added per trailing exclamation mark.
pub const EXCLAMATION_INCREMENT: f64 = 0.292;
pub const MAX_EXCLAMATIONS: usize = 3;
/// Normalization constant of the compound score `s / sqrt(s^2 + alpha)`.
pub const NORMALIZATION_ALPHA: f64 = 15.0;
/// Default decision threshold for the binary attribute re-analysis.
pub const DEFAULT_THRESHOLD: f64 = 0.7;

const BUILTIN_SENTIMENT: &str = include_str!("../data/sentiment_lexicon.tsv");
const BUILTIN_STUB: &str = include_str!("../data/stub_lexicon.tsv");

const BUILTIN_BOOSTERS: &[(&str, f64)] = &[
    ("absolutely", BOOSTER_INCREMENT),
    ("completely", BOOSTER_INCREMENT),
    ("extremely", BOOSTER_INCREMENT),
    ("incredibly", BOOSTER_INCREMENT),
    ("really", BOOSTER_INCREMENT),
    ("so", BOOSTER_INCREMENT),
    ("totally", BOOSTER_INCREMENT),
    ("very", BOOSTER_INCREMENT),
    ("barely", -BOOSTER_INCREMENT),
    ("hardly", -BOOSTER_INCREMENT),
    ("kinda", -BOOSTER_INCREMENT),
    ("slightly", -BOOSTER_INCREMENT),
    ("somewhat", -BOOSTER_INCREMENT),
];

const BUILTIN_NEGATIONS: &[&str] = &[
    "aint", "cannot", "cant", "dont", "doesnt", "didnt", "isnt", "never", "neither", "nobody",
    "none", "nor", "not", "nothing", "nowhere", "wasnt", "without", "wont", "wouldnt",
];

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scoring service rejected credentials (HTTP {status}); set the API key or switch to the stub scorer")]
    Auth { status: u16 },
    #[error("scoring service quota exhausted after {attempts} attempts; wait for the quota window or switch to the stub scorer")]
    Quota { attempts: u32 },
    #[error("scoring service unreachable after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("scoring service rejected the request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed scoring response: {0}")]
    BadResponse(String),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("invalid lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },
    #[error("score cache I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl ScoreError {
    /// Copy of the error for reporting it against several inputs.
    fn duplicate(&self) -> ScoreError {
        match self {
            ScoreError::Auth { status } => ScoreError::Auth { status: *status },
            ScoreError::Quota { attempts } => ScoreError::Quota { attempts: *attempts },
            ScoreError::Transport { attempts, message } => {
                ScoreError::Transport { attempts: *attempts, message: message.clone() }
            }
            ScoreError::Rejected { status, body } => {
                ScoreError::Rejected { status: *status, body: body.clone() }
            }
            ScoreError::BadResponse(m) => ScoreError::BadResponse(m.clone()),
            ScoreError::InvalidThreshold(t) => ScoreError::InvalidThreshold(*t),
            ScoreError::Lexicon { line, reason } => {
                ScoreError::Lexicon { line: *line, reason: reason.clone() }
            }
            ScoreError::Io(e) => ScoreError::Transport { attempts: 0, message: e.to_string() },
        }
    }
}

/// Valence lexicon plus booster and negation word lists.
#[derive(Debug, Clone, Default)]
pub struct SentimentLexicon {
    pub valence: HashMap<String, f64>,
    pub boosters: HashMap<String, f64>,
    pub negations: HashSet<String>,
}

impl SentimentLexicon {
    pub fn builtin() -> Self {
        let mut lex = Self::from_tsv(BUILTIN_SENTIMENT).expect("builtin lexicon parses");
        lex.boosters = BUILTIN_BOOSTERS.iter().map(|&(w, v)| (w.to_string(), v)).collect();
        lex.negations = BUILTIN_NEGATIONS.iter().map(|w| w.to_string()).collect();
        lex
    }

    /// Parses `word<TAB>valence[<TAB>...]`. Extra columns are ignored, so the
    /// published VADER lexicon file loads unchanged. Boosters and negations
    /// are left empty; see [`SentimentLexicon::with_builtin_rules`].
    pub fn from_tsv(content: &str) -> Result<Self, ScoreError> {
        let mut valence = HashMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let word = cols.next().unwrap_or("").trim();
            let v = cols
                .next()
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite());
            match (word.is_empty(), v) {
                (false, Some(v)) => {
                    valence.insert(word.to_lowercase(), v);
                }
                _ => {
                    return Err(ScoreError::Lexicon {
                        line: i + 1,
                        reason: "expected word<TAB>valence".into(),
                    })
                }
            }
        }
        Ok(SentimentLexicon { valence, ..Default::default() })
    }

    pub fn with_builtin_rules(mut self) -> Self {
        let b = Self::builtin();
        self.boosters = b.boosters;
        self.negations = b.negations;
        self
    }

    pub fn contains(&self, word: &str) -> bool {
        self.valence.contains_key(&word.to_lowercase())
    }

    /// The same lexicon with every valence negated.
    pub fn negated(&self) -> Self {
        SentimentLexicon {
            valence: self.valence.iter().map(|(k, v)| (k.clone(), -v)).collect(),
            ..self.clone()
        }
    }

}

fn is_all_caps(token: &str) -> bool {
    let mut letters = token.chars().filter(|c| c.is_alphabetic()).peekable();
    letters.peek().is_some() && letters.all(|c| c.is_uppercase())
}

fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// What the sentiment rules need to know about one lowercased word.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct WordInfo {
    valence: f64,
    booster: Option<f64>,
    negation: bool,
}

impl SentimentLexicon {
    fn info(&self, word: &str) -> WordInfo {
        WordInfo {
            valence: self.valence.get(word).copied().unwrap_or(0.0),
            booster: self.boosters.get(word).copied(),
            negation: self.negations.contains(word),
        }
    }
}

/// A lexicon compiled into a single lookup table; scores are identical to
/// [`sentiment`] with the lexicon it was built from.
#[derive(Debug, Clone, Default)]
pub struct SentimentAnalyzer {
    words: FxHashMap<String, WordInfo>,
}

impl SentimentAnalyzer {
    pub fn new(lexicon: &SentimentLexicon) -> Self {
        let words = lexicon
            .valence
            .keys()
            .chain(lexicon.boosters.keys())
            .chain(lexicon.negations.iter())
            .map(|w| (w.clone(), lexicon.info(w)))
            .collect();
        SentimentAnalyzer { words }
    }

    pub fn score(&self, text: &str) -> f64 {
        compound(text, |w| self.words.get(w).copied().unwrap_or_default())
    }
}

/// Compound sentiment valence in `[-1, 1]`.
///
/// Word valences are summed after the negation, booster, capitalization and
/// exclamation rules, then squashed with `s / sqrt(s^2 + 15)`.
pub fn sentiment(text: &str, lexicon: &SentimentLexicon) -> f64 {
    compound(text, |w| lexicon.info(w))
}

fn compound(text: &str, lookup: impl Fn(&str) -> WordInfo) -> f64 {
    struct Tok {
        info: WordInfo,
        alphabetic: bool,
        caps: bool,
        exclamations: usize,
    }
    let toks: Vec<Tok> = text
        .split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'');
            let trimmed = trimmed.trim_matches('\'');
            let exclamations = raw
                .chars()
                .rev()
                .take_while(|c| !c.is_alphanumeric())
                .filter(|&c| c == '!')
                .count()
                .min(MAX_EXCLAMATIONS);
            if trimmed.is_empty() && exclamations == 0 {
                return None;
            }
            let word = lowercase(trimmed);
            let mut info = lookup(&word);
            info.negation |= word.ends_with("n't");
            Some(Tok {
                info,
                alphabetic: trimmed.chars().any(char::is_alphabetic),
                caps: is_all_caps(trimmed),
                exclamations,
            })
        })
        .collect();

    let caps = toks.iter().filter(|t| t.caps).count();
    let worded = toks.iter().filter(|t| t.alphabetic).count();
    let cap_differential = caps > 0 && caps < worded;

    let mut valences = vec![0.0f64; toks.len()];
    let mut last_valenced: Option<usize> = None;
    for i in 0..toks.len() {
        let info = toks[i].info;
        let base = if info.booster.is_some() || info.negation || info.valence == 0.0 {
            None
        } else {
            Some(info.valence)
        };
        if let Some(mut v) = base {
            if cap_differential && toks[i].caps {
                v *= CAPS_SCALAR;
            }
            let mut negated = false;
            for (dist, scale) in [(1usize, 1.0), (2, 0.95), (3, 0.9)] {
                let Some(j) = i.checked_sub(dist) else { break };
                let prev = toks[j].info;
                if let Some(inc) = prev.booster {
                    v += sign(v) * inc * scale;
                }
                negated |= prev.negation;
            }
            if negated {
                v *= NEGATION_SCALAR;
            }
            valences[i] = v;
            last_valenced = Some(i);
        }
        if toks[i].exclamations > 0 {
            if let Some(k) = last_valenced {
                valences[k] += sign(valences[k]) * EXCLAMATION_INCREMENT * toks[i].exclamations as f64;
            }
        }
    }
    let s: f64 = valences.iter().sum();
    if s == 0.0 {
        return 0.0;
    }
    (s / (s * s + NORMALIZATION_ALPHA).sqrt()).clamp(-1.0, 1.0)
}

/// Toxicity and attack-on-commenter probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeScores {
    pub toxicity: f64,
    pub attack: f64,
}

impl AttributeScores {
    /// Clamps into `[0, 1]`; non-finite inputs are rejected.
    pub fn new(toxicity: f64, attack: f64) -> Result<Self, ScoreError> {
        if !toxicity.is_finite() || !attack.is_finite() {
            return Err(ScoreError::BadResponse(format!(
                "non-finite attribute scores ({toxicity}, {attack})"
            )));
        }
        Ok(AttributeScores {
            toxicity: toxicity.clamp(0.0, 1.0),
            attack: attack.clamp(0.0, 1.0),
        })
    }
}

/// Everything the pipeline needs to know about one text.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TextScores {
    pub sentiment: f64,
    pub toxicity: f64,
    pub attack: f64,
}

/// Binary flags at `threshold` (score >= threshold).
pub fn threshold_mode(scores: AttributeScores, threshold: f64) -> Result<(bool, bool), ScoreError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ScoreError::InvalidThreshold(threshold));
    }
    Ok((scores.toxicity >= threshold, scores.attack >= threshold))
}

/// Source of toxicity / attack probabilities.
pub trait AttributeScorer: Send + Sync {
    fn score(&self, text: &str) -> Result<AttributeScores, ScoreError>;

    /// Scores many texts. Results are positionally aligned with the input.
    fn score_batch(&self, texts: &[String]) -> Vec<Result<AttributeScores, ScoreError>> {
        texts.iter().map(|t| self.score(t)).collect()
    }

    fn name(&self) -> &'static str;
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Vocabulary and weights for [`StubScorer`]. All weights are nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct StubLexicons {
    pub toxic: BTreeMap<String, f64>,
    pub insults: BTreeMap<String, f64>,
    pub second_person: BTreeSet<String>,
    pub toxicity_bias: f64,
    pub attack_bias: f64,
    /// Added to the attack logit when an insult co-occurs with a
    /// second-person pronoun.
    pub directed_bonus: f64,
}

impl StubLexicons {
    pub fn builtin() -> Self {
        Self::from_tsv(BUILTIN_STUB).expect("builtin stub lexicon parses")
    }

    /// Parses `kind<TAB>term<TAB>weight` lines. See the builtin file for the
    /// recognized kinds.
    pub fn from_tsv(content: &str) -> Result<Self, ScoreError> {
        let base = logit(0.05);
        let mut out = StubLexicons {
            toxic: BTreeMap::new(),
            insults: BTreeMap::new(),
            second_person: BTreeSet::new(),
            toxicity_bias: base,
            attack_bias: base,
            directed_bonus: 1.0,
        };
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
            let bad = |reason: &str| ScoreError::Lexicon { line: i + 1, reason: reason.to_string() };
            let weight = || -> Result<f64, ScoreError> {
                cols.get(2)
                    .and_then(|w| w.parse::<f64>().ok())
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| bad("missing or invalid weight"))
            };
            let term = cols.get(1).map(|t| t.to_lowercase()).unwrap_or_default();
            match cols[0] {
                "toxic" | "insult" => {
                    let w = weight()?;
                    if w < 0.0 {
                        return Err(bad("weights must be nonnegative"));
                    }
                    if term.is_empty() {
                        return Err(bad("empty term"));
                    }
                    let map = if cols[0] == "toxic" { &mut out.toxic } else { &mut out.insults };
                    map.insert(term, w);
                }
                "second_person" if !term.is_empty() => {
                    out.second_person.insert(term);
                }
                "toxicity_bias" => out.toxicity_bias = weight()?,
                "attack_bias" => out.attack_bias = weight()?,
                "directed_bonus" => {
                    out.directed_bonus = weight()?;
                    if out.directed_bonus < 0.0 {
                        return Err(bad("directed_bonus must be nonnegative"));
                    }
                }
                other => return Err(bad(&format!("unknown kind `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("# kind\tterm\tweight\n");
        s.push_str(&format!("toxicity_bias\t-\t{}\n", self.toxicity_bias));
        s.push_str(&format!("attack_bias\t-\t{}\n", self.attack_bias));
        s.push_str(&format!("directed_bonus\t-\t{}\n", self.directed_bonus));
        for (t, w) in &self.toxic {
            s.push_str(&format!("toxic\t{t}\t{w}\n"));
        }
        for (t, w) in &self.insults {
            s.push_str(&format!("insult\t{t}\t{w}\n"));
        }
        for t in &self.second_person {
            s.push_str(&format!("second_person\t{t}\n"));
        }
        s
    }

    pub fn with_toxic_terms<I: IntoIterator<Item = (String, f64)>>(mut self, terms: I) -> Self {
        self.toxic.extend(terms);
        self
    }

    /// Logits `(toxicity, attack)` before squashing.
    pub fn logits(&self, text: &str) -> (f64, f64) {
        let mut tox = self.toxicity_bias;
        let mut att = self.attack_bias;
        let mut any_insult = false;
        let mut directed = false;
        for tok in alnum_tokens(text) {
            if let Some(w) = self.toxic.get(tok.as_ref()) {
                tox += w;
            }
            if let Some(w) = self.insults.get(tok.as_ref()) {
                att += w;
                any_insult = true;
            }
            directed |= self.second_person.contains(tok.as_ref());
        }
        if any_insult && directed {
            att += self.directed_bonus;
        }
        (tox, att)
    }
}

/// Lowercased alphanumeric runs; borrows tokens that are already lowercase.
fn alnum_tokens(text: &str) -> impl Iterator<Item = Cow<'_, str>> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(lowercase)
}

fn lowercase(t: &str) -> Cow<'_, str> {
    if t.chars().any(char::is_uppercase) {
        Cow::Owned(t.to_lowercase())
    } else {
        Cow::Borrowed(t)
    }
}

/// Per-token weights `(toxic, insult, is_insult, second_person)` merged
/// into one hash lookup.
#[derive(Debug, Clone, Default)]
struct StubIndex {
    words: FxHashMap<String, (f64, f64, bool, bool)>,
}

impl StubIndex {
    fn new(lex: &StubLexicons) -> Self {
        let mut words: FxHashMap<String, (f64, f64, bool, bool)> = FxHashMap::default();
        for (w, &v) in &lex.toxic {
            words.entry(w.clone()).or_default().0 += v;
        }
        for (w, &v) in &lex.insults {
            let e = words.entry(w.clone()).or_default();
            e.1 += v;
            e.2 = true;
        }
        for w in &lex.second_person {
            words.entry(w.clone()).or_default().3 = true;
        }
        StubIndex { words }
    }
}

/// Deterministic offline surrogate for the remote attribute service.
///
/// Not a replica of any trained model: it only preserves monotonicity in
/// toxic and insulting vocabulary.
#[derive(Debug, Clone)]
pub struct StubScorer {
    lexicons: StubLexicons,
    index: StubIndex,
}

impl StubScorer {
    pub fn new(lexicons: StubLexicons) -> Self {
        let index = StubIndex::new(&lexicons);
        StubScorer { lexicons, index }
    }

    pub fn lexicons(&self) -> &StubLexicons {
        &self.lexicons
    }

    /// Same result as [`StubLexicons::logits`], one hash lookup per token.
    pub fn logits(&self, text: &str) -> (f64, f64) {
        let lex = &self.lexicons;
        let (mut tox, mut att) = (lex.toxicity_bias, lex.attack_bias);
        let (mut any_insult, mut directed) = (false, false);
        for tok in alnum_tokens(text) {
            if let Some(&(t, a, insult, second)) = self.index.words.get(tok.as_ref()) {
                tox += t;
                att += a;
                any_insult |= insult;
                directed |= second;
            }
        }
        if any_insult && directed {
            att += lex.directed_bonus;
        }
        (tox, att)
    }

    pub fn scores(&self, text: &str) -> AttributeScores {
        let (t, a) = self.logits(text);
        AttributeScores { toxicity: logistic(t), attack: logistic(a) }
    }
}

impl Default for StubScorer {
    fn default() -> Self {
        StubScorer::new(StubLexicons::builtin())
    }
}

/// Stub scores for one text.
pub fn score_attributes_stub(text: &str, lexicons: &StubLexicons) -> AttributeScores {
    let (t, a) = lexicons.logits(text);
    AttributeScores { toxicity: logistic(t), attack: logistic(a) }
}

impl AttributeScorer for StubScorer {
    fn score(&self, text: &str) -> Result<AttributeScores, ScoreError> {
        Ok(self.scores(text))
    }

    fn name(&self) -> &'static str {
        "stub"
    }
}

/// Hex sha256 of the text, the key of every score cache.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal HTTP surface the remote scorer needs, so tests can substitute it.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, String>;
}

pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        UreqTransport { agent }
    }
}

impl Transport for UreqTransport {
    fn post_json(&self, url: &str, body: &str) -> Result<HttpResponse, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

/// Blocking minimum-interval rate limiter.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_second: f64) -> Self {
        let interval = if requests_per_second > 0.0 && requests_per_second.is_finite() {
            Duration::from_secs_f64(1.0 / requests_per_second)
        } else {
            Duration::ZERO
        };
        RateLimiter { interval, next: Mutex::new(None) }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub requests_per_second: f64,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_in_flight: usize,
    pub timeout: Duration,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            api_key: None,
            requests_per_second: 1.0,
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            max_in_flight: 4,
            timeout: Duration::from_secs(30),
        }
    }
}

pub const TOXICITY_ATTRIBUTE: &str = "TOXICITY";
pub const ATTACK_ATTRIBUTE: &str = "ATTACK_ON_COMMENTER";

/// Request document sent to the attribute service.
pub fn remote_request_body(text: &str) -> String {
    json!({
        "comment": { "text": text },
        "requestedAttributes": { TOXICITY_ATTRIBUTE: {}, ATTACK_ATTRIBUTE: {} },
        "languages": ["en"],
        "doNotStore": true,
    })
    .to_string()
}

/// Extracts the two summary probabilities from a service response.
pub fn parse_remote_response(body: &str) -> Result<AttributeScores, ScoreError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ScoreError::BadResponse(e.to_string()))?;
    let get = |attr: &str| {
        v.pointer(&format!("/attributeScores/{attr}/summaryScore/value"))
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| ScoreError::BadResponse(format!("missing {attr} summary score")))
    };
    AttributeScores::new(get(TOXICITY_ATTRIBUTE)?, get(ATTACK_ATTRIBUTE)?)
}

/// Client for a remote attribute-scoring service.
///
/// Responses are cached in memory by content hash, so identical texts cost
/// one request per process. Persist them across runs with [`ScoreCache`].
pub struct RemoteScorer<T: Transport = UreqTransport> {
    config: RemoteConfig,
    transport: T,
    limiter: RateLimiter,
    cache: Mutex<HashMap<String, AttributeScores>>,
    requests: AtomicUsize,
}

impl RemoteScorer<UreqTransport> {
    pub fn new(config: RemoteConfig) -> Self {
        let transport = UreqTransport::new(config.timeout);
        Self::with_transport(config, transport)
    }
}

impl<T: Transport> RemoteScorer<T> {
    pub fn with_transport(config: RemoteConfig, transport: T) -> Self {
        RemoteScorer {
            limiter: RateLimiter::new(config.requests_per_second),
            config,
            transport,
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
        }
    }

    /// Number of HTTP requests issued so far (including retries).
    pub fn requests_issued(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    fn url(&self) -> String {
        match &self.config.api_key {
            Some(k) if !k.is_empty() => {
                let sep = if self.config.endpoint.contains('?') { '&' } else { '?' };
                format!("{}{sep}key={k}", self.config.endpoint)
            }
            _ => self.config.endpoint.clone(),
        }
    }

    fn fetch(&self, text: &str) -> Result<AttributeScores, ScoreError> {
        let body = remote_request_body(text);
        let url = self.url();
        let attempts = self.config.max_attempts.max(1);
        let mut last_transport = String::new();
        let mut throttled = false;
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.initial_backoff * 2u32.pow(attempt - 1));
            }
            self.limiter.acquire();
            self.requests.fetch_add(1, Ordering::SeqCst);
            match self.transport.post_json(&url, &body) {
                Ok(resp) => match resp.status {
                    200..=299 => return parse_remote_response(&resp.body),
                    401 | 403 => return Err(ScoreError::Auth { status: resp.status }),
                    429 => throttled = true,
                    500..=599 => {
                        throttled = false;
                        last_transport = format!("HTTP {}", resp.status);
                    }
                    status => return Err(ScoreError::Rejected { status, body: resp.body }),
                },
                Err(e) => {
                    throttled = false;
                    last_transport = e;
                }
            }
        }
        if throttled {
            Err(ScoreError::Quota { attempts })
        } else {
            Err(ScoreError::Transport { attempts, message: last_transport })
        }
    }
}

impl<T: Transport> AttributeScorer for RemoteScorer<T> {
    /// Empty (after trimming) texts score `(0, 0)` without a request.
    fn score(&self, text: &str) -> Result<AttributeScores, ScoreError> {
        if text.trim().is_empty() {
            return Ok(AttributeScores::default());
        }
        let key = content_hash(text);
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*hit);
        }
        let scores = self.fetch(text)?;
        self.cache.lock().expect("cache lock").insert(key, scores);
        Ok(scores)
    }

    /// Scores with at most `max_in_flight` concurrent requests. Duplicate
    /// texts are requested once.
    fn score_batch(&self, texts: &[String]) -> Vec<Result<AttributeScores, ScoreError>> {
        let mut unique: Vec<&str> = texts.iter().map(String::as_str).collect();
        unique.sort_unstable();
        unique.dedup();
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<AttributeScores, ScoreError>>>> =
            unique.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.config.max_in_flight.max(1).min(unique.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= unique.len() {
                        break;
                    }
                    let r = self.score(unique[i]);
                    *results[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        let done: HashMap<&str, Result<AttributeScores, ScoreError>> = unique
            .iter()
            .zip(results)
            .map(|(t, r)| (*t, r.into_inner().expect("result slot").expect("every text scored")))
            .collect();
        texts
            .iter()
            .map(|t| match &done[t.as_str()] {
                Ok(s) => Ok(*s),
                Err(e) => Err(e.duplicate()),
            })
            .collect()
    }

    fn name(&self) -> &'static str {
        "remote"
    }
}

/// Persistent content-hash keyed store of text scores.
///
/// On disk it is an append-only TSV of
/// `sha256<TAB>toxicity<TAB>attack<TAB>sentiment` records.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: BTreeMap<String, TextScores>,
    path: Option<PathBuf>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        ScoreCache::default()
    }

    /// Opens (or starts) a cache file. Later records for the same hash win.
    pub fn open(path: &Path) -> Result<Self, ScoreError> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                let parse = |k: usize| cols.get(k).and_then(|v| v.parse::<f64>().ok());
                match (cols.first(), parse(1), parse(2), parse(3)) {
                    (Some(h), Some(toxicity), Some(attack), Some(sentiment)) if h.len() == 64 => {
                        entries.insert(h.to_string(), TextScores { sentiment, toxicity, attack });
                    }
                    _ => {
                        return Err(ScoreError::Lexicon {
                            line: i + 1,
                            reason: format!("bad score cache record in {}", path.display()),
                        })
                    }
                }
            }
        }
        Ok(ScoreCache { entries, path: Some(path.to_path_buf()) })
    }

    pub fn get(&self, text: &str) -> Option<TextScores> {
        self.entries.get(&content_hash(text)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts new records and appends them to the backing file in hash
    /// order, so the file does not depend on scoring order.
    pub fn extend(&mut self, records: Vec<(String, TextScores)>) -> Result<(), ScoreError> {
        let mut fresh: Vec<(String, TextScores)> = records
            .into_iter()
            .filter(|(h, _)| !self.entries.contains_key(h))
            .collect();
        fresh.sort_by(|a, b| a.0.cmp(&b.0));
        fresh.dedup_by(|a, b| a.0 == b.0);
        if let Some(path) = &self.path {
            if !fresh.is_empty() {
                let mut f = OpenOptions::new().create(true).append(true).open(path)?;
                for (h, s) in &fresh {
                    writeln!(f, "{h}\t{:?}\t{:?}\t{:?}", s.toxicity, s.attack, s.sentiment)?;
                }
            }
        }
        self.entries.extend(fresh);
        Ok(())
    }
}

/// Scores every distinct non-empty text, reusing cached records. Returns
/// the number of texts that had to be scored.
pub fn score_texts<'a, I>(
    texts: I,
    scorer: &dyn AttributeScorer,
    lexicon: &SentimentLexicon,
    cache: &mut ScoreCache,
) -> Result<usize, ScoreError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut todo: BTreeMap<String, &str> = BTreeMap::new();
    for t in texts {
        if t.trim().is_empty() {
            continue;
        }
        let h = content_hash(t);
        if !cache.entries.contains_key(&h) {
            todo.insert(h, t);
        }
    }
    let owned: Vec<String> = todo.values().map(|t| t.to_string()).collect();
    let results = scorer.score_batch(&owned);
    let analyzer = SentimentAnalyzer::new(lexicon);
    let mut records = Vec::with_capacity(owned.len());
    for ((h, t), r) in todo.into_iter().zip(results) {
        let a = r?;
        records.push((h, TextScores { sentiment: analyzer.score(t), toxicity: a.toxicity, attack: a.attack }));
    }
    let n = records.len();
    cache.extend(records)?;
    Ok(n)
}

/// Tokens that would be scored by the offline scorer.
pub fn stub_tokens(text: &str) -> Vec<String> {
    text::token_spans(text)
        .into_iter()
        .map(|(a, b)| text[a..b].to_lowercase())
        .collect()
}
