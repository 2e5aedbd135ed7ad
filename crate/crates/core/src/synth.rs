//! Synthetic archives with planted engagement effects.
//!
//! Each community gets regular members who start threads and reply to
//! newcomers, plus newcomers whose first post is a comment or a submission.
//! Replies are written as templated token sequences whose offline scores hit
//! drawn target values: sentiment through combinations of lexicon words,
//! toxicity and attack through binary-weighted calibration tokens that the
//! generator adds to the offline scorer's lexicon. Engagement is drawn from
//! a random-intercept logistic model of the scored reply features, and
//! engaged newcomers get a later post in another thread.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Exp, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CommunityType, Covariates, FirstPostEvent, FirstReply, Post, PostKind};
use crate::lexicon::{HateLexicon, HateLexiconEntry};
use crate::scoring::{logistic, logit, SentimentAnalyzer, SentimentLexicon, StubLexicons, StubScorer};
use crate::seeding::rng_for;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {0}")]
    Invalid(String),
}

const DAY: f64 = 86_400.0;
const HOUR: f64 = 3_600.0;
/// Logit offset of the calibration lexicon; scores start near 0.0003.
pub const CALIBRATION_BIAS: f64 = -8.0;
const CALIBRATION_BITS: usize = 12;
/// Weight of calibration token `k` is `2^(3 - k)`.
fn calibration_weight(k: usize) -> f64 {
    2f64.powi(3 - k as i32)
}
/// Logit added by one injected hate term.
pub const HATE_TERM_WEIGHT: f64 = 1.0;
pub const HATE_REPLACEMENT: &str = "group member";
pub const BOT_NAME: &str = "HelperBot";

const FILLERS: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "this", "that", "thread", "post", "about", "point", "people", "time",
    "thing", "way", "work", "here", "there", "some", "more", "think", "read", "said", "seen", "take", "today",
    "week", "comment", "part", "side", "idea", "topic", "reason", "case", "view", "line", "story", "also",
    "after", "before", "other", "what", "which", "when", "where", "then", "than", "into", "over", "under",
    "again", "someone", "anyone", "place", "group", "member", "link", "source", "article", "video", "picture",
    "year", "month", "city", "town", "street", "car", "phone", "game", "book", "music", "food", "water", "money",
];
const TOPIC_SUFFIXES: &[&str] = &["talk", "news", "meme", "rant", "gear", "lore"];

/// A finite mixture of Beta laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMixture {
    /// `(weight, alpha, beta)` per component; weights are normalized.
    pub components: Vec<(f64, f64, f64)>,
}

impl BetaMixture {
    pub fn single(alpha: f64, beta: f64) -> Self {
        BetaMixture { components: vec![(1.0, alpha, beta)] }
    }

    fn total(&self) -> f64 {
        self.components.iter().map(|c| c.0).sum()
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|&(w, a, b)| w * a / (a + b)).sum::<f64>() / self.total()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let second: f64 = self
            .components
            .iter()
            .map(|&(w, a, b)| {
                let mu = a / (a + b);
                let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
                w * (var + mu * mu)
            })
            .sum::<f64>()
            / self.total();
        second - m * m
    }

    fn validate(&self, what: &str) -> Result<(), SynthError> {
        if self.components.is_empty() || self.total() <= 0.0 {
            return Err(SynthError::Invalid(format!("{what}: mixture needs a positive total weight")));
        }
        for &(w, a, b) in &self.components {
            if !(w >= 0.0 && a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                return Err(SynthError::Invalid(format!("{what}: Beta parameters must be positive")));
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let mut pick = rng.random::<f64>() * self.total();
        let mut chosen = self.components[self.components.len() - 1];
        for &c in &self.components {
            if pick < c.0 {
                chosen = c;
                break;
            }
            pick -= c.0;
        }
        Beta::new(chosen.1, chosen.2).expect("validated").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyDistribution {
    pub sentiment_mean: f64,
    pub sentiment_sd: f64,
    pub toxicity: BetaMixture,
    pub attack: BetaMixture,
}

impl ReplyDistribution {
    pub fn hostile() -> Self {
        ReplyDistribution {
            sentiment_mean: -0.15,
            sentiment_sd: 0.45,
            toxicity: BetaMixture { components: vec![(0.6, 2.0, 8.0), (0.4, 6.0, 3.0)] },
            attack: BetaMixture { components: vec![(0.5, 2.0, 8.0), (0.5, 6.0, 3.0)] },
        }
    }

    pub fn benign() -> Self {
        ReplyDistribution {
            sentiment_mean: 0.25,
            sentiment_sd: 0.4,
            toxicity: BetaMixture::single(1.2, 12.0),
            attack: BetaMixture::single(1.2, 14.0),
        }
    }

    /// Mostly mild replies with a minority of clearly toxic or attacking
    /// ones, the two-mode shape classifier scores tend to have.
    pub fn polarized() -> Self {
        ReplyDistribution {
            sentiment_mean: 0.0,
            sentiment_sd: 0.5,
            toxicity: BetaMixture { components: vec![(0.8, 1.0, 12.0), (0.2, 8.0, 2.0)] },
            attack: BetaMixture { components: vec![(0.85, 1.0, 15.0), (0.15, 8.0, 2.0)] },
        }
    }

    /// Sentiment drawn from a Gaussian truncated to `[-1, 1]`.
    pub fn sample_sentiment(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.sentiment_sd == 0.0 {
            return self.sentiment_mean.clamp(-1.0, 1.0);
        }
        let n = Normal::new(self.sentiment_mean, self.sentiment_sd).expect("validated");
        for _ in 0..10_000 {
            let v: f64 = n.sample(rng);
            if (-1.0..=1.0).contains(&v) {
                return v;
            }
        }
        self.sentiment_mean.clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ByKind<T> {
    pub comment: T,
    pub submission: T,
}

impl<T: Copy> ByKind<T> {
    pub fn get(&self, kind: PostKind) -> T {
        match kind {
            PostKind::Comment => self.comment,
            PostKind::Submission => self.submission,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ByType<T> {
    pub hateful: T,
    pub non_hateful: T,
}

impl<T> ByType<T> {
    pub fn get(&self, t: CommunityType) -> &T {
        match t {
            CommunityType::Hateful => &self.hateful,
            CommunityType::NonHateful => &self.non_hateful,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCommunity {
    pub name: String,
    pub community_type: CommunityType,
    pub users: usize,
    pub ban_date: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    /// First newcomer arrival (seconds since epoch).
    pub start: i64,
    /// Length of the newcomer arrival window.
    pub span_days: f64,
    /// Data continue this long after the last ban date.
    pub tail_days: f64,
    pub communities: Vec<SynthCommunity>,
    /// Share of first posts that are comments.
    pub comment_share: f64,
    pub reply_probability: ByKind<f64>,
    pub reply_features: ByType<ReplyDistribution>,
    /// Engagement coefficients `[intercept, reply, reply·s, reply·t, reply·a]`.
    pub beta: ByType<ByKind<[f64; 5]>>,
    pub sigma2: f64,
    /// Fraction of hateful-community posts that carry a hate term.
    pub hate_word_rate: f64,
    pub hate_terms: usize,
    pub regulars: usize,
    pub mean_return_days: f64,
    pub mean_reply_hours: f64,
    /// Probability that a non-engaged newcomer follows up in the same thread.
    pub same_thread_followup_rate: f64,
    pub bot_reply_rate: f64,
    pub deleted_reply_rate: f64,
    pub missing_account_age_rate: f64,
    pub background_posts: usize,
}

/// Engagement coefficients by kind and community type from the published
/// mixed-model table.
pub fn published_betas() -> ByType<ByKind<[f64; 5]>> {
    ByType {
        hateful: ByKind {
            comment: [0.085, 0.09, 0.11, -0.05, -0.35],
            submission: [-0.435, 0.366, -0.015, 0.161, -0.255],
        },
        non_hateful: ByKind {
            comment: [0.13, 0.104, 0.06, 0.018, -0.168],
            submission: [-0.155, 0.228, 0.06, 0.038, -0.206],
        },
    }
}

impl SynthParams {
    /// `hateful` hateful and `non_hateful` non-hateful communities of
    /// `users` newcomers each, hostile vs. benign replies, published
    /// coefficients.
    pub fn balanced(seed: u64, hateful: usize, non_hateful: usize, users: usize) -> Self {
        let start = 1_500_000_000;
        let span_days = 365.0;
        let end_of_arrivals = start + (span_days * DAY) as i64;
        let mut communities = Vec::new();
        // Interleave types so names carry no type information.
        let total = hateful + non_hateful;
        let mut types: Vec<CommunityType> = (0..total)
            .map(|i| if i < hateful { CommunityType::Hateful } else { CommunityType::NonHateful })
            .collect();
        types.shuffle(&mut rng_for(seed, &["community-types"]));
        for (i, t) in types.into_iter().enumerate() {
            let ban_date = match t {
                CommunityType::Hateful => Some(end_of_arrivals + ((i % 3) as i64 + 1) * 10 * DAY as i64),
                CommunityType::NonHateful => None,
            };
            communities.push(SynthCommunity { name: format!("forum{i:02}"), community_type: t, users, ban_date });
        }
        SynthParams {
            seed,
            start,
            span_days,
            tail_days: 30.0,
            communities,
            comment_share: 0.78,
            reply_probability: ByKind { comment: 0.5, submission: 0.5 },
            reply_features: ByType { hateful: ReplyDistribution::hostile(), non_hateful: ReplyDistribution::benign() },
            beta: published_betas(),
            sigma2: 0.16,
            hate_word_rate: 0.08,
            hate_terms: 30,
            regulars: 12,
            mean_return_days: 7.0,
            mean_reply_hours: 3.0,
            same_thread_followup_rate: 0.1,
            bot_reply_rate: 0.03,
            deleted_reply_rate: 0.005,
            missing_account_age_rate: 0.0,
            background_posts: 4000,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Invalid(m));
        if self.communities.is_empty() {
            return bad("no communities".into());
        }
        let mut names = BTreeSet::new();
        for c in &self.communities {
            if c.users == 0 {
                return bad(format!("community `{}` has 0 users", c.name));
            }
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_') {
                return bad(format!("community name `{}` must be ASCII alphanumeric or underscore", c.name));
            }
            if !names.insert(&c.name) {
                return bad(format!("duplicate community `{}`", c.name));
            }
            if let Some(b) = c.ban_date {
                if b <= self.start {
                    return bad(format!("ban date of `{}` precedes the start", c.name));
                }
            }
        }
        let probs = [
            ("comment_share", self.comment_share),
            ("reply_probability.comment", self.reply_probability.comment),
            ("reply_probability.submission", self.reply_probability.submission),
            ("hate_word_rate", self.hate_word_rate),
            ("same_thread_followup_rate", self.same_thread_followup_rate),
            ("bot_reply_rate", self.bot_reply_rate),
            ("deleted_reply_rate", self.deleted_reply_rate),
            ("missing_account_age_rate", self.missing_account_age_rate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for t in CommunityType::ALL {
            let d = self.reply_features.get(t);
            d.toxicity.validate("toxicity")?;
            d.attack.validate("attack")?;
            if !(d.sentiment_sd >= 0.0 && d.sentiment_mean.is_finite()) {
                return bad("sentiment distribution needs finite mean and nonnegative sd".into());
            }
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("sigma2 must be finite and nonnegative".into());
        }
        if self.span_days <= 0.0 || self.mean_return_days <= 0.0 || self.mean_reply_hours <= 0.0 || self.tail_days < 0.0 {
            return bad("time scales must be positive".into());
        }
        if self.regulars == 0 {
            return bad("at least one regular member is needed to start threads".into());
        }
        if self.hate_word_rate > 0.0 && self.hate_terms == 0 {
            return bad("hate_word_rate > 0 needs at least one hate term".into());
        }
        Ok(())
    }

    /// Last timestamp present in the archive.
    pub fn end_of_data(&self) -> i64 {
        let arrivals = self.start + (self.span_days * DAY) as i64;
        let last_ban = self.communities.iter().filter_map(|c| c.ban_date).max().unwrap_or(arrivals);
        last_ban.max(arrivals) + (self.tail_days * DAY) as i64
    }
}

/// Builds reply and post texts that score to requested values.
#[derive(Debug, Clone)]
pub struct TextRealizer {
    words: Vec<(String, f64)>,
    /// Sorted sums of one to three lexicon words (with repetition).
    sums: Vec<(f64, [u16; 3], u8)>,
    max_valence: usize,
    min_valence: usize,
    hate_terms: Vec<String>,
}

pub fn toxicity_token(k: usize) -> String {
    format!("rude{k:02}")
}

pub fn attack_token(k: usize) -> String {
    format!("jab{k:02}")
}

pub fn hate_term(k: usize) -> String {
    format!("hterm{:02}", k + 1)
}

/// Stub lexicon for synthetic corpora: the builtin vocabulary plus
/// calibration tokens and hate terms, with low biases.
pub fn synth_stub_lexicons(hate_terms: usize) -> StubLexicons {
    let mut lex = StubLexicons::builtin();
    lex.toxicity_bias = CALIBRATION_BIAS;
    lex.attack_bias = CALIBRATION_BIAS;
    for k in 0..CALIBRATION_BITS {
        lex.toxic.insert(toxicity_token(k), calibration_weight(k));
        lex.insults.insert(attack_token(k), calibration_weight(k));
    }
    for k in 0..hate_terms {
        lex.toxic.insert(hate_term(k), HATE_TERM_WEIGHT);
    }
    lex
}

pub fn synth_hate_lexicon(hate_terms: usize) -> HateLexicon {
    let entries = (0..hate_terms)
        .map(|k| {
            (hate_term(k), HateLexiconEntry { replacement: HATE_REPLACEMENT.into(), note: "synthetic placeholder".into() })
        })
        .collect();
    HateLexicon::new(entries).expect("placeholder lexicon is valid")
}

impl TextRealizer {
    pub fn new(lexicon: &SentimentLexicon, hate_terms: usize) -> Self {
        let mut words: Vec<(String, f64)> = lexicon
            .valence
            .iter()
            .filter(|(w, v)| **v != 0.0 && !lexicon.boosters.contains_key(*w) && !lexicon.negations.contains(*w))
            .filter(|(w, _)| w.chars().all(|c| c.is_ascii_lowercase()))
            .map(|(w, v)| (w.clone(), *v))
            .collect();
        words.sort_by(|a, b| a.0.cmp(&b.0));
        let n = words.len();
        let mut sums = Vec::new();
        for i in 0..n {
            sums.push((words[i].1, [i as u16, 0, 0], 1u8));
            for j in i..n {
                sums.push((words[i].1 + words[j].1, [i as u16, j as u16, 0], 2));
                for k in j..n {
                    sums.push((words[i].1 + words[j].1 + words[k].1, [i as u16, j as u16, k as u16], 3));
                }
            }
        }
        sums.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
        let max_valence = (0..n).max_by(|&a, &b| words[a].1.total_cmp(&words[b].1)).unwrap_or(0);
        let min_valence = (0..n).min_by(|&a, &b| words[a].1.total_cmp(&words[b].1)).unwrap_or(0);
        TextRealizer { words, sums, max_valence, min_valence, hate_terms: (0..hate_terms).map(hate_term).collect() }
    }

    /// Lexicon words whose summed valence gives compound score ≈ `target`.
    pub fn sentiment_words(&self, target: f64) -> Vec<String> {
        let c = target.clamp(-0.985, 0.985);
        if c.abs() < 0.01 || self.words.is_empty() {
            return Vec::new();
        }
        let mut s = c * 15f64.sqrt() / (1.0 - c * c).sqrt();
        let mut out = Vec::new();
        let three_max = 3.0 * self.words[self.max_valence].1;
        let three_min = 3.0 * self.words[self.min_valence].1;
        while s > three_max {
            out.push(self.words[self.max_valence].0.clone());
            s -= self.words[self.max_valence].1;
        }
        while s < three_min {
            out.push(self.words[self.min_valence].0.clone());
            s -= self.words[self.min_valence].1;
        }
        let pos = self.sums.partition_point(|e| e.0 < s);
        let best = [pos.checked_sub(1), Some(pos).filter(|&p| p < self.sums.len())]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (self.sums[a].0 - s).abs().total_cmp(&(self.sums[b].0 - s).abs()))
            .expect("nonempty sums");
        let (_, idx, len) = self.sums[best];
        if (s.abs()) > (self.sums[best].0 - s).abs() {
            for &i in &idx[..len as usize] {
                out.push(self.words[i as usize].0.clone());
            }
        }
        out
    }

    fn calibration(target: f64, token: fn(usize) -> String) -> Vec<String> {
        let l = (logit(target.clamp(1e-9, 1.0 - 1e-9)) - CALIBRATION_BIAS).max(0.0);
        let max_units = (1u32 << CALIBRATION_BITS) - 1;
        let units = ((l * 256.0).round() as u32).min(max_units);
        (0..CALIBRATION_BITS)
            .filter(|&k| units & (1 << (CALIBRATION_BITS - 1 - k)) != 0)
            .map(token)
            .collect()
    }

    pub fn toxicity_tokens(target: f64) -> Vec<String> {
        Self::calibration(target, toxicity_token)
    }

    pub fn attack_tokens(target: f64) -> Vec<String> {
        Self::calibration(target, attack_token)
    }

    /// Shuffles content tokens among `fillers` neutral words.
    fn compose(rng: &mut ChaCha8Rng, mut tokens: Vec<String>, fillers: usize, topic: &[String]) -> String {
        for _ in 0..fillers {
            if !topic.is_empty() && rng.random::<f64>() < 0.15 {
                tokens.push(topic.choose(rng).expect("nonempty").clone());
            } else {
                tokens.push((*FILLERS.choose(rng).expect("nonempty")).to_string());
            }
        }
        tokens.shuffle(rng);
        tokens.join(" ")
    }

    fn maybe_hate(&self, rng: &mut ChaCha8Rng, rate: f64, tokens: &mut Vec<String>) -> bool {
        if rate > 0.0 && !self.hate_terms.is_empty() && rng.random::<f64>() < rate {
            tokens.push(self.hate_terms.choose(rng).expect("nonempty").clone());
            true
        } else {
            false
        }
    }
}

/// Planted and scored features of one generated reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyTruth {
    pub post_id: String,
    pub community: String,
    pub kind: PostKind,
    pub planted: [f64; 3],
    /// Scores of the generated text (sentiment, toxicity, attack).
    pub realized: [f64; 3],
    pub deleted: bool,
    pub hate_term: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindTruth {
    pub events: usize,
    pub treated: usize,
    pub engaged_treated: usize,
    pub engaged_control: usize,
    /// Model-implied ERR: mean treated probability over the control
    /// probability; `None` without treated newcomers.
    pub expected_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunityTruth {
    pub name: String,
    pub community_type: CommunityType,
    pub ban_date: Option<i64>,
    pub random_intercept: f64,
    pub newcomers: usize,
    pub comment: KindTruth,
    pub submission: KindTruth,
    /// Mean realized reply features (sentiment, toxicity, attack).
    pub mean_reply_features: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub params: SynthParams,
    pub end_of_data: i64,
    pub communities: Vec<CommunityTruth>,
    pub replies: Vec<ReplyTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub posts: Vec<Post>,
    pub background: Vec<Post>,
    pub truth: SynthTruth,
    /// Ratings of candidate words by three annotators.
    pub annotations: Vec<(String, Vec<u8>)>,
    pub stub_lexicons: StubLexicons,
    pub hate_lexicon: HateLexicon,
}

fn topic_words(name: &str) -> Vec<String> {
    let base: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
    TOPIC_SUFFIXES.iter().map(|s| format!("{base}{s}")).collect()
}

struct Builder<'a> {
    prefix: String,
    community: &'a str,
    counter: usize,
    posts: Vec<Post>,
}

impl Builder<'_> {
    fn push(&mut self, author: &str, created_at: i64, parent: Option<&str>, link: Option<&str>, body: String, acct: Option<i64>) -> String {
        let id = format!("{}{:06}", self.prefix, self.counter);
        self.counter += 1;
        let link_id = link.map_or_else(|| id.clone(), str::to_string);
        self.posts.push(Post {
            id: id.clone(),
            author: author.to_string(),
            community: self.community.to_string(),
            created_at,
            parent_id: parent.map(str::to_string),
            link_id,
            body,
            author_created_at: acct,
        });
        id
    }
}

struct Generated {
    posts: Vec<Post>,
    truth: CommunityTruth,
    replies: Vec<ReplyTruth>,
}

fn generate_community(
    params: &SynthParams,
    index: usize,
    realizer: &TextRealizer,
    analyzer: &SentimentAnalyzer,
    stub: &StubScorer,
    end_of_data: i64,
) -> Generated {
    let spec = &params.communities[index];
    let mut rng = rng_for(params.seed, &["community", &spec.name]);
    let ctype = spec.community_type;
    let hate_rate = if ctype == CommunityType::Hateful { params.hate_word_rate } else { 0.0 };
    let dist = params.reply_features.get(ctype);
    let beta = params.beta.get(ctype);
    let horizon = spec.ban_date.unwrap_or(end_of_data).min(end_of_data);
    let topic = topic_words(&spec.name);
    let u = if params.sigma2 > 0.0 {
        Normal::new(0.0, params.sigma2.sqrt()).expect("valid").sample(&mut rng)
    } else {
        0.0
    };
    let span = params.span_days * DAY;
    let start = params.start;
    let age_law = LogNormal::new((200.0 * DAY).ln(), 1.0).expect("valid");
    let return_law = Exp::new(1.0 / (params.mean_return_days * DAY)).expect("valid");
    let reply_law = Exp::new(1.0 / (params.mean_reply_hours * HOUR)).expect("valid");
    let followup_law = Exp::new(1.0 / HOUR).expect("valid");

    let mut b = Builder { prefix: format!("{}p", spec.name), community: &spec.name, counter: 0, posts: Vec::new() };

    let regulars: Vec<(String, i64)> = (0..params.regulars)
        .map(|k| (format!("{}_reg{k:02}", spec.name), start - (400.0 * DAY) as i64 - rng.random_range(0..(400.0 * DAY) as i64)))
        .collect();
    // Threads started by regulars, sorted by time.
    let n_threads = (spec.users / 15).max(20);
    let mut thread_times: Vec<i64> = (0..n_threads)
        .map(|k| {
            if k < 5 {
                start - (30.0 * DAY) as i64 + k as i64 * 3600
            } else {
                start + (rng.random::<f64>() * span) as i64
            }
        })
        .collect();
    thread_times.sort_unstable();
    let mut threads: Vec<(i64, String)> = Vec::with_capacity(n_threads);
    for t in thread_times {
        let (who, acct) = regulars.choose(&mut rng).expect("regulars").clone();
        let mut toks = realizer.sentiment_words(rng.random_range(-0.3..0.5));
        realizer.maybe_hate(&mut rng, hate_rate, &mut toks);
        let n = rng.random_range(4..16);
        let body = TextRealizer::compose(&mut rng, toks, n, &topic);
        let id = b.push(&who, t, None, None, body, Some(acct));
        threads.push((t, id));
    }
    let pick_thread = |rng: &mut ChaCha8Rng, threads: &[(i64, String)], before: i64, avoid: Option<&str>| -> Option<String> {
        let end = threads.partition_point(|(t, _)| *t < before);
        if end == 0 {
            return None;
        }
        for _ in 0..8 {
            let cand = &threads[rng.random_range(0..end)].1;
            if Some(cand.as_str()) != avoid {
                return Some(cand.clone());
            }
        }
        threads[..end].iter().map(|(_, id)| id).find(|id| Some(id.as_str()) != avoid).cloned()
    };

    let mut replies = Vec::new();
    let mut kind_stats: BTreeMap<PostKind, (usize, usize, usize, usize, f64)> = BTreeMap::new();
    let mut feature_sums = [0.0; 3];
    let mut scored_replies = 0usize;

    for i in 0..spec.users {
        let user = format!("{}_u{i:05}", spec.name);
        let t0 = start + (rng.random::<f64>() * span) as i64;
        let acct = if rng.random::<f64>() < params.missing_account_age_rate {
            None
        } else {
            Some(t0 - age_law.sample(&mut rng) as i64)
        };
        let kind = if rng.random::<f64>() < params.comment_share { PostKind::Comment } else { PostKind::Submission };

        // First post.
        let mut toks = realizer.sentiment_words((Normal::new(0.05, 0.35).expect("valid").sample(&mut rng) as f64).clamp(-0.95, 0.95));
        realizer.maybe_hate(&mut rng, hate_rate, &mut toks);
        let n = rng.random_range(3..24);
        let body = TextRealizer::compose(&mut rng, toks, n, &topic);
        let (first_id, root) = match kind {
            PostKind::Submission => {
                let id = b.push(&user, t0, None, None, body, acct);
                threads.insert(threads.partition_point(|(t, _)| *t <= t0), (t0, id.clone()));
                (id.clone(), id)
            }
            PostKind::Comment => {
                let root = pick_thread(&mut rng, &threads, t0, None).expect("early threads exist");
                // Nest level 1, 2 or 3; deeper levels hang under regulars' comments.
                let depth = match rng.random::<f64>() {
                    x if x < 0.6 => 1,
                    x if x < 0.9 => 2,
                    _ => 3,
                };
                let mut parent = root.clone();
                for d in 1..depth {
                    let (who, racct) = regulars.choose(&mut rng).expect("regulars").clone();
                    let n = rng.random_range(2..10);
                    let body = TextRealizer::compose(&mut rng, Vec::new(), n, &topic);
                    parent = b.push(&who, t0 - 60 * (depth - d) as i64, Some(&parent), Some(&root), body, Some(racct));
                }
                let id = b.push(&user, t0, Some(&parent), Some(&root), body, acct);
                (id, root)
            }
        };

        if rng.random::<f64>() < params.bot_reply_rate {
            let n = rng.random_range(5..12);
            let body = TextRealizer::compose(&mut rng, Vec::new(), n, &[]);
            b.push(BOT_NAME, t0 + 30, Some(&first_id), Some(&root), body, Some(start - (1000.0 * DAY) as i64));
        }

        // First reply.
        let treated = rng.random::<f64>() < params.reply_probability.get(kind);
        let mut features = (0.0, 0.0, 0.0);
        if treated {
            let planted = [dist.sample_sentiment(&mut rng), dist.toxicity.sample(&mut rng), dist.attack.sample(&mut rng)];
            let (who, racct) = regulars.choose(&mut rng).expect("regulars").clone();
            let delay = 60 + reply_law.sample(&mut rng) as i64;
            let deleted = rng.random::<f64>() < params.deleted_reply_rate;
            let mut toks = realizer.sentiment_words(planted[0]);
            toks.extend(TextRealizer::toxicity_tokens(planted[1]));
            toks.extend(TextRealizer::attack_tokens(planted[2]));
            let hate = realizer.maybe_hate(&mut rng, hate_rate, &mut toks);
            let n = rng.random_range(2..12);
            let text = TextRealizer::compose(&mut rng, toks, n, &topic);
            let (body, realized) = if deleted {
                ("[deleted]".to_string(), [0.0; 3])
            } else {
                let a = stub.scores(&text);
                (text.clone(), [analyzer.score(&text), a.toxicity, a.attack])
            };
            let reply_id = b.push(&who, t0 + delay, Some(&first_id), Some(&root), body, Some(racct));
            if !deleted {
                for k in 0..3 {
                    feature_sums[k] += realized[k];
                }
                scored_replies += 1;
            }
            features = (realized[0], realized[1], realized[2]);
            replies.push(ReplyTruth {
                post_id: reply_id,
                community: spec.name.clone(),
                kind,
                planted,
                realized,
                deleted,
                hate_term: hate && !deleted,
            });
        }

        let bk = beta.get(kind);
        let eta_control = bk[0] + u;
        let eta = if treated { eta_control + bk[1] + bk[2] * features.0 + bk[3] * features.1 + bk[4] * features.2 } else { eta_control };
        let engaged = rng.random::<f64>() < logistic(eta);
        let entry = kind_stats.entry(kind).or_insert((0, 0, 0, 0, 0.0));
        entry.0 += 1;
        if treated {
            entry.1 += 1;
            entry.2 += engaged as usize;
            entry.4 += logistic(eta);
        } else {
            entry.3 += engaged as usize;
        }

        if engaged {
            let t1 = t0 + 60 + return_law.sample(&mut rng) as i64;
            let n = rng.random_range(3..16);
            let mut toks = realizer.sentiment_words(rng.random_range(-0.3..0.5));
            realizer.maybe_hate(&mut rng, hate_rate, &mut toks);
            let body = TextRealizer::compose(&mut rng, toks, n, &topic);
            if rng.random::<f64>() < 0.2 {
                b.push(&user, t1, None, None, body, acct);
            } else if let Some(other) = pick_thread(&mut rng, &threads, t1, Some(&root)) {
                b.push(&user, t1, Some(&other), Some(&other), body, acct);
            } else {
                b.push(&user, t1, None, None, body, acct);
            }
        } else if rng.random::<f64>() < params.same_thread_followup_rate {
            let t1 = t0 + 60 + followup_law.sample(&mut rng) as i64;
            let n = rng.random_range(3..15);
            let body = TextRealizer::compose(&mut rng, Vec::new(), n, &topic);
            b.push(&user, t1, Some(&first_id), Some(&root), body, acct);
        }
    }

    let kind_truth = |kind: PostKind| -> KindTruth {
        let (events, treated, et, ec, psum) = kind_stats.get(&kind).copied().unwrap_or((0, 0, 0, 0, 0.0));
        let p_control = logistic(beta.get(kind)[0] + u);
        KindTruth {
            events,
            treated,
            engaged_treated: et,
            engaged_control: ec,
            expected_err: (treated > 0).then(|| psum / treated as f64 / p_control),
        }
    };
    let mut posts: Vec<Post> = b.posts.into_iter().filter(|p| p.created_at <= horizon).collect();
    posts.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    let denom = scored_replies.max(1) as f64;
    Generated {
        posts,
        truth: CommunityTruth {
            name: spec.name.clone(),
            community_type: ctype,
            ban_date: spec.ban_date,
            random_intercept: u,
            newcomers: spec.users,
            comment: kind_truth(PostKind::Comment),
            submission: kind_truth(PostKind::Submission),
            mean_reply_features: [feature_sums[0] / denom, feature_sums[1] / denom, feature_sums[2] / denom],
        },
        replies,
    }
}

fn background_posts(params: &SynthParams, realizer: &TextRealizer) -> Vec<Post> {
    let mut rng = rng_for(params.seed, &["background"]);
    let all_topics: Vec<String> = params.communities.iter().flat_map(|c| topic_words(&c.name)).collect();
    let mut out = Vec::with_capacity(params.background_posts);
    for i in 0..params.background_posts {
        let t = params.start + (rng.random::<f64>() * params.span_days * DAY) as i64;
        let mut toks = realizer.sentiment_words(rng.random_range(-0.4..0.6));
        if rng.random::<f64>() < 0.3 {
            toks.extend(TextRealizer::toxicity_tokens(rng.random_range(0.0..0.6)));
        }
        let n = rng.random_range(5..30);
        let body = TextRealizer::compose(&mut rng, toks, n, &all_topics);
        let id = format!("bgp{i:06}");
        out.push(Post {
            id: id.clone(),
            author: format!("bg_u{:05}", rng.random_range(0..params.background_posts.max(1))),
            community: "background".into(),
            created_at: t,
            parent_id: None,
            link_id: id,
            body,
            author_created_at: Some(t - (100.0 * DAY) as i64),
        });
    }
    out
}

fn annotation_sheet(params: &SynthParams) -> Vec<(String, Vec<u8>)> {
    let mut rng = rng_for(params.seed, &["annotations"]);
    let mut rows = Vec::new();
    for k in 0..params.hate_terms {
        rows.push((hate_term(k), vec![2, 2, if rng.random::<f64>() < 0.7 { 2 } else { 1 }]));
    }
    for c in &params.communities {
        for w in topic_words(&c.name) {
            let r = if rng.random::<f64>() < 0.2 { vec![1, 0, 0] } else { vec![0, 0, 0] };
            rows.push((w, r));
        }
    }
    for k in 0..CALIBRATION_BITS {
        rows.push((toxicity_token(k), vec![1, 0, 0]));
        rows.push((attack_token(k), vec![0, 1, 0]));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    rows
}

/// Generates the archive, a background corpus, annotations and the truth
/// ledger. Communities are generated in parallel, each from its own keyed
/// random stream, so the output does not depend on thread count.
pub fn generate_corpus(params: &SynthParams) -> Result<SynthCorpus, SynthError> {
    params.validate()?;
    let lexicon = SentimentLexicon::builtin();
    let realizer = TextRealizer::new(&lexicon, params.hate_terms);
    let analyzer = SentimentAnalyzer::new(&lexicon);
    let stub = StubScorer::new(synth_stub_lexicons(params.hate_terms));
    let end = params.end_of_data();
    let generated: Vec<Generated> = (0..params.communities.len())
        .into_par_iter()
        .map(|i| generate_community(params, i, &realizer, &analyzer, &stub, end))
        .collect();
    let mut posts = Vec::new();
    let mut communities = Vec::new();
    let mut replies = Vec::new();
    for g in generated {
        posts.extend(g.posts);
        communities.push(g.truth);
        replies.extend(g.replies);
    }
    posts.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
    Ok(SynthCorpus {
        posts,
        background: background_posts(params, &realizer),
        truth: SynthTruth { params: params.clone(), end_of_data: end, communities, replies },
        annotations: annotation_sheet(params),
        stub_lexicons: stub.lexicons().clone(),
        hate_lexicon: synth_hate_lexicon(params.hate_terms),
    })
}

/// Serializes posts in the archive's line format.
pub fn to_archive_lines(posts: &[Post]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        author: &'a str,
        subreddit: &'a str,
        created_utc: i64,
        #[serde(skip_serializing_if = "Option::is_none")]
        parent_id: Option<&'a str>,
        link_id: &'a str,
        body: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        author_created_utc: Option<i64>,
    }
    let mut out = String::new();
    for p in posts {
        let line = Line {
            id: &p.id,
            author: &p.author,
            subreddit: &p.community,
            created_utc: p.created_at,
            parent_id: p.parent_id.as_deref(),
            link_id: &p.link_id,
            body: &p.body,
            author_created_utc: p.author_created_at,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Newcomer events drawn straight from the engagement model, without text
/// or threads, for checking coefficient recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDesign {
    pub seed: u64,
    pub groups: usize,
    pub users_per_group: usize,
    pub reply_probability: f64,
    pub features: ReplyDistribution,
    /// `[intercept, reply, reply·s, reply·t, reply·a]`.
    pub beta: [f64; 5],
    pub sigma2: f64,
}

impl ModelDesign {
    /// Hateful-comment coefficients of the published table, σ² = 0.16,
    /// 25 groups of 4000 newcomers.
    pub fn published(seed: u64) -> Self {
        ModelDesign {
            seed,
            groups: 25,
            users_per_group: 4000,
            reply_probability: 0.5,
            features: ReplyDistribution::polarized(),
            beta: published_betas().hateful.comment,
            sigma2: 0.16,
        }
    }
}

/// Draws the design's events (all comments, community `group00`, ...) and
/// returns them with each group's true random intercept. Groups use
/// separate keyed streams.
pub fn model_events(design: &ModelDesign) -> Result<(Vec<FirstPostEvent>, Vec<f64>), SynthError> {
    if design.groups == 0 || design.users_per_group == 0 {
        return Err(SynthError::Invalid("a design needs at least one group and one user".into()));
    }
    if !(0.0..=1.0).contains(&design.reply_probability) {
        return Err(SynthError::Invalid(format!("reply probability {} outside [0, 1]", design.reply_probability)));
    }
    if !(design.sigma2 >= 0.0 && design.sigma2.is_finite()) {
        return Err(SynthError::Invalid(format!("sigma2 must be finite and nonnegative, got {}", design.sigma2)));
    }
    design.features.toxicity.validate("toxicity")?;
    design.features.attack.validate("attack")?;
    let b = design.beta;
    let mut events = Vec::with_capacity(design.groups * design.users_per_group);
    let mut intercepts = Vec::with_capacity(design.groups);
    for g in 0..design.groups {
        let community = format!("group{g:02}");
        let mut rng = rng_for(design.seed, &["model-events", &community]);
        let u = if design.sigma2 > 0.0 {
            Normal::new(0.0, design.sigma2.sqrt()).expect("finite").sample(&mut rng)
        } else {
            0.0
        };
        intercepts.push(u);
        for i in 0..design.users_per_group {
            let treated = rng.random::<f64>() < design.reply_probability;
            let mut eta = b[0] + u;
            let first_reply = treated.then(|| {
                let s = design.features.sample_sentiment(&mut rng);
                let t = design.features.toxicity.sample(&mut rng);
                let a = design.features.attack.sample(&mut rng);
                eta += b[1] + b[2] * s + b[3] * t + b[4] * a;
                FirstReply { post_id: format!("{community}_r{i:05}"), created_at: 0, sentiment: s, toxicity: t, attack: a, scored: true }
            });
            let engaged = rng.random::<f64>() < logistic(eta);
            events.push(FirstPostEvent {
                user: format!("{community}_u{i:05}"),
                community: community.clone(),
                kind: PostKind::Comment,
                post_id: format!("{community}_p{i:05}"),
                thread_root: format!("{community}_p{i:05}"),
                first_post_time: i as i64,
                covariates: Covariates { account_age: Some(0), nest_level: 1, valence: 0.0, word_count: 1 },
                treated,
                first_reply,
                engaged,
            });
        }
    }
    Ok((events, intercepts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::sentiment;
    use crate::text;

    fn small(seed: u64) -> SynthParams {
        let mut p = SynthParams::balanced(seed, 1, 1, 300);
        p.background_posts = 50;
        p
    }

    #[test]
    fn fillers_carry_no_signal() {
        let lex = SentimentLexicon::builtin();
        let stub = synth_stub_lexicons(30);
        for w in FILLERS {
            assert!(!lex.contains(w) && !lex.boosters.contains_key(*w) && !lex.negations.contains(*w), "{w}");
            assert!(!stub.toxic.contains_key(*w) && !stub.insults.contains_key(*w) && !stub.second_person.contains(*w), "{w}");
        }
        for s in TOPIC_SUFFIXES {
            assert!(!lex.contains(s));
        }
        assert!(synth_hate_lexicon(30).check_against_sentiment(&lex).is_ok());
    }

    #[test]
    fn calibration_hits_targets() {
        let stub = StubScorer::new(synth_stub_lexicons(0));
        for target in [0.001, 0.05, 0.2, 0.5, 0.77, 0.95, 0.999] {
            let toks = TextRealizer::toxicity_tokens(target);
            let s = stub.scores(&toks.join(" "));
            assert!((s.toxicity - target).abs() < 2e-3, "{target} -> {}", s.toxicity);
            let toks = TextRealizer::attack_tokens(target);
            let s = stub.scores(&toks.join(" "));
            assert!((s.attack - target).abs() < 2e-3, "{target} -> {}", s.attack);
        }
    }

    #[test]
    fn sentiment_words_hit_targets() {
        let lex = SentimentLexicon::builtin();
        let r = TextRealizer::new(&lex, 0);
        for target in [-0.97, -0.6, -0.2, -0.05, 0.0, 0.05, 0.3, 0.8, 0.97] {
            let words = r.sentiment_words(target);
            let got = sentiment(&words.join(" the "), &lex);
            assert!((got - target).abs() < 0.05, "{target} -> {got} via {words:?}");
        }
    }

    #[test]
    fn beta_mixture_moments() {
        let m = BetaMixture { components: vec![(0.8, 1.0, 20.0), (0.2, 20.0, 2.0)] };
        let expected = 0.8 / 21.0 + 0.2 * 20.0 / 22.0;
        assert!((m.mean() - expected).abs() < 1e-12);
        let mut rng = rng_for(1, &["beta"]);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - m.mean()).abs() < 3.0 * (m.variance() / n as f64).sqrt());
    }

    #[test]
    fn infeasible_params_are_rejected() {
        let mut p = small(1);
        p.communities[0].users = 0;
        assert!(generate_corpus(&p).is_err());
        let mut p = small(1);
        p.reply_probability.comment = 1.5;
        assert!(generate_corpus(&p).is_err());
        let mut p = small(1);
        p.reply_features.hateful.attack = BetaMixture::single(0.0, 1.0);
        assert!(generate_corpus(&p).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small(5)).unwrap();
        let b = generate_corpus(&small(5)).unwrap();
        assert_eq!(to_archive_lines(&a.posts), to_archive_lines(&b.posts));
        assert_eq!(a.truth, b.truth);
        let c = generate_corpus(&small(6)).unwrap();
        assert_ne!(to_archive_lines(&a.posts), to_archive_lines(&c.posts));
    }

    #[test]
    fn archive_round_trips_through_the_parser() {
        let corpus = generate_corpus(&small(2)).unwrap();
        let lines = to_archive_lines(&corpus.posts);
        let parsed = crate::corpus::parse_archive(lines.as_bytes()).unwrap();
        assert_eq!(parsed.malformed(), 0);
        assert_eq!(parsed.posts, corpus.posts);
    }

    #[test]
    fn hate_terms_only_in_hateful_communities() {
        let corpus = generate_corpus(&small(3)).unwrap();
        let hateful: BTreeSet<&str> = corpus
            .truth
            .communities
            .iter()
            .filter(|c| c.community_type == CommunityType::Hateful)
            .map(|c| c.name.as_str())
            .collect();
        let lex = &corpus.hate_lexicon;
        let mut seen = 0;
        for p in &corpus.posts {
            if text::vocab_tokens(&p.body).any(|t| lex.contains(&t)) {
                assert!(hateful.contains(p.community.as_str()));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn no_reply_probability_means_no_replies() {
        let mut p = small(4);
        p.reply_probability = ByKind { comment: 0.0, submission: 0.0 };
        let corpus = generate_corpus(&p).unwrap();
        assert!(corpus.truth.replies.is_empty());
        assert!(corpus.truth.communities.iter().all(|c| c.comment.expected_err.is_none()));
    }
}
