//! Post archives, thread reconstruction and newcomer first-post events.
//!
//! Archives are newline-delimited JSON, one post per line, in the common
//! Reddit dump layout (`subreddit`, `created_utc`, `parent_id`, ...).
//! Gzip-compressed files are detected by their magic bytes.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::scoring::TextScores;
use crate::text;

/// Fraction of malformed lines above which an archive is rejected.
pub const MAX_MALFORMED_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read archive: {0}")]
    Io(#[from] std::io::Error),
    #[error(
        "{malformed} of {total} lines are malformed (first bad line: {first_bad_line}); \
         the input is probably not in the expected archive schema"
    )]
    SchemaMismatch {
        malformed: usize,
        total: usize,
        first_bad_line: usize,
    },
    #[error("parent cycle detected: {}", .0.join(" -> "))]
    ParentCycle(Vec<String>),
}

/// One comment or submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub author: String,
    pub community: String,
    pub created_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    /// Thread root id. Equal to `id` for submissions.
    pub link_id: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub author_created_at: Option<i64>,
}

impl Post {
    pub fn is_submission(&self) -> bool {
        self.parent_id.is_none()
    }

    pub fn kind(&self) -> PostKind {
        if self.is_submission() {
            PostKind::Submission
        } else {
            PostKind::Comment
        }
    }

    /// Deleted or removed placeholder bodies. These stay in the corpus for
    /// threading but are never scored.
    pub fn is_deleted(&self) -> bool {
        let b = self.body.trim();
        b.is_empty() || b == "[deleted]" || b == "[removed]"
    }

    pub fn thread_root(&self) -> &str {
        &self.link_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostKind {
    Comment,
    Submission,
}

impl PostKind {
    pub const ALL: [PostKind; 2] = [PostKind::Comment, PostKind::Submission];

    pub fn as_str(self) -> &'static str {
        match self {
            PostKind::Comment => "comment",
            PostKind::Submission => "submission",
        }
    }
}

impl std::fmt::Display for PostKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Whether a community was classified as hateful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunityType {
    Hateful,
    NonHateful,
}

impl CommunityType {
    pub const ALL: [CommunityType; 2] = [CommunityType::Hateful, CommunityType::NonHateful];

    pub fn as_str(self) -> &'static str {
        match self {
            CommunityType::Hateful => "hateful",
            CommunityType::NonHateful => "non_hateful",
        }
    }
}

impl std::fmt::Display for CommunityType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn int_like<'de, D: Deserializer<'de>>(d: D) -> Result<Option<i64>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum IntLike {
        Int(i64),
        Float(f64),
        Str(String),
    }
    Ok(match Option::<IntLike>::deserialize(d)? {
        None => None,
        Some(IntLike::Int(v)) => Some(v),
        Some(IntLike::Float(v)) if v.is_finite() => Some(v as i64),
        Some(IntLike::Float(_)) => None,
        Some(IntLike::Str(s)) => s.trim().parse::<f64>().ok().map(|v| v as i64),
    })
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    author: String,
    #[serde(alias = "community")]
    subreddit: String,
    #[serde(alias = "created_at", deserialize_with = "int_like", default)]
    created_utc: Option<i64>,
    #[serde(default)]
    parent_id: Option<String>,
    #[serde(default)]
    link_id: Option<String>,
    #[serde(default)]
    body: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    selftext: Option<String>,
    #[serde(
        alias = "author_created_at",
        deserialize_with = "int_like",
        default
    )]
    author_created_utc: Option<i64>,
}

/// Strips Reddit fullname prefixes (`t1_`, `t3_`) so parent and link ids
/// compare equal to bare post ids.
fn bare_id(id: &str) -> &str {
    match id.get(..3) {
        Some("t1_") | Some("t3_") => &id[3..],
        _ => id,
    }
}

impl RawRecord {
    fn into_post(self) -> Option<Post> {
        let created_at = self.created_utc.filter(|&t| t > 0)?;
        if self.id.is_empty() {
            return None;
        }
        let parent_id = self
            .parent_id
            .filter(|p| !p.is_empty())
            .map(|p| bare_id(&p).to_string());
        let link_id = match &parent_id {
            None => self.id.clone(),
            Some(_) => bare_id(self.link_id.as_deref().filter(|l| !l.is_empty())?).to_string(),
        };
        let body = match self.body {
            Some(b) => b,
            None => match (self.title, self.selftext) {
                (Some(t), Some(s)) if !s.is_empty() => format!("{t}\n\n{s}"),
                (Some(t), _) => t,
                (None, Some(s)) => s,
                (None, None) => String::new(),
            },
        };
        Some(Post {
            id: self.id,
            author: self.author,
            community: self.subreddit,
            created_at,
            parent_id,
            link_id,
            body,
            author_created_at: self.author_created_utc,
        })
    }
}

/// Result of parsing one archive stream.
#[derive(Debug, Clone, Default)]
pub struct ParsedArchive {
    pub posts: Vec<Post>,
    pub total_lines: usize,
    /// 1-based line numbers of malformed records.
    pub malformed_lines: Vec<usize>,
}

impl ParsedArchive {
    pub fn malformed(&self) -> usize {
        self.malformed_lines.len()
    }
}

/// Parses newline-delimited archive records. Blank lines are ignored.
pub fn parse_archive<R: BufRead>(reader: R) -> Result<ParsedArchive, CorpusError> {
    let mut out = ParsedArchive::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.total_lines += 1;
        match serde_json::from_str::<RawRecord>(&line)
            .ok()
            .and_then(RawRecord::into_post)
        {
            Some(p) => out.posts.push(p),
            None => out.malformed_lines.push(i + 1),
        }
    }
    if out.total_lines > 0
        && out.malformed() as f64 > MAX_MALFORMED_FRACTION * out.total_lines as f64
    {
        return Err(CorpusError::SchemaMismatch {
            malformed: out.malformed(),
            total: out.total_lines,
            first_bad_line: out.malformed_lines[0],
        });
    }
    Ok(out)
}

/// Opens an archive file, transparently decompressing gzip.
pub fn read_archive(path: &Path) -> Result<ParsedArchive, CorpusError> {
    let mut file = File::open(path)?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    drop(file);
    let file = File::open(path)?;
    if n == 2 && magic == [0x1f, 0x8b] {
        parse_archive(BufReader::new(flate2::read::MultiGzDecoder::new(file)))
    } else {
        parse_archive(BufReader::new(file))
    }
}

/// Drops repeated ids, keeping the earliest copy (ties by author, then body).
pub fn dedup_posts(mut posts: Vec<Post>) -> (Vec<Post>, usize) {
    posts.sort_by(|a, b| {
        (&a.id, a.created_at, &a.author, &a.body).cmp(&(&b.id, b.created_at, &b.author, &b.body))
    });
    let before = posts.len();
    posts.dedup_by(|b, a| a.id == b.id);
    let dropped = before - posts.len();
    (posts, dropped)
}

/// Canonical order: community, creation time, id.
pub fn canonical_sort(posts: &mut [Post]) {
    posts.sort_by(|a, b| {
        (&a.community, a.created_at, &a.id).cmp(&(&b.community, b.created_at, &b.id))
    });
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadNode {
    pub level: u32,
    pub parent: Option<String>,
    pub children: Vec<String>,
    pub root: String,
    pub orphan: bool,
}

/// Nest levels, child lists and thread roots for a set of posts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThreadIndex {
    nodes: HashMap<String, ThreadNode>,
}

impl ThreadIndex {
    pub fn level(&self, id: &str) -> Option<u32> {
        self.nodes.get(id).map(|n| n.level)
    }

    pub fn children(&self, id: &str) -> &[String] {
        self.nodes.get(id).map(|n| n.children.as_slice()).unwrap_or(&[])
    }

    pub fn root(&self, id: &str) -> Option<&str> {
        self.nodes.get(id).map(|n| n.root.as_str())
    }

    pub fn node(&self, id: &str) -> Option<&ThreadNode> {
        self.nodes.get(id)
    }

    pub fn is_orphan(&self, id: &str) -> bool {
        self.nodes.get(id).is_some_and(|n| n.orphan)
    }

    pub fn orphans(&self) -> BTreeSet<&str> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.orphan)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds the thread index by walking parent chains.
///
/// Submissions sit at level 0. A comment whose parent is missing from the
/// corpus is flagged orphan and placed at level 1. Duplicate ids keep the
/// first copy in canonical order.
pub fn build_thread_index(posts: &[Post]) -> Result<ThreadIndex, CorpusError> {
    let mut order: Vec<usize> = (0..posts.len()).collect();
    order.sort_by(|&a, &b| {
        (&posts[a].id, posts[a].created_at, &posts[a].author)
            .cmp(&(&posts[b].id, posts[b].created_at, &posts[b].author))
    });
    let mut by_id: HashMap<&str, usize> = HashMap::with_capacity(posts.len());
    for &i in &order {
        by_id.entry(posts[i].id.as_str()).or_insert(i);
    }

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Fresh,
        Active,
        Done(u32, bool),
    }
    let mut state: HashMap<&str, State> = by_id.keys().map(|&k| (k, State::Fresh)).collect();

    for &start in by_id.keys() {
        if !matches!(state[start], State::Fresh) {
            continue;
        }
        let mut stack: Vec<&str> = Vec::new();
        let mut cur = start;
        let (mut level, mut orphan) = loop {
            match state[cur] {
                State::Done(l, o) => break (l, o),
                State::Active => {
                    let pos = stack.iter().position(|&s| s == cur).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.push(cur.to_string());
                    return Err(CorpusError::ParentCycle(cycle));
                }
                State::Fresh => {}
            }
            let post = &posts[by_id[cur]];
            match post.parent_id.as_deref() {
                None => {
                    state.insert(cur, State::Done(0, false));
                    break (0, false);
                }
                Some(p) => match by_id.get_key_value(p) {
                    Some((&pk, _)) => {
                        state.insert(cur, State::Active);
                        stack.push(cur);
                        cur = pk;
                    }
                    None => {
                        state.insert(cur, State::Done(1, true));
                        break (1, true);
                    }
                },
            }
        };
        // Unwind: descendants of an orphan are not orphans themselves.
        while let Some(id) = stack.pop() {
            level += 1;
            orphan = false;
            state.insert(id, State::Done(level, orphan));
        }
        let _ = orphan;
    }

    let mut nodes: HashMap<String, ThreadNode> = HashMap::with_capacity(by_id.len());
    for (&id, &i) in &by_id {
        let post = &posts[i];
        let (level, orphan) = match state[id] {
            State::Done(l, o) => (l, o),
            _ => unreachable!("every node is resolved"),
        };
        nodes.insert(
            id.to_string(),
            ThreadNode {
                level,
                parent: post.parent_id.clone(),
                children: Vec::new(),
                root: post.link_id.clone(),
                orphan,
            },
        );
    }
    let mut children: HashMap<&str, Vec<usize>> = HashMap::new();
    for &i in by_id.values() {
        if let Some(p) = posts[i].parent_id.as_deref() {
            if by_id.contains_key(p) {
                children.entry(p).or_default().push(i);
            }
        }
    }
    for (parent, mut kids) in children {
        kids.sort_by(|&a, &b| (posts[a].created_at, &posts[a].id).cmp(&(posts[b].created_at, &posts[b].id)));
        if let Some(node) = nodes.get_mut(parent) {
            node.children = kids.into_iter().map(|k| posts[k].id.clone()).collect();
        }
    }
    Ok(ThreadIndex { nodes })
}

/// Case-insensitive substring patterns plus an explicit account blocklist.
#[derive(Debug, Clone, Default)]
pub struct BotFilter {
    patterns: Vec<String>,
    blocklist: HashSet<String>,
}

impl BotFilter {
    pub fn new<I, J, S, T>(patterns: I, blocklist: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        BotFilter {
            patterns: patterns
                .into_iter()
                .map(|p| p.as_ref().to_lowercase())
                .filter(|p| !p.is_empty())
                .collect(),
            blocklist: blocklist
                .into_iter()
                .map(|b| b.as_ref().to_lowercase())
                .collect(),
        }
    }

    /// Note the substring rule over-matches (`abbott` contains `bot`); the
    /// blocklist review is the place to catch the reverse case.
    pub fn is_bot(&self, author: &str) -> bool {
        let lower = author.to_lowercase();
        self.blocklist.contains(&lower) || self.patterns.iter().any(|p| lower.contains(p.as_str()))
    }
}

/// Reads a pattern or blocklist file: one entry per line, `#` comments.
pub fn read_list_file(path: &Path) -> std::io::Result<Vec<String>> {
    let content = std::fs::read_to_string(path)?;
    Ok(parse_list(&content))
}

pub fn parse_list(content: &str) -> Vec<String> {
    content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Removes every post written by a bot account.
pub fn filter_bots(posts: Vec<Post>, filter: &BotFilter) -> Vec<Post> {
    posts.into_iter().filter(|p| !filter.is_bot(&p.author)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    /// Seconds between account creation and first post; `None` when the
    /// archive lacks the account creation time.
    pub account_age: Option<i64>,
    pub nest_level: u32,
    pub valence: f64,
    pub word_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstReply {
    pub post_id: String,
    pub created_at: i64,
    pub sentiment: f64,
    pub toxicity: f64,
    pub attack: f64,
    /// False when the reply body was deleted; features are then zero.
    pub scored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstPostEvent {
    pub user: String,
    pub community: String,
    pub kind: PostKind,
    pub post_id: String,
    pub thread_root: String,
    pub first_post_time: i64,
    pub covariates: Covariates,
    pub treated: bool,
    pub first_reply: Option<FirstReply>,
    pub engaged: bool,
}

impl FirstPostEvent {
    pub fn has_complete_covariates(&self) -> bool {
        self.covariates.account_age.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractReport {
    pub events: usize,
    pub missing_account_age: usize,
    pub unscored_replies: usize,
}

/// True iff `user` posts again in the same community, in a different thread,
/// after the first post and no later than `cutoff`.
pub fn engagement_outcome(user: &str, event_post: &Post, posts: &[Post], cutoff: i64) -> bool {
    is_engaged(event_post, posts.iter().filter(|p| p.author == user), cutoff)
}

fn is_engaged<'a>(event_post: &Post, user_posts: impl Iterator<Item = &'a Post>, cutoff: i64) -> bool {
    let mut user_posts = user_posts;
    user_posts.any(|p| {
        p.community == event_post.community
            && p.created_at > event_post.created_at
            && p.created_at <= cutoff
            && p.thread_root() != event_post.thread_root()
    })
}

/// Derives one first-post event per user of `community`.
///
/// Only posts at or before `cutoff` are considered. `scores` maps post ids to
/// text scores; posts without an entry are treated as unscored.
pub fn extract_first_posts(
    posts: &[Post],
    index: &ThreadIndex,
    community: &str,
    cutoff: i64,
    scores: &HashMap<String, TextScores>,
) -> (Vec<FirstPostEvent>, ExtractReport) {
    let visible: Vec<&Post> = posts
        .iter()
        .filter(|p| p.community == community && p.created_at <= cutoff)
        .collect();
    let by_id: HashMap<&str, &Post> = visible.iter().map(|p| (p.id.as_str(), *p)).collect();
    let mut by_user: BTreeMap<&str, Vec<&Post>> = BTreeMap::new();
    for p in &visible {
        by_user.entry(p.author.as_str()).or_default().push(p);
    }

    let mut report = ExtractReport::default();
    let mut events = Vec::with_capacity(by_user.len());
    for (user, mut own) in by_user {
        own.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        let first = own[0];

        let reply = index
            .children(&first.id)
            .iter()
            .filter_map(|c| by_id.get(c.as_str()).copied())
            .filter(|c| c.author != first.author)
            .min_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        let first_reply = reply.map(|r| match scores.get(&r.id).filter(|_| !r.is_deleted()) {
            Some(s) => FirstReply {
                post_id: r.id.clone(),
                created_at: r.created_at,
                sentiment: s.sentiment,
                toxicity: s.toxicity,
                attack: s.attack,
                scored: true,
            },
            None => {
                report.unscored_replies += 1;
                FirstReply {
                    post_id: r.id.clone(),
                    created_at: r.created_at,
                    sentiment: 0.0,
                    toxicity: 0.0,
                    attack: 0.0,
                    scored: false,
                }
            }
        });

        let valence = if first.is_deleted() {
            0.0
        } else {
            scores.get(&first.id).map_or(0.0, |s| s.sentiment)
        };
        let account_age = first
            .author_created_at
            .map(|c| (first.created_at - c).max(0));
        if account_age.is_none() {
            report.missing_account_age += 1;
        }
        let nest_level = index
            .level(&first.id)
            .unwrap_or(if first.is_submission() { 0 } else { 1 });

        events.push(FirstPostEvent {
            user: user.to_string(),
            community: community.to_string(),
            kind: first.kind(),
            post_id: first.id.clone(),
            thread_root: first.link_id.clone(),
            first_post_time: first.created_at,
            covariates: Covariates {
                account_age,
                nest_level,
                valence,
                word_count: text::word_count(&first.body),
            },
            treated: first_reply.is_some(),
            first_reply,
            engaged: is_engaged(first, own[1..].iter().copied(), cutoff),
        });
    }
    report.events = events.len();
    (events, report)
}

/// Groups posts by community (sorted by community id).
pub fn partition_by_community(posts: &[Post]) -> BTreeMap<String, Vec<Post>> {
    let mut out: BTreeMap<String, Vec<Post>> = BTreeMap::new();
    for p in posts {
        out.entry(p.community.clone()).or_default().push(p.clone());
    }
    out
}

/// Runs thread indexing and event extraction per community in parallel.
/// Output is keyed by community and is independent of thread count.
pub fn extract_all(
    by_community: &BTreeMap<String, Vec<Post>>,
    cutoffs: &BTreeMap<String, i64>,
    scores: &HashMap<String, TextScores>,
) -> Result<BTreeMap<String, (Vec<FirstPostEvent>, ExtractReport)>, CorpusError> {
    by_community
        .par_iter()
        .filter_map(|(c, posts)| cutoffs.get(c).map(|&cut| (c, posts, cut)))
        .map(|(c, posts, cutoff)| {
            let index = build_thread_index(posts)?;
            Ok((c.clone(), extract_first_posts(posts, &index, c, cutoff, scores)))
        })
        .collect::<Result<Vec<_>, CorpusError>>()
        .map(|v| v.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn post(id: &str, author: &str, t: i64, parent: Option<&str>, link: &str) -> Post {
        Post {
            id: id.into(),
            author: author.into(),
            community: "c".into(),
            created_at: t,
            parent_id: parent.map(Into::into),
            link_id: link.into(),
            body: format!("body of {id}"),
            author_created_at: Some(1),
        }
    }

    #[test]
    fn submission_record_roots_its_thread() {
        let line = r#"{"id":"abc","author":"u","subreddit":"s","created_utc":100,"title":"Hi","selftext":"there"}"#;
        let parsed = parse_archive(line.as_bytes()).unwrap();
        assert_eq!(parsed.posts.len(), 1);
        let p = &parsed.posts[0];
        assert_eq!(p.parent_id, None);
        assert_eq!(p.link_id, "abc");
        assert_eq!(p.body, "Hi\n\nthere");
        assert_eq!(p.community, "s");
    }

    #[test]
    fn empty_stream_is_empty() {
        let parsed = parse_archive("".as_bytes()).unwrap();
        assert!(parsed.posts.is_empty());
        assert_eq!(parsed.malformed(), 0);
    }

    #[test]
    fn truncated_line_is_counted() {
        let input = concat!(
            r#"{"id":"s1","author":"a","subreddit":"x","created_utc":10,"body":"hello"}"#, "\n",
            r#"{"id":"c1","author":"b","subreddit":"x","created_utc":"11","parent_id":"t3_s1","link_id":"t3_s1","body":"yo"}"#, "\n",
            r#"{"id":"c2","author":"c","subreddit":"x","created_utc":12.0,"parent_id":"t1_c1","link_id":"t3_s1","body":"ok","author_created_utc":5}"#, "\n",
            r#"{"id":"c3","author":"d","subreddit":"x","created_utc":13,"parent_"#, "\n",
        );
        let parsed = parse_archive(input.as_bytes()).unwrap();
        assert_eq!(parsed.posts.len(), 3);
        assert_eq!(parsed.malformed(), 1);
        assert_eq!(parsed.malformed_lines, vec![4]);
        assert_eq!(parsed.posts[1].parent_id.as_deref(), Some("s1"));
        assert_eq!(parsed.posts[2].parent_id.as_deref(), Some("c1"));
        assert_eq!(parsed.posts[2].author_created_at, Some(5));
    }

    #[test]
    fn mostly_malformed_is_fatal() {
        let input = "garbage\nmore garbage\n{\"id\":\"s\",\"author\":\"a\",\"subreddit\":\"x\",\"created_utc\":1}\n";
        match parse_archive(input.as_bytes()) {
            Err(CorpusError::SchemaMismatch { malformed: 2, total: 3, first_bad_line: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nonpositive_time_and_parentless_link_rules() {
        let input = concat!(
            r#"{"id":"a","author":"u","subreddit":"x","created_utc":0}"#, "\n",
            r#"{"id":"b","author":"u","subreddit":"x","created_utc":3,"parent_id":"t3_a"}"#, "\n",
            r#"{"id":"c","author":"u","subreddit":"x","created_utc":3}"#, "\n",
            r#"{"id":"d","author":"u","subreddit":"x","created_utc":3}"#, "\n",
        );
        let parsed = parse_archive(input.as_bytes()).unwrap();
        assert_eq!(parsed.malformed_lines, vec![1, 2]);
    }

    #[test]
    fn nest_levels_follow_parent_chain() {
        let posts = vec![
            post("S", "a", 1, None, "S"),
            post("A", "b", 2, Some("S"), "S"),
            post("B", "c", 3, Some("A"), "S"),
        ];
        let idx = build_thread_index(&posts).unwrap();
        assert_eq!(idx.level("S"), Some(0));
        assert_eq!(idx.level("A"), Some(1));
        assert_eq!(idx.level("B"), Some(2));
        assert_eq!(idx.children("S"), &["A".to_string()]);
        assert_eq!(idx.root("B"), Some("S"));
    }

    #[test]
    fn lone_submission() {
        let idx = build_thread_index(&[post("S", "a", 1, None, "S")]).unwrap();
        assert_eq!(idx.level("S"), Some(0));
        assert!(idx.children("S").is_empty());
    }

    #[test]
    fn dangling_parent_is_orphan_at_level_one() {
        let posts = vec![
            post("S", "a", 1, None, "S"),
            post("X", "b", 2, Some("gone"), "S"),
            post("Y", "c", 3, Some("X"), "S"),
        ];
        let idx = build_thread_index(&posts).unwrap();
        assert_eq!(idx.level("X"), Some(1));
        assert!(idx.is_orphan("X"));
        assert_eq!(idx.level("Y"), Some(2));
        assert!(!idx.is_orphan("Y"));
        assert_eq!(idx.orphans().into_iter().collect::<Vec<_>>(), vec!["X"]);
    }

    #[test]
    fn cycle_is_fatal_and_named() {
        let posts = vec![
            post("A", "a", 1, Some("B"), "S"),
            post("B", "b", 2, Some("A"), "S"),
        ];
        match build_thread_index(&posts) {
            Err(CorpusError::ParentCycle(c)) => {
                assert!(c.contains(&"A".to_string()) && c.contains(&"B".to_string()));
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn bot_filter_rules() {
        let f = BotFilter::new(["bot"], ["AutoModerator"]);
        assert!(f.is_bot("NewsBot"));
        assert!(f.is_bot("abbott"));
        assert!(f.is_bot("automoderator"));
        assert!(!f.is_bot("alice"));
        let posts = vec![post("S", "alice", 1, None, "S"), post("A", "NewsBot", 2, Some("S"), "S")];
        let kept = filter_bots(posts.clone(), &f);
        assert_eq!(kept.len(), 1);
        let none = BotFilter::new(Vec::<String>::new(), Vec::<String>::new());
        assert_eq!(filter_bots(posts.clone(), &none), posts);
    }

    #[test]
    fn list_file_skips_comments() {
        assert_eq!(parse_list("# header\nbot\n\n  auto \n#x\n"), vec!["bot", "auto"]);
    }

    #[test]
    fn self_reply_is_not_treatment() {
        let posts = vec![
            post("S", "op", 1, None, "S"),
            post("c1", "u", 10, Some("S"), "S"),
            post("c2", "u", 20, Some("c1"), "S"),
        ];
        let idx = build_thread_index(&posts).unwrap();
        let (events, _) = extract_first_posts(&posts, &idx, "c", 1000, &HashMap::new());
        let u = events.iter().find(|e| e.user == "u").unwrap();
        assert!(!u.treated);
        assert!(u.first_reply.is_none());
        assert!(!u.engaged);
    }

    #[test]
    fn reply_then_other_thread_is_treated_and_engaged() {
        let posts = vec![
            post("S", "op", 1, None, "S"),
            post("T", "op", 2, None, "T"),
            post("c1", "u", 10, Some("S"), "S"),
            post("r1", "v", 15, Some("c1"), "S"),
            post("c2", "u", 30, Some("T"), "T"),
        ];
        let idx = build_thread_index(&posts).unwrap();
        let mut scores = HashMap::new();
        scores.insert("r1".to_string(), TextScores { sentiment: -0.2, toxicity: 0.4, attack: 0.1 });
        let (events, report) = extract_first_posts(&posts, &idx, "c", 30, &scores);
        let u = events.iter().find(|e| e.user == "u").unwrap();
        assert!(u.treated && u.engaged);
        let r = u.first_reply.as_ref().unwrap();
        assert_eq!(r.post_id, "r1");
        assert_eq!((r.sentiment, r.toxicity, r.attack), (-0.2, 0.4, 0.1));
        assert_eq!(u.covariates.nest_level, 1);
        assert_eq!(u.covariates.account_age, Some(9));
        assert_eq!(report.events, 3);
        // Cutoff before the second post: no longer engaged.
        let (events, _) = extract_first_posts(&posts, &idx, "c", 29, &scores);
        assert!(!events.iter().find(|e| e.user == "u").unwrap().engaged);
    }

    #[test]
    fn engagement_outcome_rules() {
        let posts = vec![
            post("S", "op", 1, None, "S"),
            post("T", "op", 2, None, "T"),
            post("c1", "u", 10, Some("S"), "S"),
            post("c2", "u", 20, Some("S"), "S"),
            post("c3", "u", 50, Some("T"), "T"),
        ];
        assert!(!engagement_outcome("u", &posts[2], &posts, 40));
        assert!(engagement_outcome("u", &posts[2], &posts, 50));
    }

    #[test]
    fn missing_account_creation_is_reported() {
        let mut p = post("S", "op", 5, None, "S");
        p.author_created_at = None;
        let idx = build_thread_index(std::slice::from_ref(&p)).unwrap();
        let (events, report) = extract_first_posts(&[p], &idx, "c", 10, &HashMap::new());
        assert_eq!(events[0].covariates.account_age, None);
        assert!(!events[0].has_complete_covariates());
        assert_eq!(report.missing_account_age, 1);
    }

    #[test]
    fn deleted_reply_counts_as_treatment_but_unscored() {
        let mut r = post("r", "v", 3, Some("S"), "S");
        r.body = "[deleted]".into();
        let posts = vec![post("S", "u", 1, None, "S"), r];
        let idx = build_thread_index(&posts).unwrap();
        let mut scores = HashMap::new();
        scores.insert("r".to_string(), TextScores { sentiment: 0.5, toxicity: 0.5, attack: 0.5 });
        let (events, report) = extract_first_posts(&posts, &idx, "c", 10, &scores);
        let u = events.iter().find(|e| e.user == "u").unwrap();
        assert!(u.treated);
        assert!(!u.first_reply.as_ref().unwrap().scored);
        assert_eq!(report.unscored_replies, 1);
    }
}
