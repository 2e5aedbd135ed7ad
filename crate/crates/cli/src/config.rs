//! Pipeline configuration: a flat TOML key/value file, overridable with
//! `--set key=value` on the command line.

use std::path::{Path, PathBuf};

use firstreply_core::cohort::{DEFAULT_MAX_CANDIDATE_SIZE, DEFAULT_MIN_CANDIDATE_SIZE, DEFAULT_POOL_CAP};
use firstreply_core::lexicon::DEFAULT_TOP_K;
use firstreply_core::scoring::DEFAULT_THRESHOLD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Every configuration key with its default and meaning, in the order shown
/// by `--help`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("output_dir", "\"firstreply-out\"", "directory receiving every stage artifact and manifest.json"),
    ("archives", "[]", "newline-delimited post archives (plain or gzip)"),
    ("background", "[]", "background archives for distinctive-vocabulary fits"),
    ("candidates", "none", "file listing the communities to analyse, one per line; all when absent"),
    ("ban_dates", "none", "CSV `community,ban_date` (seconds since epoch) of banned hateful communities"),
    ("annotations", "none", "CSV `word,rater1,rater2,...` of hate-word ratings (0, 1 or 2)"),
    ("hate_lexicon", "none", "TSV `word<TAB>replacement<TAB>note`; annotated words get `group member` when absent"),
    ("sentiment_lexicon", "none", "TSV `word<TAB>valence` sentiment lexicon; the built-in one when absent"),
    ("bot_patterns", "[\"bot\"]", "case-insensitive author-name substrings marking bot accounts"),
    ("bot_blocklist", "none", "file of additional bot account names, one per line"),
    ("scorer", "\"stub\"", "attribute scorer: `stub` (offline, deterministic) or `remote`"),
    ("stub_lexicon", "none", "TSV weights for the stub scorer; the built-in weights when absent"),
    ("remote_endpoint", "\"\"", "URL of the remote attribute-scoring service"),
    ("remote_api_key_env", "\"FIRSTREPLY_API_KEY\"", "environment variable holding the remote API key"),
    ("remote_rate_limit", "1.0", "remote requests per second"),
    ("remote_timeout_secs", "30", "remote request timeout in seconds"),
    ("score_cache", "none", "append-only cache of remote scores, keyed by content hash"),
    ("sage_lambda", "1.0", "L1 strength of the distinctive-vocabulary model"),
    ("top_k", "100", "distinctive words inspected per community"),
    ("candidate_min_size", "10000", "smallest newcomer count of an eligible control community"),
    ("candidate_max_size", "2000000", "largest newcomer count of an eligible control community"),
    ("pool_cap", "30000", "largest treated/control pool matched per community and post kind"),
    ("matching_seed", "0", "seed of the matching order"),
    ("threshold", "0.7", "cutoff of the threshold-mode sensitivity models"),
    ("simulation_seed", "0", "seed of the growth simulations"),
    ("replications", "100", "growth-simulation replications per community"),
    ("threads", "0", "worker threads; 0 uses every core (results do not depend on it)"),
    ("synth_dir", "\"synth\"", "directory the `synth` stage writes its corpus and config to"),
    ("synth_seed", "0", "seed of the synthetic corpus"),
    ("synth_hateful", "10", "synthetic hateful communities"),
    ("synth_non_hateful", "10", "synthetic non-hateful communities"),
    ("synth_users", "2000", "newcomers per synthetic community"),
    ("synth_hate_word_rate", "0.08", "share of synthetic hateful-community posts carrying a hate term"),
];

/// Keys that only choose where or how fast things run; they are left out of
/// the config hash so moving the output or changing the thread count does
/// not invalidate earlier stages.
const UNHASHED: &[&str] = &["output_dir", "threads"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub archives: Vec<PathBuf>,
    pub background: Vec<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub ban_dates: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub hate_lexicon: Option<PathBuf>,
    pub sentiment_lexicon: Option<PathBuf>,
    pub bot_patterns: Vec<String>,
    pub bot_blocklist: Option<PathBuf>,
    pub scorer: ScorerKind,
    pub stub_lexicon: Option<PathBuf>,
    pub remote_endpoint: String,
    pub remote_api_key_env: String,
    pub remote_rate_limit: f64,
    pub remote_timeout_secs: u64,
    pub score_cache: Option<PathBuf>,
    pub sage_lambda: f64,
    pub top_k: usize,
    pub candidate_min_size: u64,
    pub candidate_max_size: u64,
    pub pool_cap: usize,
    pub matching_seed: u64,
    pub threshold: f64,
    pub simulation_seed: u64,
    pub replications: usize,
    pub threads: usize,
    pub synth_dir: PathBuf,
    pub synth_seed: u64,
    pub synth_hateful: usize,
    pub synth_non_hateful: usize,
    pub synth_users: usize,
    pub synth_hate_word_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Stub,
    Remote,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: "firstreply-out".into(),
            archives: Vec::new(),
            background: Vec::new(),
            candidates: None,
            ban_dates: None,
            annotations: None,
            hate_lexicon: None,
            sentiment_lexicon: None,
            bot_patterns: vec!["bot".into()],
            bot_blocklist: None,
            scorer: ScorerKind::Stub,
            stub_lexicon: None,
            remote_endpoint: String::new(),
            remote_api_key_env: "FIRSTREPLY_API_KEY".into(),
            remote_rate_limit: 1.0,
            remote_timeout_secs: 30,
            score_cache: None,
            sage_lambda: 1.0,
            top_k: DEFAULT_TOP_K,
            candidate_min_size: DEFAULT_MIN_CANDIDATE_SIZE,
            candidate_max_size: DEFAULT_MAX_CANDIDATE_SIZE,
            pool_cap: DEFAULT_POOL_CAP,
            matching_seed: 0,
            threshold: DEFAULT_THRESHOLD,
            simulation_seed: 0,
            replications: 100,
            threads: 0,
            synth_dir: "synth".into(),
            synth_seed: 0,
            synth_hateful: 10,
            synth_non_hateful: 10,
            synth_users: 2000,
            synth_hate_word_rate: 0.08,
        }
    }
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

impl PipelineConfig {
    /// Reads the config file (if any), applies overrides and resolves
    /// relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let table: toml::Table =
                    text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not of the form key=value")))?;
            let k = k.trim();
            if !KEYS.iter().any(|(name, _, _)| *name == k) {
                return Err(CliError::Config(format!("unknown key `{k}` (see --help for the list)")));
            }
            table.insert(k.to_string(), parse_value(v.trim()));
        }
        let mut cfg: PipelineConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.resolve(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.synth_dir);
        self.archives.iter_mut().for_each(fix);
        self.background.iter_mut().for_each(fix);
        for p in [
            &mut self.candidates,
            &mut self.ban_dates,
            &mut self.annotations,
            &mut self.hate_lexicon,
            &mut self.sentiment_lexicon,
            &mut self.bot_blocklist,
            &mut self.stub_lexicon,
            &mut self.score_cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Range checks that do not need the filesystem.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!("threshold must lie strictly between 0 and 1, got {}", self.threshold));
        }
        if !(self.sage_lambda.is_finite() && self.sage_lambda >= 0.0) {
            return bad(format!("sage_lambda must be finite and nonnegative, got {}", self.sage_lambda));
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.candidate_min_size > self.candidate_max_size {
            return bad("candidate_min_size exceeds candidate_max_size".into());
        }
        if self.pool_cap == 0 {
            return bad("pool_cap must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.synth_hate_word_rate) {
            return bad(format!("synth_hate_word_rate must lie in [0, 1], got {}", self.synth_hate_word_rate));
        }
        if self.scorer == ScorerKind::Remote && self.remote_endpoint.is_empty() {
            return bad("scorer = \"remote\" needs remote_endpoint".into());
        }
        if !(self.remote_rate_limit > 0.0) {
            return bad("remote_rate_limit must be positive".into());
        }
        Ok(())
    }

    /// Fails when a referenced input file does not exist.
    pub fn check_inputs(&self) -> Result<(), CliError> {
        if self.archives.is_empty() {
            return Err(CliError::Config("no archives configured".into()));
        }
        let optional = [
            &self.candidates,
            &self.ban_dates,
            &self.annotations,
            &self.hate_lexicon,
            &self.sentiment_lexicon,
            &self.bot_blocklist,
            &self.stub_lexicon,
        ];
        for p in self.archives.iter().chain(&self.background).chain(optional.into_iter().flatten()) {
            if !p.is_file() {
                return Err(CliError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of every result-affecting key.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for k in UNHASHED {
                map.remove(*k);
            }
        }
        // serde_json maps are ordered by key, so the text is canonical.
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}

/// The `--help` section listing every key.
pub fn keys_help() -> String {
    let mut out = String::from("CONFIGURATION KEYS (TOML file via --config, override with --set key=value):\n");
    let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    for (k, d, help) in KEYS {
        out.push_str(&format!("  {k:width$}  {help} [default: {d}]\n"));
    }
    out.push_str(
        "\nRelative paths are resolved against the config file's directory.\n\
         EXIT CODES: 0 success, 2 configuration error, 3 data error, 4 convergence or identifiability error.\n",
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_field_is_documented() {
        let v = serde_json::to_value(PipelineConfig::default()).unwrap();
        let fields: Vec<&String> = v.as_object().unwrap().keys().collect();
        for f in &fields {
            assert!(KEYS.iter().any(|(k, _, _)| k == f), "{f} missing from KEYS");
        }
        assert_eq!(fields.len(), KEYS.len());
    }

    #[test]
    fn documented_defaults_are_the_defaults() {
        let v = serde_json::to_value(PipelineConfig::default()).unwrap();
        for (k, d, _) in KEYS {
            let expected = match *d {
                "none" => serde_json::Value::Null,
                d => serde_json::to_value(parse_value(d)).unwrap(),
            };
            let actual = &v[*k];
            let same = match (actual.as_f64(), expected.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => *actual == expected,
            };
            assert!(same, "{k}: documented {d}, actual {actual}");
        }
    }

    #[test]
    fn overrides_are_typed() {
        let cfg = PipelineConfig::load(None, &["replications=7".into(), "scorer=stub".into(), "threshold = 0.5".into()])
            .unwrap();
        assert_eq!(cfg.replications, 7);
        assert_eq!(cfg.threshold, 0.5);
        assert!(PipelineConfig::load(None, &["nonsense=1".into()]).is_err());
        assert!(PipelineConfig::load(None, &["threshold=1.5".into()]).is_err());
    }

    #[test]
    fn hash_ignores_placement_keys() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.matching_seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
