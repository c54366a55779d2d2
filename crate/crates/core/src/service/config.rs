use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::profile::DEFAULT_THRESHOLD;
use crate::ranker::{BucketTable, DEFAULT_SLATE_SIZE};
use crate::retrieval::Scheme;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {reason}")]
    Value { key: String, reason: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

/// Where items come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    /// The ten built-in demo items.
    Fixture,
    Synthetic {
        n: usize,
        seed: u64,
    },
    File(PathBuf),
}

impl fmt::Display for CorpusSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusSource::Fixture => f.write_str("fixture"),
            CorpusSource::Synthetic { n, seed } => write!(f, "synthetic:{n}:{seed}"),
            CorpusSource::File(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for CorpusSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "fixture" {
            return Ok(CorpusSource::Fixture);
        }
        if let Some(rest) = s.strip_prefix("synthetic:") {
            let (n, seed) = rest.split_once(':').unwrap_or((rest, "0"));
            let n = n.parse().map_err(|_| format!("bad item count `{n}`"))?;
            let seed = seed.parse().map_err(|_| format!("bad seed `{seed}`"))?;
            return Ok(CorpusSource::Synthetic { n, seed });
        }
        if s.is_empty() {
            return Err("empty corpus path".into());
        }
        Ok(CorpusSource::File(PathBuf::from(s)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendChoice {
    /// Fixture replay; misses get the default reply.
    Scripted(Option<PathBuf>),
    /// The built-in keyword-driven stand-in.
    Rules,
    /// HTTP endpoint from the environment.
    Remote,
}

impl fmt::Display for BackendChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendChoice::Scripted(None) => f.write_str("scripted"),
            BackendChoice::Scripted(Some(p)) => write!(f, "scripted:{}", p.display()),
            BackendChoice::Rules => f.write_str("rules"),
            BackendChoice::Remote => f.write_str("remote"),
        }
    }
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(BackendChoice::Scripted(None)),
            "rules" => Ok(BackendChoice::Rules),
            "remote" => Ok(BackendChoice::Remote),
            _ => match s.strip_prefix("scripted:") {
                Some(p) if !p.is_empty() => Ok(BackendChoice::Scripted(Some(PathBuf::from(p)))),
                _ => Err(format!(
                    "unknown backend `{s}` (scripted, scripted:<file>, rules, remote)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexChoice {
    Exact,
    Clustered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub corpus: CorpusSource,
    pub scheme: Scheme,
    pub slate_size: usize,
    pub candidate_count: usize,
    pub profile_threshold: f64,
    pub buckets: BucketTable,
    pub backend: BackendChoice,
    pub parallelism: usize,
    pub seed: u64,
    pub data_dir: Option<PathBuf>,
    pub towers: Option<PathBuf>,
    pub index: IndexChoice,
    pub search_url: Option<String>,
    pub timeout_ms: u64,
    pub context_chars: usize,
    pub embedding_dim: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSource::Fixture,
            scheme: Scheme::DualEncoder,
            slate_size: DEFAULT_SLATE_SIZE,
            candidate_count: crate::retrieval::DEFAULT_CANDIDATE_COUNT,
            profile_threshold: DEFAULT_THRESHOLD,
            buckets: BucketTable::default(),
            backend: BackendChoice::Scripted(None),
            parallelism: 4,
            seed: 0,
            data_dir: None,
            towers: None,
            index: IndexChoice::Exact,
            search_url: None,
            timeout_ms: 30_000,
            context_chars: crate::dialogue::DEFAULT_CONTEXT_CHARS,
            embedding_dim: crate::corpus::DEFAULT_DIM,
        }
    }
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::DualEncoder => "dual_encoder",
        Scheme::Direct => "direct",
        Scheme::Concepts => "concepts",
        Scheme::SearchApi => "search_api",
    }
}

fn resolve(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(b) if p.is_relative() => b.join(p),
        _ => p,
    }
}

impl ServiceConfig {
    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// taken relative to `base` when given.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: n + 1,
                reason: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |reason: String| ConfigError::Value {
                key: key.to_string(),
                reason,
            };
            let num = |v: &str| v.parse::<u64>().map_err(|e| bad(e.to_string()));
            match key {
                "corpus" => {
                    c.corpus = match value.parse::<CorpusSource>().map_err(bad)? {
                        CorpusSource::File(p) => CorpusSource::File(resolve(base, p)),
                        other => other,
                    }
                }
                "scheme" => c.scheme = value.parse().map_err(bad)?,
                "slate_size" => c.slate_size = num(value)? as usize,
                "candidate_count" => c.candidate_count = num(value)? as usize,
                "profile_threshold" => {
                    c.profile_threshold = value.parse().map_err(|_| bad("not a number".into()))?
                }
                "buckets" => {
                    c.buckets = BucketTable::parse(value).map_err(|e| bad(e.to_string()))?
                }
                "backend" => {
                    c.backend = match value.parse::<BackendChoice>().map_err(bad)? {
                        BackendChoice::Scripted(Some(p)) => {
                            BackendChoice::Scripted(Some(resolve(base, p)))
                        }
                        other => other,
                    }
                }
                "parallelism" => c.parallelism = num(value)? as usize,
                "seed" => c.seed = num(value)?,
                "data_dir" => c.data_dir = Some(resolve(base, PathBuf::from(value))),
                "towers" => c.towers = Some(resolve(base, PathBuf::from(value))),
                "index" => {
                    c.index = match value {
                        "exact" => IndexChoice::Exact,
                        "clustered" => IndexChoice::Clustered,
                        _ => return Err(bad("expected exact or clustered".into())),
                    }
                }
                "search_url" => c.search_url = Some(value.to_string()),
                "timeout_ms" => c.timeout_ms = num(value)?,
                "context_chars" => c.context_chars = num(value)? as usize,
                "embedding_dim" => c.embedding_dim = num(value)? as usize,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, reason: &str| {
            Err(ConfigError::Value {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.slate_size == 0 {
            return bad("slate_size", "must be positive");
        }
        if self.candidate_count < self.slate_size {
            return bad("candidate_count", "must be at least slate_size");
        }
        if !(0.0..=2.0).contains(&self.profile_threshold) {
            return bad("profile_threshold", "cosine distance lies in [0, 2]");
        }
        if self.parallelism == 0 {
            return bad("parallelism", "must be positive");
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim", "must be positive");
        }
        if self.context_chars < 256 {
            return bad("context_chars", "must be at least 256");
        }
        if let CorpusSource::Synthetic { n: 0, .. } = self.corpus {
            return bad("corpus", "synthetic corpus needs items");
        }
        Ok(())
    }

    /// Canonical `key = value` text; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("corpus = {}", self.corpus),
            format!("scheme = {}", scheme_name(self.scheme)),
            format!("slate_size = {}", self.slate_size),
            format!("candidate_count = {}", self.candidate_count),
            format!("profile_threshold = {}", self.profile_threshold),
            format!("buckets = {}", self.buckets.to_spec()),
            format!("backend = {}", self.backend),
            format!("parallelism = {}", self.parallelism),
            format!("seed = {}", self.seed),
            format!(
                "index = {}",
                match self.index {
                    IndexChoice::Exact => "exact",
                    IndexChoice::Clustered => "clustered",
                }
            ),
            format!("timeout_ms = {}", self.timeout_ms),
            format!("context_chars = {}", self.context_chars),
            format!("embedding_dim = {}", self.embedding_dim),
        ];
        if let Some(d) = &self.data_dir {
            lines.push(format!("data_dir = {}", d.display()));
        }
        if let Some(t) = &self.towers {
            lines.push(format!("towers = {}", t.display()));
        }
        if let Some(u) = &self.search_url {
            lines.push(format!("search_url = {u}"));
        }
        lines.join("\n") + "\n"
    }

    /// Stamped into every session record. Excludes where data lives and
    /// how many threads run, which do not change outputs.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_text()
            .lines()
            .filter(|l| {
                !l.starts_with("data_dir")
                    && !l.starts_with("parallelism")
                    && !l.starts_with("timeout_ms")
            })
            .map(|l| format!("{l}\n"))
            .collect();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
