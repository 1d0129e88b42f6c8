//! Selector expressions for the `query` subcommand:
//! `<id-prefix> [latest|latestN=<n>|at=<ts>|range=<ts>..<ts>] [regex=<pat>]`.
//!
//! Timestamps are integer microseconds or the textual form used in IDs. The
//! regex applies to the first hierarchy level the prefix leaves open.

use epimem_core::model::{CoreQuery, EntityQuery, NameSelector, ProviderQuery, Query, SnapshotSelector};
use epimem_core::{MemoryId, Time};

#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    pub prefix: MemoryId,
    pub snapshots: SnapshotSelector,
    pub regex: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SelectorError {
    #[error("empty selector expression")]
    Empty,
    #[error("bad id prefix {0:?}: {1}")]
    Prefix(String, String),
    #[error("bad timestamp {0:?}")]
    Time(String),
    #[error("bad clause {0:?}")]
    Clause(String),
    #[error("{0} given more than once")]
    Duplicate(&'static str),
    #[error("regex needs a hierarchy level below {0}")]
    NoOpenLevel(String),
    #[error("invalid regex: {0}")]
    Regex(String),
}

const KEYWORDS: [&str; 5] = ["latest", "latestN=", "at=", "range=", "regex="];

fn starts_clause(tok: &str) -> bool {
    tok == "latest" || KEYWORDS[1..].iter().any(|k| tok.starts_with(k))
}

fn time(text: &str) -> Result<Time, SelectorError> {
    Time::parse(text.trim()).ok_or_else(|| SelectorError::Time(text.to_owned()))
}

impl Selector {
    /// Parses an expression given as shell words. Words that do not open a
    /// clause continue the previous one, so textual timestamps may contain spaces.
    pub fn parse<S: AsRef<str>>(words: &[S]) -> Result<Self, SelectorError> {
        let mut groups: Vec<String> = Vec::new();
        for w in words.iter().flat_map(|w| w.as_ref().split_whitespace()) {
            match groups.last_mut() {
                Some(last) if !starts_clause(w) => {
                    last.push(' ');
                    last.push_str(w);
                }
                _ => groups.push(w.to_owned()),
            }
        }
        let mut groups = groups.into_iter();
        let head = groups.next().ok_or(SelectorError::Empty)?;
        if starts_clause(&head) {
            return Err(SelectorError::Empty);
        }
        let prefix = MemoryId::parse(&head).map_err(|e| SelectorError::Prefix(head.clone(), e.to_string()))?;

        let mut snapshots = None;
        let mut regex = None;
        for clause in groups {
            let sel = if clause == "latest" {
                SnapshotSelector::Latest
            } else if let Some(n) = clause.strip_prefix("latestN=") {
                SnapshotSelector::LatestN(n.parse().map_err(|_| SelectorError::Clause(clause.clone()))?)
            } else if let Some(t) = clause.strip_prefix("at=") {
                SnapshotSelector::AtTime(time(t)?)
            } else if let Some(r) = clause.strip_prefix("range=") {
                let (a, b) = r
                    .split_once("..")
                    .ok_or_else(|| SelectorError::Clause(clause.clone()))?;
                SnapshotSelector::TimeRange(time(a)?, time(b)?)
            } else if let Some(p) = clause.strip_prefix("regex=") {
                if regex.is_some() {
                    return Err(SelectorError::Duplicate("regex"));
                }
                regex::Regex::new(p).map_err(|e| SelectorError::Regex(e.to_string()))?;
                regex = Some(p.to_owned());
                continue;
            } else {
                return Err(SelectorError::Clause(clause));
            };
            if snapshots.replace(sel).is_some() {
                return Err(SelectorError::Duplicate("snapshot selector"));
            }
        }
        if regex.is_some() && prefix.entity_name().is_some() {
            return Err(SelectorError::NoOpenLevel(prefix.to_string()));
        }
        Ok(Selector {
            prefix,
            snapshots: snapshots.unwrap_or(SnapshotSelector::Latest),
            regex,
        })
    }

    pub fn memory_name(&self) -> &str {
        self.prefix.memory_name()
    }

    pub fn to_query(&self) -> Query {
        let mut q = Query::prefix(&self.prefix, self.snapshots);
        let Some(pat) = &self.regex else { return q };
        let re = NameSelector::Regex(pat.clone());
        let core: &mut CoreQuery = &mut q.cores[0];
        if self.prefix.core_segment().is_none() {
            core.name = re;
            return q;
        }
        let provider: &mut ProviderQuery = &mut core.providers[0];
        if self.prefix.provider_segment().is_none() {
            provider.name = re;
            return q;
        }
        let entity: &mut EntityQuery = &mut provider.entities[0];
        entity.name = re;
        q
    }
}
