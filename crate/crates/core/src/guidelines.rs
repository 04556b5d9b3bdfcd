//! Secure coding guidelines keyed by the CWEs they mitigate.
//!
//! A guideline file is a JSON array of records:
//!
//! ```json
//! [{"id": "g-cwe78-no-shell", "cwes": [78], "text": "Don't call system() ...", "scope": "c"}]
//! ```
//!
//! `scope` and `note` are optional. Record order is significant: lookups
//! return guidelines in file order within each queried CWE.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cwe::CweId;

/// The database shipped with the crate.
pub const BUILTIN_GUIDELINES: &str = include_str!("../data/guidelines.json");

#[derive(Debug, thiserror::Error)]
pub enum GuidelineError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("guideline file is not a JSON array: {0}")]
    NotAnArray(#[source] serde_json::Error),
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },
    #[error("record {index}: duplicate guideline id {id:?}")]
    DuplicateId { index: usize, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guideline {
    pub id: String,
    pub cwes: Vec<CweId>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Guideline {
    pub fn mitigates(&self, cwe: CweId) -> bool {
        self.cwes.contains(&cwe)
    }
}

/// Immutable, indexed collection of guidelines.
#[derive(Debug, Clone, Default)]
pub struct GuidelineSet {
    guidelines: Vec<Guideline>,
    index: BTreeMap<CweId, Vec<usize>>,
}

impl GuidelineSet {
    pub fn load(path: &Path) -> Result<Self, GuidelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| GuidelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GUIDELINES).expect("shipped guideline database is valid")
    }

    /// Parses the JSON array form. An empty or whitespace-only input is an
    /// empty set. Record indices in errors are 1-based.
    pub fn parse(text: &str) -> Result<Self, GuidelineError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let raw: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(GuidelineError::NotAnArray)?;
        let mut guidelines = Vec::with_capacity(raw.len());
        let mut seen = HashSet::new();
        for (i, value) in raw.into_iter().enumerate() {
            let index = i + 1;
            let g: Guideline = serde_json::from_value(value).map_err(|e| GuidelineError::Record {
                index,
                message: e.to_string(),
            })?;
            if g.id.trim().is_empty() {
                return Err(GuidelineError::Record { index, message: "empty id".into() });
            }
            if g.text.trim().is_empty() {
                return Err(GuidelineError::Record { index, message: format!("guideline {:?} has empty text", g.id) });
            }
            if g.cwes.is_empty() {
                return Err(GuidelineError::Record { index, message: format!("guideline {:?} lists no CWEs", g.id) });
            }
            if !seen.insert(g.id.clone()) {
                return Err(GuidelineError::DuplicateId { index, id: g.id });
            }
            guidelines.push(g);
        }
        Ok(Self::from_guidelines_unchecked(guidelines))
    }

    fn from_guidelines_unchecked(guidelines: Vec<Guideline>) -> Self {
        let mut index: BTreeMap<CweId, Vec<usize>> = BTreeMap::new();
        for (pos, g) in guidelines.iter().enumerate() {
            let mut cwes = g.cwes.clone();
            cwes.sort();
            cwes.dedup();
            for cwe in cwes {
                index.entry(cwe).or_default().push(pos);
            }
        }
        Self { guidelines, index }
    }

    pub fn len(&self) -> usize {
        self.guidelines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.guidelines.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Guideline> {
        self.guidelines.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Guideline> {
        self.guidelines.iter().find(|g| g.id == id)
    }

    /// Guideline ids indexed under `cwe`, in file order.
    pub fn ids_for(&self, cwe: CweId) -> Vec<&str> {
        self.index
            .get(&cwe)
            .map(|v| v.iter().map(|&p| self.guidelines[p].id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn covered_cwes(&self) -> impl Iterator<Item = CweId> + '_ {
        self.index.keys().copied()
    }

    /// Union of the guidelines for `cwes`, each guideline at most once.
    /// Ordered by the first query CWE that matches, then by file order.
    /// Unknown CWEs contribute nothing.
    pub fn lookup(&self, cwes: &[CweId]) -> Vec<&Guideline> {
        let mut taken = vec![false; self.guidelines.len()];
        let mut out = Vec::new();
        for cwe in cwes {
            for &pos in self.index.get(cwe).into_iter().flatten() {
                if !taken[pos] {
                    taken[pos] = true;
                    out.push(&self.guidelines[pos]);
                }
            }
        }
        out
    }
}

/// Summary produced by the lint subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LintSummary {
    pub guidelines: usize,
    pub cwes: usize,
}

pub fn lint(text: &str) -> Result<LintSummary, GuidelineError> {
    let set = GuidelineSet::parse(text)?;
    Ok(LintSummary { guidelines: set.len(), cwes: set.covered_cwes().count() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE_RULES: &str = r#"[
      {"id": "g-020", "cwes": [20], "text": "Don't use atoi or atol when converting strings to numbers; use strtod and strtol instead."},
      {"id": "g-078", "cwes": [78], "text": "Don't call system(), popen(), or other funcs that execute a command / start a shell."},
      {"id": "g-120", "cwes": [120], "text": "When accessing an array, check that the index is in-bounds before reading or writing to it."},
      {"id": "g-170", "cwes": [170], "text": "Do not pass a non-null-terminated buffer to a library function that expects a string."}
    ]"#;

    fn cwe(n: u32) -> CweId {
        CweId::new(n).unwrap()
    }

    #[test]
    fn example_rules_index_each_row() {
        let set = GuidelineSet::parse(EXAMPLE_RULES).unwrap();
        assert_eq!(set.len(), 4);
        assert_eq!(set.ids_for(cwe(78)), vec!["g-078"]);
        let hits = set.lookup(&[cwe(78)]);
        assert_eq!(hits.len(), 1);
        assert_eq!(
            hits[0].text,
            "Don't call system(), popen(), or other funcs that execute a command / start a shell."
        );
    }

    #[test]
    fn empty_input_gives_empty_set() {
        let set = GuidelineSet::parse("").unwrap();
        assert!(set.is_empty());
        assert_eq!(set.covered_cwes().count(), 0);
        assert!(GuidelineSet::parse("[]").unwrap().is_empty());
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let text = r#"[{"id":"g-001","cwes":[20],"text":"a"},{"id":"g-001","cwes":[78],"text":"b"}]"#;
        match GuidelineSet::parse(text) {
            Err(GuidelineError::DuplicateId { index, id }) => {
                assert_eq!(index, 2);
                assert_eq!(id, "g-001");
            }
            other => panic!("expected duplicate id error, got {other:?}"),
        }
    }

    #[test]
    fn empty_cwe_list_and_bad_records_name_their_index() {
        let text = r#"[{"id":"a","cwes":[20],"text":"x"},{"id":"b","cwes":[],"text":"y"}]"#;
        assert!(matches!(GuidelineSet::parse(text), Err(GuidelineError::Record { index: 2, .. })));
        let text = r#"[{"id":"a","cwes":[0],"text":"x"}]"#;
        assert!(matches!(GuidelineSet::parse(text), Err(GuidelineError::Record { index: 1, .. })));
        let text = r#"[{"id":"a","cwes":[20],"text":"  "}]"#;
        assert!(matches!(GuidelineSet::parse(text), Err(GuidelineError::Record { index: 1, .. })));
        assert!(matches!(GuidelineSet::parse("{}"), Err(GuidelineError::NotAnArray(_))));
    }

    #[test]
    fn lookup_orders_by_query_then_file_and_ignores_unknown() {
        let set = GuidelineSet::parse(EXAMPLE_RULES).unwrap();
        let ids: Vec<_> = set.lookup(&[cwe(20), cwe(120), cwe(9999)]).iter().map(|g| g.id.as_str()).collect();
        assert_eq!(ids, ["g-020", "g-120"]);
        assert!(set.lookup(&[]).is_empty());
    }

    #[test]
    fn shared_guideline_is_returned_once() {
        let text = r#"[
          {"id":"both","cwes":[120,787],"text":"bounds"},
          {"id":"w","cwes":[787],"text":"write"},
          {"id":"r","cwes":[120],"text":"read"}
        ]"#;
        let set = GuidelineSet::parse(text).unwrap();
        let ids: Vec<_> = set.lookup(&[cwe(787), cwe(120)]).iter().map(|g| g.id.as_str()).collect();
        assert_eq!(ids, ["both", "w", "r"]);
    }

    #[test]
    fn builtin_database_covers_example_rules() {
        let set = GuidelineSet::builtin();
        for n in [20, 78, 120, 170] {
            assert!(!set.ids_for(cwe(n)).is_empty(), "CWE-{n} uncovered");
        }
        let summary = lint(BUILTIN_GUIDELINES).unwrap();
        assert_eq!(summary.guidelines, set.len());
    }
}
