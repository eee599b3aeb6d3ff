//! Caption coverage: how often captions mention each concept of a small
//! taxonomy, by whole-word, case-insensitive matching.

use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TAXONOMY_SCHEMA_VERSION: u32 = 1;

/// 3 groups × 3 concepts, bundled for tests and demos.
pub const TOY_TAXONOMY: &str = include_str!("../data/toy_taxonomy.json");
/// 1,000 captions with planted concept frequencies.
pub const TOY_CAPTIONS: &str = include_str!("../data/toy_captions.txt");

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("unsupported taxonomy schema version {0:?}")]
    UnsupportedSchema(Option<u64>),
    #[error("concept '{concept}' appears twice in group '{group}'")]
    DuplicateConcept { group: String, concept: String },
    #[error("group '{0}' appears twice")]
    DuplicateGroup(String),
    #[error("concept '{0}' has no surface forms")]
    EmptySynonyms(String),
    #[error("surface form '{form}' of '{concept}' must be lowercase, non-empty and tokenize to words")]
    InvalidSurfaceForm { concept: String, form: String },
    #[error("corpus contains no captions")]
    EmptyCorpus,
    #[error("count tables belong to different taxonomies")]
    IncompatibleCounts,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub name: String,
    pub synonyms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub name: String,
    pub concepts: Vec<Concept>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub schema_version: u32,
    pub groups: Vec<ConceptGroup>,
}

/// Lowercased words: maximal runs of alphanumerics and hyphens, with
/// hyphens trimmed from the ends (`"navy-blue"` is one word, `"-cat"` is `cat`).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-'))
        .map(|t| t.trim_matches('-'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Taxonomy {
    pub fn from_json(s: &str) -> Result<Self, CoverageError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let version = v.get("schema_version").and_then(serde_json::Value::as_u64);
        if version != Some(TAXONOMY_SCHEMA_VERSION as u64) {
            return Err(CoverageError::UnsupportedSchema(version));
        }
        let t: Taxonomy = serde_json::from_value(v)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        let mut groups = HashSet::new();
        for g in &self.groups {
            if !groups.insert(&g.name) {
                return Err(CoverageError::DuplicateGroup(g.name.clone()));
            }
            let mut seen = HashSet::new();
            for c in &g.concepts {
                if !seen.insert(&c.name) {
                    return Err(CoverageError::DuplicateConcept {
                        group: g.name.clone(),
                        concept: c.name.clone(),
                    });
                }
                if c.synonyms.is_empty() {
                    return Err(CoverageError::EmptySynonyms(c.name.clone()));
                }
                for f in &c.synonyms {
                    if f.is_empty() || *f != f.to_lowercase() || tokenize(f).join(" ") != f.trim() {
                        return Err(CoverageError::InvalidSurfaceForm {
                            concept: c.name.clone(),
                            form: f.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.groups.iter().map(|g| g.concepts.len()).sum()
    }
}

pub fn load_taxonomy(path: &Path) -> Result<Taxonomy, CoverageError> {
    Taxonomy::from_json(&std::fs::read_to_string(path)?)
}

/// Raw match counts, mergeable across corpus shards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageCounts {
    /// One entry per concept in taxonomy order.
    pub matched: Vec<u64>,
    pub total: u64,
}

/// Compiled matcher: each surface form as a token sequence.
struct Matcher {
    forms: Vec<Vec<Vec<String>>>,
}

impl Matcher {
    fn new(t: &Taxonomy) -> Self {
        let forms = t
            .groups
            .iter()
            .flat_map(|g| &g.concepts)
            .map(|c| c.synonyms.iter().map(|s| tokenize(s)).collect())
            .collect();
        Self { forms }
    }

    fn matches(tokens: &[String], form: &[String]) -> bool {
        if form.len() == 1 {
            return tokens.iter().any(|t| *t == form[0]);
        }
        tokens.windows(form.len()).any(|w| w == form)
    }
}

impl CoverageCounts {
    pub fn zero(t: &Taxonomy) -> Self {
        Self {
            matched: vec![0; t.n_concepts()],
            total: 0,
        }
    }

    /// Associative, commutative merge of two shards' counts.
    pub fn merge(&mut self, other: &CoverageCounts) -> Result<(), CoverageError> {
        if self.matched.len() != other.matched.len() {
            return Err(CoverageError::IncompatibleCounts);
        }
        for (a, b) in self.matched.iter_mut().zip(&other.matched) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }
}

/// Single streaming pass over captions, one per line. Blank lines are not
/// captions and are skipped.
pub fn count_captions<R: BufRead>(captions: R, taxonomy: &Taxonomy) -> Result<CoverageCounts, CoverageError> {
    let matcher = Matcher::new(taxonomy);
    let mut counts = CoverageCounts::zero(taxonomy);
    for line in captions.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        counts.total += 1;
        let tokens = tokenize(&line);
        for (slot, forms) in counts.matched.iter_mut().zip(&matcher.forms) {
            if forms.iter().any(|f| Matcher::matches(&tokens, f)) {
                *slot += 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptCoverage {
    pub group: String,
    pub concept: String,
    pub captions_matched: u64,
    pub captions_total: u64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCoverage {
    pub group: String,
    /// Arithmetic mean of the member concepts' rates.
    pub mean_rate: f64,
    pub n_concepts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_captions: u64,
    pub concepts: Vec<ConceptCoverage>,
    pub groups: Vec<GroupCoverage>,
}

impl CoverageReport {
    pub fn from_counts(taxonomy: &Taxonomy, counts: &CoverageCounts) -> Result<Self, CoverageError> {
        if counts.total == 0 {
            return Err(CoverageError::EmptyCorpus);
        }
        if counts.matched.len() != taxonomy.n_concepts() {
            return Err(CoverageError::IncompatibleCounts);
        }
        let mut concepts = Vec::new();
        let mut groups = Vec::new();
        let mut k = 0;
        for g in &taxonomy.groups {
            let mut sum = 0.0;
            for c in &g.concepts {
                let rate = counts.matched[k] as f64 / counts.total as f64;
                sum += rate;
                concepts.push(ConceptCoverage {
                    group: g.name.clone(),
                    concept: c.name.clone(),
                    captions_matched: counts.matched[k],
                    captions_total: counts.total,
                    rate,
                });
                k += 1;
            }
            let n = g.concepts.len();
            groups.push(GroupCoverage {
                group: g.name.clone(),
                mean_rate: if n == 0 { 0.0 } else { sum / n as f64 },
                n_concepts: n,
            });
        }
        Ok(Self {
            total_captions: counts.total,
            concepts,
            groups,
        })
    }

    pub fn concept(&self, name: &str) -> Option<&ConceptCoverage> {
        self.concepts.iter().find(|c| c.concept == name)
    }

    pub fn group(&self, name: &str) -> Option<&GroupCoverage> {
        self.groups.iter().find(|g| g.group == name)
    }

    /// Columns `group, concept, captions_matched, captions_total, rate`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), CoverageError> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.concepts {
            out.serialize(c)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Names of groups in which no concept was mentioned at all.
    pub fn uncovered_groups(&self) -> BTreeSet<&str> {
        self.groups
            .iter()
            .filter(|g| g.mean_rate == 0.0)
            .map(|g| g.group.as_str())
            .collect()
    }
}

pub fn coverage<R: BufRead>(captions: R, taxonomy: &Taxonomy) -> Result<CoverageReport, CoverageError> {
    CoverageReport::from_counts(taxonomy, &count_captions(captions, taxonomy)?)
}
