use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusStore, SectionSelector};
use crate::error::{Error, Result};
use crate::textproc::preprocess;

/// Relevance scores strictly above this value count as relevant.
pub const DEFAULT_RELEVANCE_THRESHOLD: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairLabel {
    Cited,
    Random,
    Duplicate,
}

impl PairLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Cited => "cited",
            PairLabel::Random => "random",
            PairLabel::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cited" => Ok(PairLabel::Cited),
            "random" => Ok(PairLabel::Random),
            "duplicate" => Ok(PairLabel::Duplicate),
            _ => Err(Error::Validation(format!("unknown pair label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    CitedRandom,
    RelevanceLabeled,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::CitedRandom => "cited_random",
            DatasetKind::RelevanceLabeled => "relevance_labeled",
        })
    }
}

/// A (target, other) document pair. Cited/random datasets carry `label`;
/// relevance datasets carry `relevance` and optionally the original
/// cited/random `label` of the pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub target_id: String,
    pub other_id: String,
    pub label: Option<PairLabel>,
    pub relevance: Option<u8>,
}

impl LabeledPair {
    pub fn labeled(
        target_id: impl Into<String>,
        other_id: impl Into<String>,
        label: PairLabel,
    ) -> Self {
        LabeledPair {
            target_id: target_id.into(),
            other_id: other_id.into(),
            label: Some(label),
            relevance: None,
        }
    }

    /// Label text written next to a score: the cited/random label, or the
    /// relevance score for relevance pairs.
    pub fn label_text(&self) -> String {
        match (self.relevance, self.label) {
            (Some(score), _) => score.to_string(),
            (None, Some(label)) => label.to_string(),
            (None, None) => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub kind: DatasetKind,
    pub pairs: Vec<LabeledPair>,
    pub counts: BTreeMap<String, usize>,
    /// Binarization threshold for relevance scores.
    pub threshold: u8,
}

impl PairDataset {
    pub fn new(kind: DatasetKind, pairs: Vec<LabeledPair>, threshold: u8) -> Result<Self> {
        if threshold > 5 {
            return Err(Error::Parameter(format!(
                "relevance threshold must be in 0..=5, got {threshold}"
            )));
        }
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert((p.target_id.as_str(), p.other_id.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate pair ({}, {})",
                    p.target_id, p.other_id
                )));
            }
            match kind {
                DatasetKind::CitedRandom if p.label.is_none() => {
                    return Err(Error::Validation(format!(
                        "pair ({}, {}) has no label",
                        p.target_id, p.other_id
                    )))
                }
                DatasetKind::RelevanceLabeled => match p.relevance {
                    Some(s) if s <= 5 => {}
                    Some(s) => {
                        return Err(Error::Validation(format!(
                            "relevance score {s} outside 0..=5"
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "pair ({}, {}) has no relevance score",
                            p.target_id, p.other_id
                        )))
                    }
                },
                _ => {}
            }
            if p.target_id == p.other_id {
                return Err(Error::Validation(format!(
                    "pair pairs {} with itself",
                    p.target_id
                )));
            }
        }
        let mut ds = PairDataset {
            kind,
            pairs,
            counts: BTreeMap::new(),
            threshold,
        };
        ds.counts = ds.compute_counts();
        Ok(ds)
    }

    fn compute_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.pairs {
            if let Some(label) = p.label {
                *counts.entry(label.to_string()).or_insert(0) += 1;
            }
            if self.kind == DatasetKind::RelevanceLabeled {
                let key = if self.is_relevant(p) {
                    "relevant"
                } else {
                    "irrelevant"
                };
                *counts.entry(key.to_owned()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count(&self, key: &str) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn is_relevant(&self, pair: &LabeledPair) -> bool {
        pair.relevance.is_some_and(|s| s > self.threshold)
    }

    /// Binary class of a pair for ranking metrics: cited vs random, or
    /// relevant vs irrelevant. Duplicate pairs take no part.
    pub fn positive(&self, pair: &LabeledPair) -> Option<bool> {
        match self.kind {
            DatasetKind::CitedRandom => match pair.label? {
                PairLabel::Cited => Some(true),
                PairLabel::Random => Some(false),
                PairLabel::Duplicate => None,
            },
            DatasetKind::RelevanceLabeled => Some(self.is_relevant(pair)),
        }
    }

    pub fn target_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.pairs
            .iter()
            .map(|p| p.target_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    /// Error listing every referenced id absent from `store`.
    pub fn check_ids(&self, store: &CorpusStore) -> Result<()> {
        let mut missing: Vec<&str> = Vec::new();
        for p in &self.pairs {
            for id in [&p.target_id, &p.other_id] {
                if !store.contains(id) && !missing.contains(&id.as_str()) {
                    missing.push(id);
                }
            }
        }
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "unknown document ids: {}",
                missing.join(", ")
            )))
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        match self.kind {
            DatasetKind::CitedRandom => {
                w.write_record(["target_id", "other_id", "label"])
                    .map_err(csv_err)?;
                for p in &self.pairs {
                    let label = p.label.map(PairLabel::as_str).unwrap_or_default();
                    w.write_record([p.target_id.as_str(), p.other_id.as_str(), label])
                        .map_err(csv_err)?;
                }
            }
            DatasetKind::RelevanceLabeled => {
                let with_labels = self.pairs.iter().any(|p| p.label.is_some());
                if with_labels {
                    w.write_record(["target_id", "other_id", "score", "label"])
                        .map_err(csv_err)?;
                } else {
                    w.write_record(["target_id", "other_id", "score"])
                        .map_err(csv_err)?;
                }
                for p in &self.pairs {
                    let score = p.relevance.unwrap_or_default().to_string();
                    let mut rec = vec![p.target_id.as_str(), p.other_id.as_str(), score.as_str()];
                    if with_labels {
                        rec.push(p.label.map(PairLabel::as_str).unwrap_or_default());
                    }
                    w.write_record(rec).map_err(csv_err)?;
                }
            }
        }
        w.flush()
            .map_err(|e| Error::io(path.display().to_string(), e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Pair every document published in `target_year` with its in-corpus
/// citations (cited), with one shared sample of `n_random` documents that
/// no target cites (random), and with any other document whose normalized
/// full text is identical (duplicate; overrides the other labels).
pub fn build_cited_random_pairs(
    store: &CorpusStore,
    target_year: i32,
    n_random: usize,
    seed: u64,
) -> Result<PairDataset> {
    if store.is_empty() {
        return Err(Error::Validation("corpus is empty".into()));
    }
    let targets: Vec<_> = store.iter().filter(|d| d.pub_year == target_year).collect();
    if targets.is_empty() {
        return Err(Error::Validation(format!(
            "no documents published in {target_year}"
        )));
    }
    let target_ids: HashSet<&str> = targets.iter().map(|d| d.id.as_str()).collect();
    let cited_by_targets: HashSet<&str> = targets
        .iter()
        .flat_map(|d| d.cited_ids.iter().map(String::as_str))
        .collect();
    let eligible: Vec<&str> = store
        .iter()
        .map(|d| d.id.as_str())
        .filter(|id| !target_ids.contains(id) && !cited_by_targets.contains(id))
        .collect();
    if eligible.len() < n_random {
        return Err(Error::Validation(format!(
            "requested {n_random} random documents but only {} are never cited by a target",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let randoms: Vec<&str> = rand::seq::index::sample(&mut rng, eligible.len(), n_random)
        .into_iter()
        .map(|i| eligible[i])
        .collect();

    let mut by_text: HashMap<String, Vec<&str>> = HashMap::new();
    for doc in store.iter() {
        by_text
            .entry(preprocess(&doc.section_text(SectionSelector::FullText)))
            .or_default()
            .push(&doc.id);
    }
    let text_of = |id: &str| {
        preprocess(
            &store
                .get(id)
                .expect("id from store")
                .section_text(SectionSelector::FullText),
        )
    };

    let mut pairs = Vec::new();
    for target in targets {
        let mut slots: HashMap<String, usize> = HashMap::new();
        let mut local: Vec<LabeledPair> = Vec::new();
        let mut add = |other: &str, label: PairLabel, local: &mut Vec<LabeledPair>| {
            if other == target.id {
                return;
            }
            match slots.get(other) {
                Some(&i) => {
                    if label == PairLabel::Duplicate {
                        local[i].label = Some(label);
                    }
                }
                None => {
                    slots.insert(other.to_owned(), local.len());
                    local.push(LabeledPair::labeled(target.id.clone(), other, label));
                }
            }
        };
        for cited in target.cited_ids.iter().filter(|c| store.contains(c)) {
            add(cited, PairLabel::Cited, &mut local);
        }
        for r in &randoms {
            add(r, PairLabel::Random, &mut local);
        }
        for dup in by_text.get(&text_of(&target.id)).into_iter().flatten() {
            add(dup, PairLabel::Duplicate, &mut local);
        }
        pairs.extend(local);
    }
    PairDataset::new(DatasetKind::CitedRandom, pairs, DEFAULT_RELEVANCE_THRESHOLD)
}

#[derive(Debug, Deserialize)]
struct PairRow {
    target_id: String,
    other_id: String,
    label: Option<String>,
    score: Option<String>,
}

/// Load a pair CSV of either kind; the kind follows from the header
/// (`score` column ⇒ relevance dataset).
pub fn load_pairs(path: &Path, store: Option<&CorpusStore>, threshold: u8) -> Result<PairDataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    let has_score = headers.iter().any(|h| h == "score");
    let has_label = headers.iter().any(|h| h == "label");
    if !headers.iter().any(|h| h == "target_id")
        || !headers.iter().any(|h| h == "other_id")
        || !(has_score || has_label)
    {
        return Err(Error::Validation(format!(
            "{}: header must be target_id,other_id,label or target_id,other_id,score",
            path.display()
        )));
    }
    let kind = if has_score {
        DatasetKind::RelevanceLabeled
    } else {
        DatasetKind::CitedRandom
    };
    let mut pairs = Vec::new();
    for (i, row) in reader.deserialize::<PairRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })?;
        let label = match row.label.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(l) => Some(l.parse::<PairLabel>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("unknown label {l:?}"),
            })?),
        };
        let relevance = match row.score.as_deref().map(str::trim) {
            None => None,
            Some(s) => {
                let v: i64 = s.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("score {s:?} is not an integer"),
                })?;
                if !(0..=5).contains(&v) {
                    return Err(Error::Validation(format!(
                        "{} line {line}: score {v} outside 0..=5",
                        path.display()
                    )));
                }
                Some(v as u8)
            }
        };
        pairs.push(LabeledPair {
            target_id: row.target_id,
            other_id: row.other_id,
            label,
            relevance,
        });
    }
    let ds = PairDataset::new(kind, pairs, threshold)?;
    if let Some(store) = store {
        ds.check_ids(store)?;
    }
    Ok(ds)
}

/// Load a relevance-scored pair file (`target_id,other_id,score[,label]`).
pub fn load_relevance_pairs(
    path: &Path,
    store: Option<&CorpusStore>,
    threshold: u8,
) -> Result<PairDataset> {
    let ds = load_pairs(path, store, threshold)?;
    if ds.kind != DatasetKind::RelevanceLabeled {
        return Err(Error::Validation(format!(
            "{}: not a relevance pair file (no score column)",
            path.display()
        )));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PatentDocument;
    use std::io::Write;

    fn doc(id: &str, year: i32, text: &str, cites: &[&str]) -> PatentDocument {
        PatentDocument {
            id: id.into(),
            title: String::new(),
            abstract_text: text.into(),
            claims: String::new(),
            description: String::new(),
            pub_year: year,
            category: "A61B".into(),
            cited_ids: cites.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn small_store() -> CorpusStore {
        let mut docs = vec![
            doc("T1", 2015, "target one", &["C1", "C2", "C3"]),
            doc("T2", 2015, "target two", &["C4", "C5", "MISSING"]),
        ];
        for c in 1..=5 {
            docs.push(doc(&format!("C{c}"), 2010, &format!("cited {c}"), &[]));
        }
        for r in 1..=4 {
            docs.push(doc(&format!("R{r}"), 2009, &format!("random {r}"), &[]));
        }
        CorpusStore::from_documents(docs).unwrap()
    }

    /// Oracle: enumerate (target, doc) combinations and apply the pairing rule directly.
    fn brute_force_counts(
        store: &CorpusStore,
        year: i32,
        randoms: &[&str],
    ) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in store.iter().filter(|d| d.pub_year == year) {
            for o in store.iter() {
                if o.id == t.id {
                    continue;
                }
                let label = if t.cited_ids.contains(&o.id) {
                    "cited"
                } else if randoms.contains(&o.id.as_str()) {
                    "random"
                } else {
                    continue;
                };
                *counts.entry(label.to_string()).or_insert(0) += 1;
            }
        }
        counts
    }

    #[test]
    fn counts_match_enumeration() {
        let store = small_store();
        let ds = build_cited_random_pairs(&store, 2015, 4, 7).unwrap();
        let oracle = brute_force_counts(&store, 2015, &["R1", "R2", "R3", "R4"]);
        assert_eq!(
            oracle,
            BTreeMap::from([("cited".into(), 5), ("random".into(), 8)])
        );
        assert_eq!(ds.counts, oracle);
        assert_eq!(ds.len(), 13);
    }

    #[test]
    fn randoms_are_never_cited_and_shared() {
        let store = small_store();
        let ds = build_cited_random_pairs(&store, 2015, 3, 11).unwrap();
        let r1: Vec<_> = ds
            .pairs
            .iter()
            .filter(|p| p.target_id == "T1" && p.label == Some(PairLabel::Random))
            .map(|p| &p.other_id)
            .collect();
        let r2: Vec<_> = ds
            .pairs
            .iter()
            .filter(|p| p.target_id == "T2" && p.label == Some(PairLabel::Random))
            .map(|p| &p.other_id)
            .collect();
        assert_eq!(r1, r2);
        assert!(r1.iter().all(|id| id.starts_with('R')));
    }

    #[test]
    fn deterministic_for_seed() {
        let store = small_store();
        let a = build_cited_random_pairs(&store, 2015, 2, 99).unwrap();
        let b = build_cited_random_pairs(&store, 2015, 2, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_randoms_and_no_targets() {
        let store = small_store();
        let err = build_cited_random_pairs(&store, 2015, 5, 0).unwrap_err();
        assert!(err.to_string().contains("only 4"), "{err}");
        assert!(build_cited_random_pairs(&store, 1999, 1, 0).is_err());
    }

    #[test]
    fn identical_copy_is_labeled_duplicate() {
        let mut docs = vec![
            doc("T1", 2015, "Same text!", &["C1"]),
            doc("C1", 2010, "other", &[]),
        ];
        docs.push(doc("T1COPY", 2014, "same TEXT", &[]));
        docs.push(doc("R1", 2010, "random", &[]));
        let store = CorpusStore::from_documents(docs).unwrap();
        let ds = build_cited_random_pairs(&store, 2015, 2, 1).unwrap();
        let dups: Vec<_> = ds
            .pairs
            .iter()
            .filter(|p| p.label == Some(PairLabel::Duplicate))
            .collect();
        assert_eq!(dups.len(), 1);
        assert_eq!(dups[0].other_id, "T1COPY");
        assert_eq!(ds.count("duplicate"), 1);
        assert_eq!(ds.count("random"), 1);
    }

    fn csv_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn relevance_binarization_is_strict() {
        let f = csv_file("target_id,other_id,score\nA,B,3\nA,C,2\n");
        let ds = load_relevance_pairs(f.path(), None, 2).unwrap();
        assert!(ds.is_relevant(&ds.pairs[0]));
        assert!(!ds.is_relevant(&ds.pairs[1]));
        assert_eq!(ds.positive(&ds.pairs[1]), Some(false));
    }

    #[test]
    fn relevance_counts_with_labels() {
        let mut body = String::from("target_id,other_id,score,label\n");
        for i in 0..450 {
            let label = if i < 151 { "cited" } else { "random" };
            body.push_str(&format!("T{},O{i},{},{label}\n", i % 10, i % 6));
        }
        let ds = load_relevance_pairs(csv_file(&body).path(), None, 2).unwrap();
        assert_eq!(ds.count("cited"), 151);
        assert_eq!(ds.count("random"), 299);
        assert_eq!(ds.len(), 450);
    }

    #[test]
    fn relevance_errors() {
        let f = csv_file("target_id,other_id,score\nA,B,6\n");
        assert!(matches!(
            load_relevance_pairs(f.path(), None, 2),
            Err(Error::Validation(_))
        ));
        let store = small_store();
        let f = csv_file("target_id,other_id,score\nT1,NOPE,1\n");
        let err = load_relevance_pairs(f.path(), Some(&store), 2).unwrap_err();
        assert!(err.to_string().contains("NOPE"));
    }

    #[test]
    fn cited_random_file_round_trip() {
        let store = small_store();
        let ds = build_cited_random_pairs(&store, 2015, 4, 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        ds.save(f.path()).unwrap();
        let back = load_pairs(f.path(), Some(&store), 2).unwrap();
        assert_eq!(back, ds);
    }
}
