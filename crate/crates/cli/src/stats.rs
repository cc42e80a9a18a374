use std::collections::BTreeMap;

use priorart::corpus::{CorpusStore, SectionSelector};
use priorart::textproc::tokenize;
use serde::Serialize;

/// Corpus summary: sizes, year and category breakdowns, token lengths
/// (full text) and how many documents cite how many others.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub per_year: BTreeMap<i32, usize>,
    pub per_category: BTreeMap<String, usize>,
    pub mean_tokens: f64,
    /// Population standard deviation.
    pub std_tokens: f64,
    /// Number of citations → number of documents with that many.
    pub citation_histogram: BTreeMap<usize, usize>,
}

pub fn cmd_stats(store: &CorpusStore) -> CorpusStats {
    let mut per_year = BTreeMap::new();
    let mut per_category = BTreeMap::new();
    let mut citation_histogram = BTreeMap::new();
    let mut lengths = Vec::with_capacity(store.len());
    for doc in store.iter() {
        *per_year.entry(doc.pub_year).or_insert(0) += 1;
        *per_category.entry(doc.category.clone()).or_insert(0) += 1;
        *citation_histogram.entry(doc.cited_ids.len()).or_insert(0) += 1;
        lengths.push(tokenize(doc, SectionSelector::FullText).len() as f64);
    }
    let n = lengths.len() as f64;
    let (mean_tokens, std_tokens) = if lengths.is_empty() {
        (0.0, 0.0)
    } else {
        let mean = lengths.iter().sum::<f64>() / n;
        let var = lengths.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    CorpusStats {
        documents: store.len(),
        per_year,
        per_category,
        mean_tokens,
        std_tokens,
        citation_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use priorart::corpus::{PatentDocument, SynthConfig};

    #[test]
    fn empty_and_single() {
        let s = cmd_stats(&CorpusStore::from_documents(Vec::new()).unwrap());
        assert_eq!(s.documents, 0);
        assert_eq!((s.mean_tokens, s.std_tokens), (0.0, 0.0));
        let doc = PatentDocument {
            id: "A".into(),
            title: String::new(),
            abstract_text: "one two three four".into(),
            claims: String::new(),
            description: String::new(),
            pub_year: 2001,
            category: "A61B".into(),
            cited_ids: Vec::new(),
        };
        let s = cmd_stats(&CorpusStore::from_documents(vec![doc]).unwrap());
        assert_eq!((s.mean_tokens, s.std_tokens), (4.0, 0.0));
        assert_eq!(s.per_year[&2001], 1);
    }

    #[test]
    fn synthetic_bookkeeping() {
        let cfg = SynthConfig {
            n_topics: 3,
            docs_per_topic: 10,
            ..Default::default()
        };
        let synth = cfg.generate().unwrap();
        let s = cmd_stats(&synth.store);
        assert_eq!(s.documents, 30);
        assert_eq!(s.per_category.values().sum::<usize>(), 30);
        assert_eq!(s.per_category.len(), 3);
        assert!(
            s.mean_tokens >= cfg.min_tokens as f64 && s.mean_tokens <= cfg.max_tokens as f64 + 1.0
        );
        let cites: usize = s.citation_histogram.iter().map(|(k, v)| k * v).sum();
        assert_eq!(
            cites,
            synth.store.iter().map(|d| d.cited_ids.len()).sum::<usize>()
        );
    }
}
