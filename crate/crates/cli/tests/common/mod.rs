#![allow(dead_code)]

use std::path::{Path, PathBuf};

use priorart::corpus::{build_cited_random_pairs, PairDataset, SynthConfig, SyntheticCorpus};
use priorart_cli::{FeatureMethod, RunConfig};

/// A few small topics, enough for every method to run in seconds.
pub fn small_synth(seed: u64, duplicates: usize) -> SyntheticCorpus {
    SynthConfig {
        n_topics: 3,
        docs_per_topic: 12,
        vocab_per_topic: 40,
        noise_vocab: 40,
        seed,
        duplicates,
        min_tokens: 40,
        max_tokens: 60,
        ..Default::default()
    }
    .generate()
    .unwrap()
}

pub fn cited_random(synth: &SyntheticCorpus, n_random: usize) -> PairDataset {
    build_cited_random_pairs(&synth.store, synth.last_year, n_random, 1).unwrap()
}

/// Write corpus and pairs under `dir` and return a configuration reading
/// them, with embedding sizes scaled down.
pub fn small_config(
    dir: &Path,
    synth: &SyntheticCorpus,
    pairs: &PairDataset,
    method: FeatureMethod,
    out: &str,
) -> RunConfig {
    let corpus_path = dir.join("corpus.jsonl");
    let pairs_path = dir.join("pairs.csv");
    if !corpus_path.exists() {
        synth.store.save(&corpus_path).unwrap();
        pairs.save(&pairs_path).unwrap();
    }
    let mut c = RunConfig {
        corpus_path,
        pairs_path: Some(pairs_path),
        feature_method: method,
        reduce_l: 5,
        output_dir: dir.join(out),
        ..Default::default()
    };
    c.word2vec.dim = 12;
    c.word2vec.epochs = 2;
    c.word2vec.min_count = 1;
    c.doc2vec.dim = 12;
    c.doc2vec.epochs = 4;
    c.doc2vec.window = 3;
    c.doc2vec.min_count = 1;
    c
}

pub fn read(path: impl Into<PathBuf>) -> Vec<u8> {
    std::fs::read(path.into()).unwrap()
}
