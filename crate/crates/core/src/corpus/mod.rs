//! Patent document corpora and labeled pair datasets.

mod document;
mod pairs;
mod store;
mod synth;

pub use document::{PatentDocument, SectionSelector};
pub use pairs::{
    build_cited_random_pairs, load_pairs, load_relevance_pairs, DatasetKind, LabeledPair,
    PairDataset, PairLabel, DEFAULT_RELEVANCE_THRESHOLD,
};
pub use store::CorpusStore;
pub use synth::{generate_synthetic_corpus, SynthConfig, SyntheticCorpus};
