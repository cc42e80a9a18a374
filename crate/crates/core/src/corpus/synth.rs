use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusStore, PatentDocument};
use crate::error::{Error, Result};

pub const FIRST_YEAR: i32 = 2000;
pub const LAST_YEAR: i32 = 2015;

/// Parameters of the topic-clustered synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_topics: usize,
    pub docs_per_topic: usize,
    pub vocab_per_topic: usize,
    pub noise_vocab: usize,
    pub seed: u64,
    /// Number of documents in the last year that get a verbatim copy under a new id.
    pub duplicates: usize,
    pub max_citations: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_topics: 8,
            docs_per_topic: 50,
            vocab_per_topic: 200,
            noise_vocab: 300,
            seed: 0,
            duplicates: 0,
            max_citations: 3,
            min_tokens: 80,
            max_tokens: 160,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub store: CorpusStore,
    /// Ground-truth topic per document id.
    pub topics: BTreeMap<String, usize>,
    /// Year whose documents cite earlier ones; the natural target year.
    pub last_year: i32,
}

pub fn generate_synthetic_corpus(
    n_topics: usize,
    docs_per_topic: usize,
    vocab_per_topic: usize,
    noise_vocab: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    SynthConfig {
        n_topics,
        docs_per_topic,
        vocab_per_topic,
        noise_vocab,
        seed,
        ..SynthConfig::default()
    }
    .generate()
}

struct DocPlan {
    id: String,
    topic: usize,
    year: i32,
    focus: Vec<usize>,
    cited: Vec<usize>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_topics", self.n_topics),
            ("docs_per_topic", self.docs_per_topic),
            ("vocab_per_topic", self.vocab_per_topic),
            ("noise_vocab", self.noise_vocab),
            ("min_tokens", self.min_tokens),
        ] {
            if v < 1 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if self.max_tokens < self.min_tokens {
            return Err(Error::Parameter("max_tokens must be >= min_tokens".into()));
        }
        Ok(())
    }

    fn year_of(&self, i: usize) -> i32 {
        let span = (LAST_YEAR - FIRST_YEAR + 1) as usize;
        FIRST_YEAR + (i * span / self.docs_per_topic) as i32
    }

    /// Generate the corpus. Each document draws most of its topical words
    /// from a small focus set; a citing document inherits part of its focus
    /// set from the documents it cites, so citations mark closer text than
    /// mere topic membership.
    pub fn generate(&self) -> Result<SyntheticCorpus> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let focus_size = (self.vocab_per_topic / 8).clamp(1, 24);
        let mut plans: Vec<DocPlan> = Vec::with_capacity(self.n_topics * self.docs_per_topic);

        for topic in 0..self.n_topics {
            let base = plans.len();
            for i in 0..self.docs_per_topic {
                let year = self.year_of(i);
                let earlier: Vec<usize> = (0..i)
                    .filter(|&j| self.year_of(j) < year)
                    .map(|j| base + j)
                    .collect();
                let n_cite = self.max_citations.min(earlier.len());
                let cited: Vec<usize> =
                    earlier.choose_multiple(&mut rng, n_cite).copied().collect();
                let mut focus: Vec<usize> = Vec::with_capacity(focus_size);
                for &c in &cited {
                    let parent = &plans[c].focus;
                    let take = (parent.len() / 2).max(1);
                    focus.extend(parent.choose_multiple(&mut rng, take).copied());
                }
                while focus.len() < focus_size {
                    focus.push(rng.random_range(0..self.vocab_per_topic));
                }
                focus.sort_unstable();
                focus.dedup();
                plans.push(DocPlan {
                    id: format!("SYN{topic:02}{i:05}"),
                    topic,
                    year,
                    focus,
                    cited,
                });
            }
        }

        let mut docs = Vec::with_capacity(plans.len() + self.duplicates);
        let mut topics = BTreeMap::new();
        for plan in &plans {
            let n_tokens = rng.random_range(self.min_tokens..=self.max_tokens);
            let words: Vec<String> = (0..n_tokens)
                .map(|_| {
                    let u: f64 = rng.random();
                    if u < 0.35 {
                        // Zipf-like noise: low indices are much more frequent.
                        let r: f64 = rng.random();
                        let k = ((self.noise_vocab as f64).powf(r) - 1.0) as usize;
                        format!("n{}", k.min(self.noise_vocab - 1))
                    } else if u < 0.8 {
                        format!(
                            "t{}w{}",
                            plan.topic,
                            plan.focus.choose(&mut rng).expect("non-empty focus")
                        )
                    } else {
                        format!(
                            "t{}w{}",
                            plan.topic,
                            rng.random_range(0..self.vocab_per_topic)
                        )
                    }
                })
                .collect();
            docs.push(render(plan, &words, &plans));
            topics.insert(plan.id.clone(), plan.topic);
        }

        let last_year = self.year_of(self.docs_per_topic - 1);
        let mut candidates: Vec<usize> = (0..docs.len())
            .filter(|&i| docs[i].pub_year == last_year)
            .collect();
        candidates.sort_unstable();
        let originals: Vec<usize> = candidates
            .choose_multiple(&mut rng, self.duplicates.min(candidates.len()))
            .copied()
            .collect();
        for i in originals {
            let mut copy = docs[i].clone();
            copy.id = format!("{}DUP", copy.id);
            copy.pub_year = last_year - 1;
            copy.cited_ids.clear();
            topics.insert(copy.id.clone(), plans[i].topic);
            docs.push(copy);
        }

        Ok(SyntheticCorpus {
            store: CorpusStore::from_documents(docs)?,
            topics,
            last_year,
        })
    }
}

fn render(plan: &DocPlan, words: &[String], plans: &[DocPlan]) -> PatentDocument {
    let n = words.len();
    let cut = |frac: f64| ((n as f64 * frac) as usize).min(n);
    let (t, a, c) = (cut(0.05).max(1), cut(0.25), cut(0.5));
    let sentence = |ws: &[String]| {
        let mut s = ws.join(" ");
        if !s.is_empty() {
            s.push('.');
        }
        s
    };
    PatentDocument {
        id: plan.id.clone(),
        title: words[..t].join(" ").to_uppercase(),
        abstract_text: sentence(&words[t..a.max(t)]),
        claims: sentence(&words[a.max(t)..c.max(t)]),
        description: sentence(&words[c.max(t)..]),
        pub_year: plan.year,
        category: format!("A61{}", (b'A' + (plan.topic % 26) as u8) as char),
        cited_ids: plan.cited.iter().map(|&c| plans[c].id.clone()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn citations_stay_within_topic_and_go_back_in_time() {
        let s = generate_synthetic_corpus(2, 5, 30, 20, 1).unwrap();
        assert_eq!(s.store.len(), 10);
        for doc in s.store.iter() {
            for c in &doc.cited_ids {
                let cited = s.store.get(c).expect("citation resolves");
                assert_eq!(s.topics[c], s.topics[&doc.id]);
                assert!(cited.pub_year < doc.pub_year);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dump = |seed| {
            let s = generate_synthetic_corpus(3, 6, 40, 30, seed).unwrap();
            let mut buf = Vec::new();
            s.store.write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(dump(5), dump(5));
        assert_ne!(dump(5), dump(6));
    }

    #[test]
    fn single_topic() {
        let s = generate_synthetic_corpus(1, 20, 30, 10, 2).unwrap();
        assert_eq!(s.store.len(), 20);
        assert!(s.topics.values().all(|&t| t == 0));
        assert!(s.store.iter().any(|d| !d.cited_ids.is_empty()));
    }

    #[test]
    fn planted_duplicates() {
        let cfg = SynthConfig {
            n_topics: 2,
            docs_per_topic: 20,
            duplicates: 2,
            ..SynthConfig::default()
        };
        let s = cfg.generate().unwrap();
        assert_eq!(s.store.len(), 42);
        let dups: Vec<_> = s.store.iter().filter(|d| d.id.ends_with("DUP")).collect();
        assert_eq!(dups.len(), 2);
        for d in dups {
            let orig = s.store.get(d.id.trim_end_matches("DUP")).unwrap();
            assert_eq!(orig.description, d.description);
        }
    }

    #[test]
    fn rejects_zero_parameters() {
        assert!(generate_synthetic_corpus(0, 5, 5, 5, 0).is_err());
        assert!(generate_synthetic_corpus(1, 5, 5, 0, 0).is_err());
    }
}
