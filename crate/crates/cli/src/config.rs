use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use priorart::bow::BowConfig;
use priorart::corpus::{SectionSelector, DEFAULT_RELEVANCE_THRESHOLD};
use priorart::embed::{Doc2VecParams, Word2VecParams};
use priorart::eval::DEFAULT_HISTOGRAM_BINS;
use priorart::simfuncs::MeasureSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMethod {
    #[default]
    Bow,
    Lsa,
    Kpca,
    BowWord2vec,
    Doc2vec,
}

impl FeatureMethod {
    pub const ALL: [FeatureMethod; 5] = [
        FeatureMethod::Bow,
        FeatureMethod::Lsa,
        FeatureMethod::Kpca,
        FeatureMethod::BowWord2vec,
        FeatureMethod::Doc2vec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMethod::Bow => "bow",
            FeatureMethod::Lsa => "lsa",
            FeatureMethod::Kpca => "kpca",
            FeatureMethod::BowWord2vec => "bow_word2vec",
            FeatureMethod::Doc2vec => "doc2vec",
        }
    }

    /// File name of the fitted model in an output directory, if the method has one.
    pub fn model_file(self) -> Option<&'static str> {
        match self {
            FeatureMethod::Bow => None,
            FeatureMethod::Lsa => Some("lsa.bin"),
            FeatureMethod::Kpca => Some("kpca.bin"),
            FeatureMethod::BowWord2vec => Some("w2v.bin"),
            FeatureMethod::Doc2vec => Some("d2v.bin"),
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        FeatureMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| format!("unknown feature method {s:?} (expected bow, lsa, kpca, bow_word2vec or doc2vec)"))
    }
}

/// Everything a run needs. Defaults are length-normalized tf-idf over the
/// full text, scored with cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus_path: PathBuf,
    pub pairs_path: Option<PathBuf>,
    pub section: SectionSelector,
    pub feature_method: FeatureMethod,
    pub bow: BowConfig,
    /// Minimum document frequency of BOW vocabulary terms.
    pub min_count: usize,
    pub reduce_l: usize,
    pub word2vec: Word2VecParams,
    pub doc2vec: Doc2VecParams,
    /// Inference passes for unseen documents; defaults to the doc2vec epochs.
    pub infer_steps: Option<usize>,
    pub measure: MeasureSpec,
    pub relevance_threshold: u8,
    pub histogram_bins: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_path: PathBuf::from("corpus.jsonl"),
            pairs_path: None,
            section: SectionSelector::FullText,
            feature_method: FeatureMethod::Bow,
            bow: BowConfig::default(),
            min_count: 1,
            reduce_l: 100,
            word2vec: Word2VecParams::default(),
            doc2vec: Doc2VecParams::default(),
            infer_steps: None,
            measure: MeasureSpec::default(),
            relevance_threshold: DEFAULT_RELEVANCE_THRESHOLD,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            seed: 0,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.min_count < 1 {
            return bad("min_count must be at least 1".into());
        }
        if self.reduce_l < 1 {
            return bad("reduce_l must be at least 1".into());
        }
        if self.relevance_threshold > 5 {
            return bad(format!(
                "relevance_threshold must be in 0..=5, got {}",
                self.relevance_threshold
            ));
        }
        if self.histogram_bins < 1 {
            return bad("histogram_bins must be at least 1".into());
        }
        self.word2vec
            .validate()
            .map_err(|e| CliError::Config(format!("word2vec: {e}")))?;
        self.doc2vec
            .validate()
            .map_err(|e| CliError::Config(format!("doc2vec: {e}")))?;
        Ok(())
    }

    pub fn infer_steps(&self) -> usize {
        self.infer_steps.unwrap_or(self.doc2vec.epochs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.measure.to_string(), "coefficient:cosine");
        let back: RunConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = serde_json::from_str(
            r#"{"feature_method": "lsa", "reduce_l": 5, "measure": "distance:euclidean"}"#,
        )
        .unwrap();
        assert_eq!(partial.feature_method, FeatureMethod::Lsa);
        assert_eq!(partial.doc2vec.epochs, 18);
        assert!(serde_json::from_str::<RunConfig>(r#"{"unknown": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"feature_method": "svm"}"#).is_err());
    }

    #[test]
    fn method_names() {
        for m in FeatureMethod::ALL {
            assert_eq!(m.as_str().parse::<FeatureMethod>().unwrap(), m);
        }
        assert_eq!(
            "bow-word2vec".parse::<FeatureMethod>().unwrap(),
            FeatureMethod::BowWord2vec
        );
        assert!("x".parse::<FeatureMethod>().is_err());
    }

    #[test]
    fn validation() {
        let c = RunConfig {
            relevance_threshold: 6,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            word2vec: Word2VecParams {
                dim: 0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(c.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
