//! Linear-scan retrieval of the corpus documents most similar to a query.

use std::cmp::Ordering;
use std::path::Path;

use priorart::bow::{BowFeaturizer, FeatureMatrix, FeatureVector};
use priorart::corpus::PatentDocument;
use priorart::embed::{compose_doc_vector, infer_doc2vec};
use priorart::simfuncs::MeasureSpec;
use priorart::textproc::{tokenize, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, Stage, StageExt};
use crate::pipeline::{FittedModel, FEATURES_FILE, VOCAB_FILE};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
}

/// Up to `k` rows of `features` scoring at least `threshold` against
/// `query`, by descending score and then ascending id. The row whose id
/// equals the query's is skipped.
pub fn rank(
    features: &FeatureMatrix,
    query: &FeatureVector,
    measure: &MeasureSpec,
    k: usize,
    threshold: f64,
) -> priorart::Result<Vec<SearchHit>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let scores: Vec<Option<SearchHit>> = features
        .rows()
        .par_iter()
        .filter(|row| row.doc_id != query.doc_id)
        .map(|row| {
            let score = measure.similarity(query, row)?;
            Ok((score >= threshold).then(|| SearchHit {
                doc_id: row.doc_id.clone(),
                score,
            }))
        })
        .collect::<priorart::Result<_>>()?;
    let mut hits: Vec<SearchHit> = scores.into_iter().flatten().collect();
    hits.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.doc_id.cmp(&b.doc_id),
        o => o,
    });
    hits.truncate(k);
    Ok(hits)
}

fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "corpus is not featurized ({} is missing); run `priorart featurize` or `priorart pipeline` with this configuration first",
            path.display()
        )))
    }
}

pub fn read_query(path: &Path) -> CliResult<PatentDocument> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| priorart::Error::Io {
            context: path.display().to_string(),
            source: e,
        })
        .stage(Stage::Load)?;
    PatentDocument::from_json(text.trim(), false).stage(Stage::Load)
}

/// Featurize `query` the way the stored corpus was featurized.
pub fn featurize_query(
    config: &RunConfig,
    vocab: &Vocabulary,
    model: &FittedModel,
    query: &PatentDocument,
) -> CliResult<FeatureVector> {
    let tokens = tokenize(query, config.section);
    if tokens.is_empty() {
        return Err(CliError::Stage {
            stage: Stage::Search,
            source: priorart::Error::Validation(format!(
                "query {:?} has no text in section {}",
                query.id, config.section
            )),
        });
    }
    let bow = || -> priorart::Result<FeatureVector> {
        Ok(BowFeaturizer::new(vocab, config.bow)?.featurize(&tokens, vocab))
    };
    let v = match model {
        FittedModel::Bow => bow(),
        FittedModel::Lsa(m) => bow().and_then(|v| m.transform(&v)),
        FittedModel::Kpca(m) => bow().and_then(|v| m.transform(&v)),
        FittedModel::Word2vec(m) => bow().and_then(|v| compose_doc_vector(&v, &m.align(vocab), m)),
        FittedModel::Doc2vec(m) => infer_doc2vec(m, &tokens, config.infer_steps(), config.seed),
    };
    v.stage(Stage::Search)
}

/// Search the corpus featurized into `config.output_dir` for documents
/// similar to the query document stored at `query_path`.
pub fn cmd_search(
    config: &RunConfig,
    query_path: &Path,
    k: usize,
    threshold: f64,
) -> CliResult<Vec<SearchHit>> {
    config.validate()?;
    let dir = &config.output_dir;
    let (vocab_path, features_path) = (dir.join(VOCAB_FILE), dir.join(FEATURES_FILE));
    require(&vocab_path)?;
    require(&features_path)?;
    let model = match config.feature_method.model_file() {
        Some(name) => {
            let p = dir.join(name);
            require(&p)?;
            FittedModel::load(config.feature_method, &p).stage(Stage::Load)?
        }
        None => FittedModel::Bow,
    };
    let vocab = Vocabulary::load(&vocab_path).stage(Stage::Load)?;
    let features = FeatureMatrix::load_binary(&features_path).stage(Stage::Load)?;
    let query = read_query(query_path)?;
    let qv = featurize_query(config, &vocab, &model, &query)?;
    rank(&features, &qv, &config.measure, k, threshold).stage(Stage::Search)
}
