//! Featurize → score → evaluate, with artifacts written to the output
//! directory and fitted features optionally cached by content hash.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use priorart::bow::{build_features, FeatureMatrix, FeatureVector};
use priorart::corpus::{load_pairs, CorpusStore, PairDataset};
use priorart::embed::{
    compose_doc_vector, infer_doc2vec, train_doc2vec, train_word2vec, Doc2VecModel, Word2VecModel,
};
use priorart::eval::{roc_to_csv, score_histograms, EvalReport};
use priorart::reduce::{kpca_fit, lsa_fit, transform_matrix, KpcaModel, LsaModel};
use priorart::simfuncs::{score_pairs, write_scored_csv};
use priorart::textproc::{tokenize, TokenizedDoc, Vocabulary};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{FeatureMethod, RunConfig};
use crate::error::{CliError, CliResult, Stage, StageExt};

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const FEATURES_FILE: &str = "features.bin";
pub const REPORT_FILE: &str = "report.json";
pub const SCORED_FILE: &str = "scored.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const HISTOGRAM_FILE: &str = "histograms.csv";

fn io_error(context: impl Into<String>, source: std::io::Error) -> priorart::Error {
    priorart::Error::Io {
        context: context.into(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Bow,
    Lsa(LsaModel),
    Kpca(KpcaModel),
    Word2vec(Word2VecModel),
    Doc2vec(Doc2VecModel),
}

impl FittedModel {
    pub fn save(&self, path: &Path) -> priorart::Result<()> {
        match self {
            FittedModel::Bow => Ok(()),
            FittedModel::Lsa(m) => m.save(path),
            FittedModel::Kpca(m) => m.save(path),
            FittedModel::Word2vec(m) => m.save(path),
            FittedModel::Doc2vec(m) => m.save(path),
        }
    }

    pub fn load(method: FeatureMethod, path: &Path) -> priorart::Result<Self> {
        Ok(match method {
            FeatureMethod::Bow => FittedModel::Bow,
            FeatureMethod::Lsa => FittedModel::Lsa(LsaModel::load(path)?),
            FeatureMethod::Kpca => FittedModel::Kpca(KpcaModel::load(path)?),
            FeatureMethod::BowWord2vec => FittedModel::Word2vec(Word2VecModel::load(path)?),
            FeatureMethod::Doc2vec => FittedModel::Doc2vec(Doc2VecModel::load(path)?),
        })
    }
}

/// Feature vectors for every corpus document plus what produced them.
#[derive(Debug, Clone)]
pub struct Featurized {
    pub vocab: Vocabulary,
    pub features: FeatureMatrix,
    pub model: FittedModel,
}

pub fn tokenize_store(store: &CorpusStore, config: &RunConfig) -> Vec<TokenizedDoc> {
    store
        .documents()
        .par_iter()
        .map(|d| tokenize(d, config.section))
        .collect()
}

#[derive(Serialize)]
struct CacheKey<'a> {
    version: u32,
    section: String,
    method: FeatureMethod,
    bow: &'a priorart::bow::BowConfig,
    min_count: usize,
    reduce_l: Option<usize>,
    word2vec: Option<&'a priorart::embed::Word2VecParams>,
    doc2vec: Option<&'a priorart::embed::Doc2VecParams>,
    infer_steps: Option<usize>,
    seed: u64,
    excluded: BTreeSet<&'a str>,
}

/// Hex SHA-256 of the corpus bytes and the settings that shape the features.
pub fn cache_key(config: &RunConfig, exclude: &HashSet<String>) -> CliResult<String> {
    let corpus = std::fs::read(&config.corpus_path)
        .map_err(|e| io_error(config.corpus_path.display().to_string(), e))
        .stage(Stage::Load)?;
    let m = config.feature_method;
    let key = CacheKey {
        version: 1,
        section: config.section.to_string(),
        method: m,
        bow: &config.bow,
        min_count: config.min_count,
        reduce_l: matches!(m, FeatureMethod::Lsa | FeatureMethod::Kpca).then_some(config.reduce_l),
        word2vec: (m == FeatureMethod::BowWord2vec).then_some(&config.word2vec),
        doc2vec: (m == FeatureMethod::Doc2vec).then_some(&config.doc2vec),
        infer_steps: (m == FeatureMethod::Doc2vec).then(|| config.infer_steps()),
        seed: config.seed,
        excluded: exclude.iter().map(String::as_str).collect(),
    };
    let mut hasher = Sha256::new();
    hasher.update(&corpus);
    hasher.update(serde_json::to_vec(&key).expect("cache key serializes"));
    Ok(hex::encode(hasher.finalize()))
}

fn model_path(dir: &Path, method: FeatureMethod) -> Option<PathBuf> {
    method.model_file().map(|f| dir.join(f))
}

fn load_cached(dir: &Path, method: FeatureMethod) -> Option<(FeatureMatrix, FittedModel)> {
    let features = FeatureMatrix::load_binary(&dir.join(FEATURES_FILE)).ok()?;
    let model = match model_path(dir, method) {
        Some(p) => FittedModel::load(method, &p).ok()?,
        None => FittedModel::Bow,
    };
    Some((features, model))
}

fn store_cached(
    dir: &Path,
    method: FeatureMethod,
    features: &FeatureMatrix,
    model: &FittedModel,
) -> CliResult<()> {
    let tmp = dir.with_extension("tmp");
    let write = || -> priorart::Result<()> {
        std::fs::create_dir_all(&tmp).map_err(|e| io_error(tmp.display().to_string(), e))?;
        features.save_binary(&tmp.join(FEATURES_FILE))?;
        if let Some(p) = model_path(&tmp, method) {
            model.save(&p)?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| io_error(dir.display().to_string(), e))
    };
    let result = write();
    if result.is_err() {
        let _ = std::fs::remove_dir_all(&tmp);
    }
    result.stage(Stage::Write)
}

/// Featurize every document of `store` with the configured method.
/// Documents in `exclude` are left out of embedding training; doc2vec
/// infers their vectors afterwards.
pub fn featurize(
    config: &RunConfig,
    store: &CorpusStore,
    exclude: &HashSet<String>,
) -> CliResult<Featurized> {
    let docs = tokenize_store(store, config);
    let vocab = Vocabulary::build(&docs, config.min_count).stage(Stage::Featurize)?;
    let method = config.feature_method;

    let cache_dir = match &config.cache_dir {
        Some(root) => Some(root.join(cache_key(config, exclude)?)),
        None => None,
    };
    if let Some((features, model)) = cache_dir.as_deref().and_then(|d| load_cached(d, method)) {
        return Ok(Featurized {
            vocab,
            features,
            model,
        });
    }

    let bow = || build_features(&docs, &vocab, config.bow).stage(Stage::Featurize);
    let (features, model) = match method {
        FeatureMethod::Bow => (bow()?, FittedModel::Bow),
        FeatureMethod::Lsa => {
            let x = bow()?;
            let m = lsa_fit(&x, config.reduce_l, config.seed).stage(Stage::Reduce)?;
            (
                transform_matrix(&x, |v| m.transform(v)).stage(Stage::Reduce)?,
                FittedModel::Lsa(m),
            )
        }
        FeatureMethod::Kpca => {
            let x = bow()?;
            let m = kpca_fit(&x, config.reduce_l, config.seed).stage(Stage::Reduce)?;
            (
                transform_matrix(&x, |v| m.transform(v)).stage(Stage::Reduce)?,
                FittedModel::Kpca(m),
            )
        }
        FeatureMethod::BowWord2vec => {
            let x = bow()?;
            let training: Vec<TokenizedDoc> = docs
                .iter()
                .filter(|d| !exclude.contains(&d.doc_id))
                .cloned()
                .collect();
            let m = train_word2vec(&training, &config.word2vec, config.seed).stage(Stage::Train)?;
            let align = m.align(&vocab);
            let f = transform_matrix(&x, |v| compose_doc_vector(v, &align, &m))
                .stage(Stage::Featurize)?;
            (f, FittedModel::Word2vec(m))
        }
        FeatureMethod::Doc2vec => {
            let m =
                train_doc2vec(&docs, &config.doc2vec, exclude, config.seed).stage(Stage::Train)?;
            let steps = config.infer_steps();
            let rows: Vec<FeatureVector> = docs
                .par_iter()
                .map(|d| match m.doc_vector(&d.doc_id) {
                    Some(v) => Ok(FeatureVector::dense(d.doc_id.clone(), v.to_vec())),
                    None => infer_doc2vec(&m, d, steps, config.seed),
                })
                .collect::<priorart::Result<_>>()
                .stage(Stage::Featurize)?;
            let f = FeatureMatrix::new(m.dim(), rows).stage(Stage::Featurize)?;
            (f, FittedModel::Doc2vec(m))
        }
    };
    if let Some(dir) = &cache_dir {
        store_cached(dir, method, &features, &model)?;
    }
    Ok(Featurized {
        vocab,
        features,
        model,
    })
}

/// Files written into one output directory. Unless committed, everything
/// registered is deleted again when the set is dropped.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| io_error(dir.display().to_string(), e))
            .stage(Stage::Write)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn write(&mut self, name: &str, content: &str) -> CliResult<()> {
        let p = self.path(name);
        std::fs::write(&p, content)
            .map_err(|e| io_error(p.display().to_string(), e))
            .stage(Stage::Write)
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

pub fn write_feature_artifacts(
    out: &mut Outputs,
    method: FeatureMethod,
    f: &Featurized,
) -> CliResult<()> {
    f.vocab.save(&out.path(VOCAB_FILE)).stage(Stage::Write)?;
    f.features
        .save_binary(&out.path(FEATURES_FILE))
        .stage(Stage::Write)?;
    if let Some(name) = method.model_file() {
        f.model.save(&out.path(name)).stage(Stage::Write)?;
    }
    Ok(())
}

pub fn load_store(config: &RunConfig) -> CliResult<CorpusStore> {
    CorpusStore::load(&config.corpus_path).stage(Stage::Load)
}

/// Featurize the whole corpus and write vocabulary, features and model.
pub fn cmd_featurize(config: &RunConfig) -> CliResult<Featurized> {
    config.validate()?;
    let store = load_store(config)?;
    let f = featurize(config, &store, &HashSet::new())?;
    let mut out = Outputs::new(&config.output_dir)?;
    write_feature_artifacts(&mut out, config.feature_method, &f)?;
    out.commit();
    Ok(f)
}

/// Load the pair file named by the configuration, checked against `store`.
pub fn load_config_pairs(config: &RunConfig, store: &CorpusStore) -> CliResult<PairDataset> {
    let path = config
        .pairs_path
        .as_deref()
        .ok_or_else(|| CliError::Config("no pairs_path given".into()))?;
    load_pairs(path, Some(store), config.relevance_threshold).stage(Stage::Pairs)
}

/// Run the full chain for the configured method on `pairs` and write
/// report, scores, ROC points and histograms next to the feature artifacts.
pub fn cmd_pipeline(config: &RunConfig, pairs: &PairDataset) -> CliResult<EvalReport> {
    config.validate()?;
    let store = load_store(config)?;
    run_pipeline(config, &store, pairs)
}

pub fn run_pipeline(
    config: &RunConfig,
    store: &CorpusStore,
    pairs: &PairDataset,
) -> CliResult<EvalReport> {
    pairs.check_ids(store).stage(Stage::Pairs)?;
    if pairs.threshold != config.relevance_threshold {
        return Err(CliError::Config(format!(
            "pair threshold {} differs from relevance_threshold {}",
            pairs.threshold, config.relevance_threshold
        )));
    }
    let exclude: HashSet<String> = match config.feature_method {
        FeatureMethod::Doc2vec => pairs.target_ids().into_iter().map(str::to_owned).collect(),
        _ => HashSet::new(),
    };
    let mut out = Outputs::new(&config.output_dir)?;
    let f = featurize(config, store, &exclude)?;
    write_feature_artifacts(&mut out, config.feature_method, &f)?;

    let scored = score_pairs(pairs, &f.features, &config.measure).stage(Stage::Score)?;
    let report = EvalReport::evaluate(pairs, &scored, config.measure).stage(Stage::Evaluate)?;

    let mut csv = Vec::new();
    write_scored_csv(&mut csv, &scored).stage(Stage::Write)?;
    out.write(SCORED_FILE, &String::from_utf8(csv).expect("csv is utf-8"))?;
    out.write(REPORT_FILE, &report.to_json())?;
    out.write(ROC_FILE, &roc_to_csv(&report.roc_points))?;
    let labels: Vec<String> = scored.iter().map(|s| s.pair.label_text()).collect();
    let hist = score_histograms(
        labels
            .iter()
            .map(String::as_str)
            .zip(scored.iter().map(|s| s.score)),
        config.histogram_bins,
    )
    .stage(Stage::Evaluate)?;
    out.write(HISTOGRAM_FILE, &hist.to_csv())?;
    out.commit();
    Ok(report)
}
