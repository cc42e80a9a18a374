use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use priorart::bow::FeatureMatrix;
use priorart::corpus::{
    build_cited_random_pairs, load_pairs, CorpusStore, SectionSelector, SynthConfig,
};
use priorart::embed::{train_doc2vec, train_word2vec, Doc2VecParams, Word2VecParams};
use priorart::eval::{roc_to_csv, score_histograms, EvalReport, DEFAULT_HISTOGRAM_BINS};
use priorart::simfuncs::{read_scored_csv, score_pairs, write_scored_csv, MeasureSpec};
use priorart_cli::error::StageExt;
use priorart_cli::pipeline::{self, tokenize_store, Outputs};
use priorart_cli::{
    cmd_featurize, cmd_search, cmd_stats, CliError, CliResult, FeatureMethod, RunConfig, Stage,
};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "priorart",
    version,
    about = "Full-text document similarity for prior-art search"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSONL corpus and optionally write it back normalized.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print corpus statistics as JSON.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Generate a topic-clustered synthetic corpus.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Also write `doc_id,topic` ground truth here.
        #[arg(long)]
        topics_output: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        topics: usize,
        #[arg(long, default_value_t = 50)]
        docs_per_topic: usize,
        #[arg(long, default_value_t = 200)]
        vocab_per_topic: usize,
        #[arg(long, default_value_t = 300)]
        noise_vocab: usize,
        /// Exact copies of last-year documents to plant.
        #[arg(long, default_value_t = 0)]
        duplicates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build a cited/random pair dataset.
    Pairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Publication year of the target documents; defaults to the latest year.
        #[arg(long)]
        target_year: Option<i32>,
        #[arg(long, default_value_t = 1000)]
        n_random: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Featurize the corpus and store vocabulary, features and model.
    Featurize(ConfigArgs),
    /// Train word2vec on a corpus section.
    TrainW2v {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "full_text")]
        section: SectionSelector,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        params: W2vArgs,
    },
    /// Train doc2vec (PV-DM) on a corpus section.
    TrainD2v {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "full_text")]
        section: SectionSelector,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Leave out the target documents of this pair file.
        #[arg(long)]
        exclude_targets_of: Option<PathBuf>,
        #[command(flatten)]
        params: D2vArgs,
    },
    /// Score the pairs of a pair file with stored features.
    Score {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value = "coefficient:cosine")]
        measure: MeasureSpec,
        #[arg(long, default_value_t = 2)]
        relevance_threshold: u8,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compute AUC, AP, ROC points, correlations and histograms from scored pairs.
    Evaluate {
        #[arg(long)]
        scored: PathBuf,
        /// Measure recorded in the report.
        #[arg(long, default_value = "coefficient:cosine")]
        measure: MeasureSpec,
        #[arg(long, default_value_t = 2)]
        relevance_threshold: u8,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Rank featurized corpus documents by similarity to a query document.
    Search {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON file holding one document.
        #[arg(long)]
        query: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Minimum score of a returned document.
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_negative_numbers = true)]
        threshold: f64,
    },
    /// Featurize, score and evaluate in one run.
    Pipeline(ConfigArgs),
}

/// A run configuration file plus per-field overrides.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    section: Option<SectionSelector>,
    #[arg(long)]
    method: Option<FeatureMethod>,
    #[arg(long)]
    measure: Option<MeasureSpec>,
    #[arg(long)]
    reduce_l: Option<usize>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    relevance_threshold: Option<u8>,
    #[arg(long)]
    infer_steps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        set!(corpus => c.corpus_path);
        set!(section => c.section);
        set!(method => c.feature_method);
        set!(measure => c.measure);
        set!(reduce_l => c.reduce_l);
        set!(min_count => c.min_count);
        set!(relevance_threshold => c.relevance_threshold);
        set!(seed => c.seed);
        set!(output_dir => c.output_dir);
        if let Some(w) = self.workers {
            c.word2vec.workers = w;
            c.doc2vec.workers = w;
        }
        c.pairs_path = self.pairs.clone().or(c.pairs_path);
        c.cache_dir = self.cache_dir.clone().or(c.cache_dir);
        c.infer_steps = self.infer_steps.or(c.infer_steps);
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct W2vArgs {
    /// Embedding dimension [default: 200]
    #[arg(long)]
    dim: Option<usize>,
    /// Context window [default: 5]
    #[arg(long)]
    window: Option<usize>,
    /// Noise words per observation [default: 13]
    #[arg(long)]
    negatives: Option<usize>,
    /// Minimum document frequency [default: 5]
    #[arg(long)]
    min_count: Option<usize>,
    /// Passes over the corpus [default: 5]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 0.025]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Final learning rate [default: 0.0001]
    #[arg(long)]
    min_learning_rate: Option<f64>,
    /// Frequent-word subsampling threshold (off unless given)
    #[arg(long)]
    subsample: Option<f64>,
    /// Shards trained in parallel per epoch [default: 1]
    #[arg(long)]
    workers: Option<usize>,
}

impl W2vArgs {
    fn params(&self) -> Word2VecParams {
        let d = Word2VecParams::default();
        Word2VecParams {
            dim: self.dim.unwrap_or(d.dim),
            window: self.window.unwrap_or(d.window),
            negatives: self.negatives.unwrap_or(d.negatives),
            min_count: self.min_count.unwrap_or(d.min_count),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            min_learning_rate: self.min_learning_rate.unwrap_or(d.min_learning_rate),
            subsample: self.subsample.or(d.subsample),
            workers: self.workers.unwrap_or(d.workers),
        }
    }
}

#[derive(Args)]
struct D2vArgs {
    /// Embedding dimension [default: 50]
    #[arg(long)]
    dim: Option<usize>,
    /// Preceding words concatenated to the document vector [default: 8]
    #[arg(long)]
    window: Option<usize>,
    /// Noise words per observation [default: 13]
    #[arg(long)]
    negatives: Option<usize>,
    /// Minimum document frequency [default: 5]
    #[arg(long)]
    min_count: Option<usize>,
    /// Passes over the corpus [default: 18]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 0.025]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Final learning rate [default: 0.0001]
    #[arg(long)]
    min_learning_rate: Option<f64>,
    /// Shards trained in parallel per epoch [default: 1]
    #[arg(long)]
    workers: Option<usize>,
}

impl D2vArgs {
    fn params(&self) -> Doc2VecParams {
        let d = Doc2VecParams::default();
        Doc2VecParams {
            dim: self.dim.unwrap_or(d.dim),
            window: self.window.unwrap_or(d.window),
            negatives: self.negatives.unwrap_or(d.negatives),
            min_count: self.min_count.unwrap_or(d.min_count),
            epochs: self.epochs.unwrap_or(d.epochs),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            min_learning_rate: self.min_learning_rate.unwrap_or(d.min_learning_rate),
            workers: self.workers.unwrap_or(d.workers),
        }
    }
}

fn print_json(value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    // A closed stdout (e.g. piped into `head`) is not an error.
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_corpus(path: &Path) -> CliResult<CorpusStore> {
    CorpusStore::load(path).stage(Stage::Load)
}

fn section_docs(
    corpus: &Path,
    section: SectionSelector,
) -> CliResult<Vec<priorart::textproc::TokenizedDoc>> {
    let store = load_corpus(corpus)?;
    let config = RunConfig {
        section,
        ..Default::default()
    };
    Ok(tokenize_store(&store, &config))
}

fn write_report(
    dir: &Path,
    report: &EvalReport,
    labels: &[(String, f64)],
    bins: usize,
) -> CliResult<()> {
    let mut out = Outputs::new(dir)?;
    out.write(pipeline::REPORT_FILE, &report.to_json())?;
    out.write(pipeline::ROC_FILE, &roc_to_csv(&report.roc_points))?;
    let hist = score_histograms(labels.iter().map(|(l, s)| (l.as_str(), *s)), bins)
        .stage(Stage::Evaluate)?;
    out.write(pipeline::HISTOGRAM_FILE, &hist.to_csv())?;
    out.commit();
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { input, output } => {
            let store = load_corpus(&input)?;
            if let Some(out) = output {
                store.save(&out).stage(Stage::Write)?;
            }
            print_json(&json!({ "documents": store.len() }));
        }
        Command::Stats { corpus } => print_json(&cmd_stats(&load_corpus(&corpus)?)),
        Command::Synth {
            output,
            topics_output,
            topics,
            docs_per_topic,
            vocab_per_topic,
            noise_vocab,
            duplicates,
            seed,
        } => {
            let synth = SynthConfig {
                n_topics: topics,
                docs_per_topic,
                vocab_per_topic,
                noise_vocab,
                seed,
                duplicates,
                ..Default::default()
            }
            .generate()
            .stage(Stage::Config)?;
            synth.store.save(&output).stage(Stage::Write)?;
            if let Some(path) = topics_output {
                let mut text = String::from("doc_id,topic\n");
                for (id, t) in &synth.topics {
                    text.push_str(&format!("{id},{t}\n"));
                }
                std::fs::write(&path, text)
                    .map_err(|e| priorart::Error::Io {
                        context: path.display().to_string(),
                        source: e,
                    })
                    .stage(Stage::Write)?;
            }
            print_json(&json!({ "documents": synth.store.len(), "last_year": synth.last_year }));
        }
        Command::Pairs {
            corpus,
            output,
            target_year,
            n_random,
            seed,
        } => {
            let store = load_corpus(&corpus)?;
            let year = match target_year {
                Some(y) => y,
                None => store
                    .iter()
                    .map(|d| d.pub_year)
                    .max()
                    .ok_or_else(|| CliError::Usage("corpus is empty".into()))?,
            };
            let ds = build_cited_random_pairs(&store, year, n_random, seed).stage(Stage::Pairs)?;
            ds.save(&output).stage(Stage::Write)?;
            print_json(&json!({ "target_year": year, "pairs": ds.len(), "counts": ds.counts }));
        }
        Command::Featurize(args) => {
            let config = args.resolve()?;
            let f = cmd_featurize(&config)?;
            print_json(&json!({
                "documents": f.features.n_rows(),
                "dim": f.features.dim(),
                "vocabulary": f.vocab.len(),
                "output_dir": config.output_dir,
            }));
        }
        Command::TrainW2v {
            corpus,
            output,
            section,
            seed,
            params,
        } => {
            let docs = section_docs(&corpus, section)?;
            let model = train_word2vec(&docs, &params.params(), seed).stage(Stage::Train)?;
            model.save(&output).stage(Stage::Write)?;
            print_json(&json!({ "vocabulary": model.vocab.len(), "dim": model.dim() }));
        }
        Command::TrainD2v {
            corpus,
            output,
            section,
            seed,
            exclude_targets_of,
            params,
        } => {
            let docs = section_docs(&corpus, section)?;
            let exclude: HashSet<String> = match exclude_targets_of {
                Some(p) => load_pairs(&p, None, 2)
                    .stage(Stage::Pairs)?
                    .target_ids()
                    .into_iter()
                    .map(str::to_owned)
                    .collect(),
                None => HashSet::new(),
            };
            let model =
                train_doc2vec(&docs, &params.params(), &exclude, seed).stage(Stage::Train)?;
            model.save(&output).stage(Stage::Write)?;
            print_json(
                &json!({ "documents": model.n_docs(), "vocabulary": model.vocab.len(), "dim": model.dim() }),
            );
        }
        Command::Score {
            features,
            pairs,
            measure,
            relevance_threshold,
            output,
        } => {
            let features = FeatureMatrix::load_binary(&features).stage(Stage::Load)?;
            let ds = load_pairs(&pairs, None, relevance_threshold).stage(Stage::Pairs)?;
            let scored = score_pairs(&ds, &features, &measure).stage(Stage::Score)?;
            let file = std::fs::File::create(&output)
                .map_err(|e| priorart::Error::Io {
                    context: output.display().to_string(),
                    source: e,
                })
                .stage(Stage::Write)?;
            write_scored_csv(std::io::BufWriter::new(file), &scored).stage(Stage::Write)?;
            print_json(&json!({ "pairs": scored.len(), "measure": measure }));
        }
        Command::Evaluate {
            scored,
            measure,
            relevance_threshold,
            bins,
            output_dir,
        } => {
            let (ds, scored) = read_scored_csv(&scored, relevance_threshold).stage(Stage::Load)?;
            let report = EvalReport::evaluate(&ds, &scored, measure).stage(Stage::Evaluate)?;
            let labels: Vec<(String, f64)> = scored
                .iter()
                .map(|s| (s.pair.label_text(), s.score))
                .collect();
            write_report(&output_dir, &report, &labels, bins)?;
            print_json(&report);
        }
        Command::Search {
            config,
            query,
            k,
            threshold,
        } => {
            let config = config.resolve()?;
            print_json(&cmd_search(&config, &query, k, threshold)?);
        }
        Command::Pipeline(args) => {
            let config = args.resolve()?;
            let store = pipeline::load_store(&config)?;
            let pairs = pipeline::load_config_pairs(&config, &store)?;
            print_json(&pipeline::run_pipeline(&config, &store, &pairs)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
