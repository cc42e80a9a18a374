use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use priorart::bow::{build_features, BowConfig};
use priorart::corpus::{SectionSelector, SynthConfig};
use priorart::embed::{train_word2vec, Word2VecParams};
use priorart::eval::auc;
use priorart::reduce::lsa_fit;
use priorart::simfuncs::MeasureSpec;
use priorart::textproc::{tokenize, TokenizedDoc, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn corpus(docs_per_topic: usize) -> (Vec<TokenizedDoc>, Vocabulary) {
    let synth = SynthConfig {
        docs_per_topic,
        ..Default::default()
    }
    .generate()
    .unwrap();
    let docs: Vec<TokenizedDoc> = synth
        .store
        .iter()
        .map(|d| tokenize(d, SectionSelector::FullText))
        .collect();
    let vocab = Vocabulary::build(&docs, 1).unwrap();
    (docs, vocab)
}

fn bench_tfidf(c: &mut Criterion) {
    let (docs, vocab) = corpus(50);
    c.bench_function("tfidf_build_400_docs", |b| {
        b.iter(|| build_features(black_box(&docs), &vocab, BowConfig::default()).unwrap())
    });
}

fn bench_cosine(c: &mut Criterion) {
    let (docs, vocab) = corpus(50);
    let x = build_features(&docs, &vocab, BowConfig::default()).unwrap();
    let m = MeasureSpec::default();
    c.bench_function("cosine_all_pairs_row0", |b| {
        b.iter(|| {
            x.rows()
                .iter()
                .map(|r| m.similarity(x.row(0), r).unwrap())
                .sum::<f64>()
        })
    });
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let scores: Vec<f64> = (0..100_000).map(|_| rng.random()).collect();
    let labels: Vec<bool> = (0..100_000).map(|_| rng.random_bool(0.1)).collect();
    c.bench_function("auc_100k", |b| {
        b.iter(|| auc(black_box(&scores), &labels).unwrap())
    });
}

fn bench_lsa(c: &mut Criterion) {
    let (docs, vocab) = corpus(60);
    let x = build_features(&docs, &vocab, BowConfig::default()).unwrap();
    let mut group = c.benchmark_group("lsa");
    group.sample_size(10);
    group.bench_function("randomized_480_docs_l50", |b| {
        b.iter(|| lsa_fit(&x, 50, 0).unwrap())
    });
    group.finish();
}

fn bench_sgns(c: &mut Criterion) {
    let (docs, _) = corpus(20);
    let params = Word2VecParams {
        dim: 50,
        epochs: 1,
        min_count: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("sgns");
    group.sample_size(10);
    group.bench_function("one_epoch_160_docs", |b| {
        b.iter(|| train_word2vec(&docs, &params, 0).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_tfidf,
    bench_cosine,
    bench_auc,
    bench_lsa,
    bench_sgns
);
criterion_main!(benches);
