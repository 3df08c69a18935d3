use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use paracode_bench::{corpus, texts};
use paracode_core::classifiers::fit;
use paracode_core::embedding::hashing_embed;
use paracode_core::ensemble::{classify_corpus, shortlist_from, ShortlistOptions};
use paracode_core::service::{cmd_train, training_set, PipelineConfig};
use paracode_core::{Dimension, HyperParams, LearnerKind, Role};

fn embedding(c: &mut Criterion) {
    let paragraphs = texts(200, 80, 1);
    let mut group = c.benchmark_group("embed");
    group.throughput(Throughput::Elements(paragraphs.len() as u64));
    for n_features in [384, 1024] {
        group.bench_with_input(BenchmarkId::new("hashing", n_features), &n_features, |b, &n| {
            b.iter(|| {
                for t in &paragraphs {
                    black_box(hashing_embed(t, n, 42));
                }
            })
        });
    }
    group.finish();
}

fn fitting(c: &mut Criterion) {
    let (corpus, vectors) = corpus(300, 0, 128, 2);
    let data = training_set(&corpus, &vectors, Dimension::Pc).unwrap();
    let hyper = HyperParams::default();
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for kind in LearnerKind::ALL {
        group.bench_function(kind.as_str(), |b| b.iter(|| fit(kind, black_box(&data), &hyper, 0).unwrap()));
    }
    group.finish();
}

fn ensemble(c: &mut Criterion) {
    let (corpus, vectors) = corpus(300, 1000, 128, 3);
    let config = PipelineConfig::default();
    let bundle = cmd_train(&config, &corpus, &vectors, vectors.fingerprint()).unwrap().bundle;
    let ids: Vec<&str> = corpus.partition().get(Role::Test).iter().map(|p| p.para_id.as_str()).collect();
    let classified = classify_corpus(&ids, &vectors, &bundle, config.threshold).unwrap();

    let mut group = c.benchmark_group("ensemble");
    group.throughput(Throughput::Elements(ids.len() as u64));
    group.sample_size(20);
    group.bench_function("classify", |b| {
        b.iter(|| classify_corpus(black_box(&ids), &vectors, &bundle, config.threshold).unwrap())
    });
    group.bench_function("shortlist", |b| {
        b.iter(|| shortlist_from(black_box(&classified), ShortlistOptions { include_near_miss: true }).unwrap())
    });
    group.finish();
}

criterion_group!(benches, embedding, fitting, ensemble);
criterion_main!(benches);
