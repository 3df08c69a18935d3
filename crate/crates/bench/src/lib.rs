//! Synthetic inputs shared by the benchmarks.

use paracode_core::corpus::{para_id, Corpus, LabelSet, Paragraph, Register, Role};
use paracode_core::embedding::{EmbeddingVector, Fingerprint, VectorCache};
use paracode_core::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "people", "elite", "corrupt", "ordinary", "citizens", "government", "tax", "school", "road", "budget",
    "reform", "voice", "nation", "honest", "families", "workers", "power", "parliament", "future", "jobs",
];

/// `n` paragraphs of `words` tokens each.
pub fn texts(n: usize, words: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            (0..words)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// A train/test corpus with vectors whose class means sit 4 units apart
/// along the first two axes.
pub fn corpus(n_train: usize, n_test: usize, dim: usize, seed: u64) -> (Corpus, VectorCache) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = VectorCache::new(Fingerprint::of("bench"), dim);
    let mut paragraphs = Vec::with_capacity(n_train + n_test);
    for (doc, role, n) in [("bench_train", Role::Train, n_train), ("bench_test", Role::Test, n_test)] {
        for index in 0..n {
            let (pc, ae) = (rng.random_bool(0.3), rng.random_bool(0.3));
            let mut x: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            x[0] += if pc { 2.0 } else { -2.0 };
            x[1] += if ae { 2.0 } else { -2.0 };
            let id = para_id(doc, index);
            cache.insert(&id, EmbeddingVector::new(x).expect("finite")).expect("dim matches");
            paragraphs.push(Paragraph {
                para_id: id,
                doc_id: doc.to_owned(),
                index,
                text: format!("paragraph {index}"),
                party: "B".to_owned(),
                year: 2020,
                register: Register::Manifesto,
                labels: LabelSet {
                    pc: Label::from_bool(pc),
                    ae: Label::from_bool(ae),
                },
                role: Some(role),
                provenance: None,
            });
        }
    }
    (Corpus::from_paragraphs(paragraphs).expect("valid corpus"), cache)
}
