//! Fixtures shared by the Criterion benchmarks under `benches/`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Target and background word counts over a Zipf-like vocabulary, with a
/// handful of words over-represented in the target.
pub fn word_counts(seed: u64, vocabulary: usize) -> (BTreeMap<String, u64>, BTreeMap<String, u64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut target = BTreeMap::new();
    let mut background = BTreeMap::new();
    for i in 0..vocabulary {
        let base = 20_000.0 / (i + 1) as f64;
        let boost = if i % 50 == 7 { 4.0 } else { 1.0 };
        let word = format!("word{i:05}");
        target.insert(word.clone(), (base * boost * rng.random_range(0.8..1.2)) as u64 + 10);
        background.insert(word, (5.0 * base * rng.random_range(0.8..1.2)) as u64);
    }
    (target, background)
}

/// Treated rows shifted by `shift` standard deviations from the controls,
/// four matching features on different scales.
pub fn matching_pool(seed: u64, treated: usize, control: usize, shift: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut row = |s: f64| {
        let mut z = || (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0 + s;
        vec![400.0 * z() + 900.0, (1.5 * z()).abs().round(), 0.3 * z(), (25.0 * z() + 40.0).abs().round()]
    };
    let t = (0..treated).map(|_| row(shift)).collect();
    let c = (0..control).map(|_| row(0.0)).collect();
    (t, c)
}

/// Reply-like sentences mixing lexicon words, boosters, negations and caps.
pub fn reply_texts(seed: u64, n: usize) -> Vec<String> {
    const WORDS: &[&str] = &[
        "thanks", "welcome", "great", "idiot", "not", "very", "GOOD", "terrible", "you", "post", "here", "really",
        "stupid", "love", "this", "community", "hate", "wrong", "nice", "!",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..30);
            (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
        })
        .collect()
}
