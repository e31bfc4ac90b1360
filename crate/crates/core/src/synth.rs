//! Synthetic fixtures: a small intent corpus with disjoint per-intent
//! vocabularies, and Gaussian blobs.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::{EmbeddingMatrix, Utterance};

/// Word pools for one synthetic intent. Utterances read
/// `<verb> <object> <extra>...` with one to three extras.
#[derive(Debug, Clone, Copy)]
pub struct IntentSpec {
    pub name: &'static str,
    pub verb: &'static str,
    pub object: &'static str,
    pub extras: &'static [&'static str],
}

pub const SYNTHETIC_INTENTS: [IntentSpec; 6] = [
    IntentSpec {
        name: "book_flight",
        verb: "book",
        object: "flight",
        extras: &["boston", "denver", "nonstop", "economy", "roundtrip", "aisle", "airfare", "layover"],
    },
    IntentSpec {
        name: "cancel_order",
        verb: "cancel",
        object: "order",
        extras: &["accidental", "duplicate", "cart", "merchant", "basket", "sneakers", "checkout", "refundable"],
    },
    IntentSpec {
        name: "check_balance",
        verb: "check",
        object: "balance",
        extras: &["savings", "monthly", "available", "funds", "ledger", "overdraft", "statement", "current"],
    },
    IntentSpec {
        name: "reset_password",
        verb: "reset",
        object: "password",
        extras: &["expired", "temporary", "secure", "portal", "credentials", "username", "passcode", "lockout"],
    },
    IntentSpec {
        name: "track_package",
        verb: "track",
        object: "package",
        extras: &["courier", "overnight", "warehouse", "doorstep", "fedex", "carrier", "parcel", "shipment"],
    },
    IntentSpec {
        name: "pay_bill",
        verb: "pay",
        object: "bill",
        extras: &["electricity", "utility", "overdue", "quarterly", "water", "landlord", "invoice", "gas"],
    },
];

/// `per_intent` labeled utterances for each intent, interleaved by intent,
/// with ids `s0000`, `s0001`, ...
pub fn synthetic_corpus(per_intent: usize, seed: u64) -> Vec<Utterance> {
    synthetic_corpus_from(&SYNTHETIC_INTENTS, per_intent, seed)
}

pub fn synthetic_corpus_from(intents: &[IntentSpec], per_intent: usize, seed: u64) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(intents.len() * per_intent);
    for _ in 0..per_intent {
        for spec in intents {
            let mut words = vec![spec.verb, spec.object];
            let n_extra = rng.random_range(1..=3);
            words.extend(spec.extras.choose_multiple(&mut rng, n_extra).copied());
            let id = format!("s{:04}", out.len());
            out.push(Utterance::labeled(id, words.join(" "), spec.name));
        }
    }
    out
}

/// Write `text,label` CSV rows.
pub fn write_dataset_csv<W: Write>(rows: &[Utterance], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["text", "label"])?;
    for u in rows {
        wr.write_record([u.text.as_str(), u.gold_label.as_deref().unwrap_or("")])?;
    }
    wr.flush()?;
    Ok(())
}

/// Isotropic Gaussian blobs: `per_blob` points around each center with
/// standard deviation `sigma`. Ids are `b<blob>_<i>`, labels `c<blob>`.
pub fn gaussian_blobs(
    centers: &[Vec<f64>],
    sigma: f64,
    per_blob: usize,
    seed: u64,
) -> (EmbeddingMatrix, BTreeMap<String, String>) {
    let dim = centers.first().map_or(0, Vec::len);
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = EmbeddingMatrix::new(dim);
    let mut labels = BTreeMap::new();
    for (b, c) in centers.iter().enumerate() {
        for i in 0..per_blob {
            let id = format!("b{b}_{i}");
            let row: Vec<f64> = c.iter().map(|x| x + normal.sample(&mut rng)).collect();
            m.insert(id.clone(), row).expect("finite row of constant dim");
            labels.insert(id, format!("c{b}"));
        }
    }
    (m, labels)
}

/// Vertices of an equilateral triangle with the given side length in the plane.
pub fn triangle_centers(side: f64) -> Vec<Vec<f64>> {
    vec![
        vec![0.0, 0.0],
        vec![side, 0.0],
        vec![side / 2.0, side * 3f64.sqrt() / 2.0],
    ]
}
