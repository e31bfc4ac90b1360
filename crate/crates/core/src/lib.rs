//! Open intent recognition: detect utterances that fall outside a set of
//! known intents, cluster them into new intents, and name the clusters.

pub mod bench;
pub mod detection;
pub mod discovery;
pub mod embedding;
pub mod hungarian;
pub mod labeling;
pub mod linalg;
pub mod normalization;
pub mod pipeline;
pub mod synth;
