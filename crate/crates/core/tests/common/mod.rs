#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use umps::model::TrainConfig;

/// Settings of the desk-scale experiments on the default synthetic cohort.
pub fn desk_config(n_experts: usize) -> TrainConfig {
    TrainConfig {
        d_model: 16,
        heads: 2,
        ffn_hidden: 32,
        n_experts,
        lr: 1e-3,
        accumulation_steps: 32,
        epochs: 20,
        folds: 5,
        seed: 7,
        ..TrainConfig::default()
    }
}
