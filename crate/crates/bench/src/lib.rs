//! Shared fixtures for the benchmarks.

use rsm_core::model::{BlockVariant, ModelConfig, PosEncoding};
use rsm_core::puzzles::generate_sudoku_set;
use rsm_core::trainer::Batch;
use rsm_core::{rng, Rsm};

/// The desk-scale Sudoku configuration with the given block variant.
pub fn sudoku_config(variant: BlockVariant) -> ModelConfig {
    ModelConfig {
        hidden: 64,
        blocks: 2,
        heads: 4,
        block_variant: variant,
        pos_encoding: match variant {
            BlockVariant::Attention => PosEncoding::Rope,
            BlockVariant::MlpT => PosEncoding::None,
        },
        h_cycles: 2,
        l_cycles: 4,
        ..ModelConfig::default()
    }
}

pub fn model(variant: BlockVariant) -> Rsm<f32> {
    Rsm::init(sudoku_config(variant), &mut rng::stream(1, 0)).expect("valid config")
}

pub fn sudoku_batch(size: usize) -> Batch {
    let data = generate_sudoku_set(5, size, 40, 0).expect("valid clue budget");
    Batch::from_examples(&data.examples)
}
