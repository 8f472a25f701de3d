//! Deterministic fixtures for the criterion benches.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use latlm_core::data::{build_vocab, generate_confusion_lattice, ConfusionModel, Vocabulary};
use latlm_core::model::{init_lm_params, LmConfig};
use latlm_core::numerics::ParamSet;
use latlm_core::Lattice;

pub struct BenchSetup {
    /// Task-shaped confusion lattice (no sentinels).
    pub lattice: Lattice,
    pub vocab: Vocabulary,
    pub config: LmConfig,
    pub params: ParamSet,
}

/// A confusion lattice over a `tokens`-word sentence plus a small LM sized
/// to its vocabulary. Seeded, so every bench run measures the same work.
pub fn setup(tokens: usize) -> BenchSetup {
    let pool: Vec<String> = (0..40).map(|i| format!("w{i:02}")).collect();
    let sentence: Vec<String> = (0..tokens).map(|i| pool[i % pool.len()].clone()).collect();
    let model = ConfusionModel::new(pool.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let lattice =
        generate_confusion_lattice("bench", &sentence, &model, &mut rng).expect("bench lattice");
    let vocab = build_vocab(&[pool.join(" ")], &[lattice.clone()], 1).expect("bench vocab");
    let config = LmConfig {
        vocab_size: vocab.len(),
        embed_dim: 16,
        hidden_dim: 16,
        layers: 1,
        decoder_bias: true,
    };
    let params = init_lm_params(&config, &mut rng).expect("bench params");
    BenchSetup { lattice, vocab, config, params }
}
