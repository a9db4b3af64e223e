//! Mean and spread of test accuracy over repeated seeds for a few activations.
//!
//!     cargo run --release --example compare_activations

use ulu_kit::activations::ActivationSpec;
use ulu_kit::analysis::{compare_csv, compare_table};
use ulu_kit::data::synthetic_subset;
use ulu_kit::harness::TrainConfig;
use ulu_kit::models::{Arch, ModelConfig};

fn main() -> anyhow::Result<()> {
    let (tr, te) = synthetic_subset(1000, 500, 0)?;
    let acts: Vec<ActivationSpec> = ["ulu(0.3,0.8)", "relu", "gelu", "mish", "silu"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::new(ModelConfig::new(Arch::Mlp, acts[0].clone()))
    };
    let rows = compare_table(&acts, &cfg, 3, 1, &tr, &te)?;
    print!("{}", compare_csv(&rows));
    Ok(())
}
