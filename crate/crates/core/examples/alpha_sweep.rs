//! Test accuracy of an MLP over a grid of ULU coefficients.
//!
//!     cargo run --release --example alpha_sweep

use ulu_kit::activations::ActivationSpec;
use ulu_kit::analysis::{run_sweep, SweepSpec};
use ulu_kit::data::synthetic_subset;
use ulu_kit::harness::TrainConfig;
use ulu_kit::models::{Arch, ModelConfig};

fn main() -> anyhow::Result<()> {
    let (tr, te) = synthetic_subset(1000, 500, 0)?;
    let base = TrainConfig {
        epochs: 3,
        ..TrainConfig::new(ModelConfig::new(Arch::Mlp, ActivationSpec::ulu(1.0, 1.0)?))
    };
    let spec = SweepSpec {
        alpha_values: vec![0.1, 0.3, 0.8, 2.0],
        base,
        parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    print!("{}", run_sweep(&spec, &tr, &te)?.to_csv());
    Ok(())
}
