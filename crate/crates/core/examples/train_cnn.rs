//! Trains the small CNN with ULU(0.3,0.8) on synthetic blobs (or MNIST if
//! ULU_DATA_DIR is set) and prints the curves.
//!
//!     cargo run --release --example train_cnn -- [epochs]

use ulu_kit::activations::ActivationSpec;
use ulu_kit::data;
use ulu_kit::harness::{train, TrainConfig};
use ulu_kit::models::{Arch, ModelConfig};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let (tr, te) = match std::env::var_os("ULU_DATA_DIR") {
        Some(dir) if data::has_mnist(&dir) => data::load_mnist_subset(&dir, 2000, 1000, 0)?,
        _ => data::synthetic_subset(2000, 1000, 0)?,
    };
    let model = ModelConfig::new(Arch::SmallCnn, ActivationSpec::ulu(0.3, 0.8)?);
    let cfg = TrainConfig { epochs, ..TrainConfig::new(model) };
    let (rec, store) = train(&cfg, &tr, &te)?;
    println!("{} on {}: {} weights", cfg.model.arch, tr.name, store.tensor_param_count());
    print!("{}", rec.curves_csv());
    println!("{:.1} s", rec.wall_seconds);
    Ok(())
}
