//! Learned AULU coefficients and LIB for the CNN and the attention model.
//!
//!     cargo run --release --example lib_report -- [epochs]

use ulu_kit::activations::{ActivationKind, ActivationSpec};
use ulu_kit::analysis::lib_report;
use ulu_kit::data::synthetic_subset;
use ulu_kit::harness::TrainConfig;
use ulu_kit::models::{Arch, ModelConfig};

fn main() -> anyhow::Result<()> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(3);
    let (tr, te) = synthetic_subset(1000, 500, 0)?;
    let model = ModelConfig::new(Arch::SmallCnn, ActivationSpec::plain(ActivationKind::Aulu));
    let report = lib_report(&TrainConfig { epochs, ..TrainConfig::new(model) }, &tr, &te)?;
    for m in &report.models {
        println!("{} (test acc {:.3})", m.model, m.final_test_acc);
        for s in &m.sites {
            println!("  site {}: beta1^2 {:.4} beta2^2 {:.4} LIB {:.4}", s.site, s.beta1_sq, s.beta2_sq, s.lib);
        }
    }
    println!("{}", report.observation);
    Ok(())
}
