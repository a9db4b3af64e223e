//! Output surface of one random 6-layer network under ReLU and ULU, written
//! as CSV + PGM, with the roughness of each.
//!
//!     cargo run --release --example output_landscape -- [out_dir]

use std::path::PathBuf;

use ulu_kit::activations::{ActivationKind, ActivationSpec};
use ulu_kit::analysis::{landscape_with, smoothness_score, write_landscape, LandscapeNet, LandscapeSpec};

fn main() -> anyhow::Result<()> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "out/landscape".into()).into();
    let net = LandscapeNet::random(6, 32, 0);
    for (name, act) in [
        ("relu", ActivationSpec::plain(ActivationKind::Relu)),
        ("ulu", ActivationSpec::ulu(0.3, 0.8)?),
        ("gelu", ActivationSpec::plain(ActivationKind::Gelu)),
    ] {
        let m = landscape_with(&LandscapeSpec::new(act), &net)?;
        write_landscape(&out, name, &m)?;
        println!("{name:<5} smoothness {:.4e}", smoothness_score(&m)?);
    }
    println!("wrote {}", out.display());
    Ok(())
}
