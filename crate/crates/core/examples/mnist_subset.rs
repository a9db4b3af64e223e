//! Loads MNIST from a directory of IDX files, draws the stratified 2k/1k
//! subset and prints class counts.
//!
//!     cargo run --example mnist_subset -- /path/to/mnist

use ulu_kit::data::{has_mnist, load_mnist_subset};

fn main() -> anyhow::Result<()> {
    let Some(dir) = std::env::args().nth(1).or_else(|| std::env::var("ULU_DATA_DIR").ok()) else {
        anyhow::bail!("usage: mnist_subset <dir with train-images-idx3-ubyte etc.>");
    };
    if !has_mnist(&dir) {
        anyhow::bail!("{dir} does not hold the four MNIST IDX files");
    }
    let (train, test) = load_mnist_subset(&dir, 2000, 1000, 0)?;
    for ds in [&train, &test] {
        println!("{}: {} images {:?}, per class {:?}", ds.name, ds.len(), ds.image_shape(), ds.class_counts());
    }
    Ok(())
}
