#![allow(dead_code)]

use std::fs;
use std::path::Path;

/// Minimal IDX writer, written against the file layout rather than the loader.
pub fn write_idx_images(path: &Path, n: u32, h: u32, w: u32, pixels: &[u8]) {
    let mut out = Vec::new();
    out.extend_from_slice(&[0, 0, 8, 3]);
    for d in [n, h, w] {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).unwrap();
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) {
    let mut out = vec![0, 0, 8, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).unwrap();
}

/// Four 28x28 images with distinct byte patterns, labels 3, 1, 4, 1.
pub fn fixture_bytes() -> (Vec<u8>, Vec<u8>) {
    let pixels = (0..4 * 28 * 28).map(|i| ((i * 37 + i / 784) % 256) as u8).collect();
    (pixels, vec![3, 1, 4, 1])
}
