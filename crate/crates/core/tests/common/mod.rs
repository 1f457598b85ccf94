#![allow(dead_code)]

use std::path::PathBuf;

use genhop::dataset::read_idx_images;
use genhop::ImageTensor;

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

pub fn mnist_path() -> PathBuf {
    testdata("mnist5k-images-idx3-ubyte.gz")
}

/// The first `n` images of the bundled 5000-image MNIST subset.
pub fn mnist(n: usize) -> Vec<ImageTensor> {
    read_idx_images(&mnist_path()).expect("bundled MNIST subset").to_tensors(Some(n))
}

/// Images `start..end` of the bundled subset.
pub fn mnist_range(start: usize, end: usize) -> Vec<ImageTensor> {
    mnist(end).split_off(start)
}
