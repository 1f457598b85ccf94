use criterion::{criterion_group, criterion_main, Criterion};
use genhop::lle::LleCodebook;
use genhop::saab::{fit_cascade, saab_forward, HopConfig};
use genhop::{ImageTensor, SeedModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn images(n: usize, rng: &mut ChaCha8Rng) -> Vec<ImageTensor> {
    (0..n)
        .map(|_| {
            let (cy, cx): (f64, f64) = (rng.random_range(8.0..20.0), rng.random_range(8.0..20.0));
            ImageTensor::from_fn(28, 28, 1, |y, x, _| {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                (-d2 / 18.0).exp()
            })
        })
        .collect()
}

fn saab(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let imgs = images(256, &mut rng);
    let model = fit_cascade(&imgs, HopConfig::new(2, 2, 1), HopConfig::new(2, 4, 3)).unwrap();
    c.bench_function("saab_forward_hop1_28x28", |b| {
        b.iter(|| saab_forward(black_box(&imgs[0]), model.hop1(), model.hop1_config().block).unwrap())
    });
    c.bench_function("cascade_fit_256_images", |b| {
        b.iter(|| fit_cascade(black_box(&imgs), HopConfig::new(2, 2, 1), HopConfig::new(2, 4, 3)).unwrap())
    });
}

fn lle(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lf = DMatrix::from_fn(2000, 16, |_, _| rng.random::<f64>());
    let hf = DMatrix::from_fn(2000, 12, |_, _| rng.random::<f64>());
    let book = LleCodebook::new(&lf, &hf, 3).unwrap();
    let query: Vec<f64> = (0..16).map(|_| rng.random()).collect();
    c.bench_function("lle_recover_2000x16", |b| b.iter(|| book.recover(black_box(&query))));
}

fn seed(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let samples: Vec<ImageTensor> = (0..600)
        .map(|_| {
            let a: f64 = rng.random();
            ImageTensor::from_fn(7, 7, 4, |y, x, ch| a * (y + x + ch) as f64 + 0.1 * rng.random::<f64>())
        })
        .collect();
    let model = SeedModel::fit(&samples, 0.01, 4, 0).unwrap().model;
    let mut draw = ChaCha8Rng::seed_from_u64(4);
    c.bench_function("seed_sample_7x7x4", |b| b.iter(|| model.sample(&mut draw)));
}

criterion_group!(benches, saab, lle, seed);
criterion_main!(benches);
