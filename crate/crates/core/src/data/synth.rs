use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use super::{minmax_scale, Dataset};
use crate::error::{Error, Result};
use crate::seed;

/// Isotropic unit-variance Gaussian clusters around `classes` random centers
/// whose pairwise distances are at least `separation`. Classes are balanced up
/// to remainder and features are min-max scaled to [0, 1].
pub fn make_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    const OP: &str = "data::make_blobs";
    if classes == 0 || n < classes {
        return Err(Error::invalid_spec(OP, format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    if dim == 0 {
        return Err(Error::invalid_spec(OP, "dimension must be at least 1"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid_spec(OP, "separation must be finite and non-negative"));
    }
    let mut rng = seed::rng(seed);
    let centers = place_centers(classes, dim, separation, &mut rng);

    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Array2::zeros((n, dim));
    for (i, &y) in labels.iter().enumerate() {
        for j in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            features[[i, j]] = centers[y][j] + z;
        }
    }
    minmax_scale(&mut features);
    Dataset::new(
        features,
        Some(labels),
        classes,
        format!("blobs(n={n},d={dim},k={classes},sep={separation},seed={seed})"),
    )
}

fn place_centers(classes: usize, dim: usize, separation: f64, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut side = separation.max(1.0) * 2.0 * (classes as f64).powf(1.0 / dim as f64);
    loop {
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
        let mut tries = 0;
        while centers.len() < classes && tries < 2000 {
            tries += 1;
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..side)).collect();
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= separation
            });
            if far {
                centers.push(c);
            }
        }
        if centers.len() == classes {
            return centers;
        }
        side *= 1.5;
    }
}
