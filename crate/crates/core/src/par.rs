//! Order-preserving parallel map. Without the `parallel` feature (e.g. on
//! wasm) everything runs inline.

/// `(0..n).map(f)` evaluated on up to `workers` threads; output is in index
/// order regardless of scheduling.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && n > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn keeps_order() {
        let a = super::map_indexed(100, 1, |i| i * i);
        let b = super::map_indexed(100, 8, |i| i * i);
        assert_eq!(a, b);
    }
}
