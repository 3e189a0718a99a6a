//! Index-ordered parallel map.
//!
//! With the `parallel` feature and more than one worker, tasks run on a
//! dedicated rayon pool; otherwise they run sequentially. Results always
//! come back in index order, so output never depends on scheduling.

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
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(50, 1, |i| i * i);
        let par = map_indexed(50, 4, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
        assert!(map_indexed(0, 3, |i| i).is_empty());
    }
}
