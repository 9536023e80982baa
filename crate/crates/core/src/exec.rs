//! Order-preserving map helpers.
//!
//! With the `parallel` feature (default) `map_vec` fans out over rayon;
//! without it the same call degrades to a plain sequential map. Both paths
//! return results in input order, so callers observe identical output either
//! way. `map_vec_seq` is always sequential and exists so benchmarks can
//! compare the two paths in one binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[cfg(feature = "parallel")]
pub fn map_vec<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Send + Sync,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_vec<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

pub fn map_vec_seq<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let par = map_vec(xs.clone(), |x| x * x);
        let seq = map_vec_seq(xs, |x| x * x);
        assert_eq!(par, seq);
    }
}
