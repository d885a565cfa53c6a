//! Data-parallel loop helper with a sequential fallback.
//!
//! Kernels split their output buffer into disjoint equal-size chunks and
//! compute each chunk with a fixed inner summation order, so results are
//! bit-identical whether the chunks run on one thread or many. The `parallel`
//! feature swaps the loop driver without touching any kernel logic.

/// Applies `f` to consecutive `chunk`-sized slices of `data`, passing each
/// slice's index. `data.len()` must be a multiple of `chunk`.
#[cfg(feature = "parallel")]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    use rayon::prelude::*;
    debug_assert_eq!(data.len() % chunk.max(1), 0);
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Sequential fallback with the identical contract.
#[cfg(not(feature = "parallel"))]
pub fn for_each_chunk<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert_eq!(data.len() % chunk.max(1), 0);
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_see_disjoint_slices_in_order() {
        let mut data = vec![0u32; 12];
        for_each_chunk(&mut data, 3, |i, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = (i * 3 + j) as u32;
            }
        });
        assert_eq!(data, (0..12).collect::<Vec<_>>());
    }
}
