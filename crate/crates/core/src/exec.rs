//! Execution backend for the data-parallel loops (batch forward/backward,
//! per-sample inference, threshold sweeps).
//!
//! Every fan-out in the crate goes through [`Backend`]. Results are always
//! collected in input order and reductions are performed over fixed-size
//! chunks in chunk order, so the parallel and sequential backends produce
//! bit-identical output.

/// Samples per gradient-accumulation chunk. Fixed so that the summation
/// order never depends on the number of worker threads.
pub const REDUCE_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Sequential,
    /// Rayon work-stealing pool. Falls back to sequential execution when the
    /// crate is built without the `parallel` feature.
    Parallel,
}

impl Default for Backend {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Backend::Parallel
        } else {
            Backend::Sequential
        }
    }
}

impl Backend {
    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => {
                use rayon::prelude::*;
                items.par_iter().map(f).collect()
            }
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Backend::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible order-preserving map; returns the first error in input order.
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Folds each [`REDUCE_CHUNK`]-sized chunk sequentially (possibly in
    /// parallel across chunks), then combines chunk results left to right.
    pub fn chunked_reduce<T, A, E, Init, Fold, Merge>(
        self,
        items: &[T],
        init: Init,
        fold: Fold,
        merge: Merge,
    ) -> Result<A, E>
    where
        T: Sync,
        A: Send,
        E: Send,
        Init: Fn() -> A + Sync + Send,
        Fold: Fn(&mut A, &T) -> Result<(), E> + Sync + Send,
        Merge: Fn(&mut A, A),
    {
        let chunks: Vec<&[T]> = items.chunks(REDUCE_CHUNK).collect();
        let partials = self.map(&chunks, |chunk| {
            let mut acc = init();
            for item in chunk.iter() {
                fold(&mut acc, item)?;
            }
            Ok(acc)
        });
        let mut total = init();
        for partial in partials {
            merge(&mut total, partial?);
        }
        Ok(total)
    }
}
