//! Deterministic parallel sums. Rows are cut into fixed-size chunks, each
//! chunk is folded sequentially, and chunk results are combined pairwise in a
//! fixed tree. The result is therefore identical for any thread count.

pub(crate) const CHUNK: usize = 2048;

pub(crate) trait Accumulate: Send {
    fn merge(&mut self, other: Self);
}

fn tree_merge<A: Accumulate>(mut parts: Vec<A>) -> Option<A> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop()
}

/// Folds `items` chunk-wise with `fold` starting from `init()` and merges the
/// chunk accumulators pairwise.
pub(crate) fn chunked_fold<T, A, I, F>(items: &[T], init: I, fold: F) -> A
where
    T: Sync,
    A: Accumulate,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &T) + Sync,
{
    let run = |chunk: &[T]| {
        let mut acc = init();
        for item in chunk {
            fold(&mut acc, item);
        }
        acc
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<A> = {
        use rayon::prelude::*;
        items.par_chunks(CHUNK).map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<A> = items.chunks(CHUNK).map(run).collect();
    tree_merge(parts).unwrap_or_else(init)
}

/// Order-preserving map, parallel when the feature is on.
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(&f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Sum(pub f64);

impl Accumulate for Sum {
    fn merge(&mut self, other: Self) {
        self.0 += other.0;
    }
}

/// Pairwise-tree sum of `f(item)`.
pub(crate) fn sum_by<T: Sync>(items: &[T], f: impl Fn(&T) -> f64 + Sync) -> f64 {
    chunked_fold(items, Sum::default, |acc, t| acc.0 += f(t)).0
}
