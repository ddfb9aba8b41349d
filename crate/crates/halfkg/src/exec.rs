//! Data-parallel helpers. With the `parallel` feature, work is spread over the
//! rayon pool unless switched off at runtime; without it everything runs
//! sequentially. Reductions are always folded sequentially in index order so
//! results do not depend on the thread count.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

pub fn parallel() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

pub fn for_chunks<T, F>(data: &mut [T], size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(size).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(size).enumerate().for_each(|(i, c)| f(i, c));
}

pub fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

pub fn fill<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    let block = 1024;
    for_chunks(out, block, |b, c| {
        for (i, v) in c.iter_mut().enumerate() {
            *v = f(b * block + i);
        }
    });
}

pub fn sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let block = 256;
    let parts = map(n.div_ceil(block), |b| {
        (b * block..((b + 1) * block).min(n)).map(&f).sum::<f64>()
    });
    parts.into_iter().sum()
}

pub fn configure_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        return rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_ok();
    }
    #[allow(unreachable_code)]
    {
        let _ = n;
        false
    }
}
