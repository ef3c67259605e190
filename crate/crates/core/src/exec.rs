//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the heavy loops (grid backups,
//! enumeration, sweeps, restarts, per-step decompositions) fan out over rayon.
//! Results are always gathered in index order and reduced sequentially, so the
//! output is bitwise identical to the sequential path.

/// Execution strategy for the data-parallel loops.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// `Parallel` when compiled with rayon, `Sequential` otherwise.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fills `out[i] = f(i)` for every slot.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
            }
            _ => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = f(i);
                }
            }
        }
    }
}

/// Reads `LAXOC_THREADS` and, if set, sizes the global rayon pool.
///
/// Returns the requested thread count. Calling it twice is harmless; the
/// second pool build is ignored.
pub fn init_threads_from_env() -> Option<usize> {
    let n = std::env::var("LAXOC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)?;
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Some(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_paths_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = Exec::Sequential.map(1000, f);
        let b = Exec::available().map(1000, f);
        assert_eq!(a, b);
        let mut c = vec![0.0; 1000];
        Exec::available().fill(&mut c, f);
        assert_eq!(a, c);
    }
}
