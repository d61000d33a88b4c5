use cardiotwin_core::exec::Executor;
use rayon::prelude::*;

/// Runs indexed work on the global rayon pool; results stay in index order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon;

impl Executor for Rayon {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cardiotwin_core::exec::Sequential;

    #[test]
    fn matches_sequential_order() {
        let f = |i: usize| i * i + 1;
        assert_eq!(Rayon.map_indexed(1000, f), Sequential.map_indexed(1000, f));
    }
}
