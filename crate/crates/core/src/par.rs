//! Execution strategy for batch work.
//!
//! [`Exec::Parallel`] runs on the rayon pool when the `parallel` feature is
//! enabled and degrades to sequential iteration otherwise. Both strategies
//! return results in input order, so downstream reductions are identical.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when this strategy will actually use worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

impl std::str::FromStr for Exec {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" | "seq" => Ok(Exec::Sequential),
            "parallel" | "par" => Ok(Exec::Parallel),
            other => Err(crate::Error::Config(format!("unknown execution mode {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree_and_keep_order() {
        let xs: Vec<u64> = (0..200).collect();
        let a = Exec::Sequential.map(&xs, |i, x| x * x + i as u64);
        let b = Exec::Parallel.map(&xs, |i, x| x * x + i as u64);
        assert_eq!(a, b);
        assert_eq!(a[3], 12);
    }
}
