//! Equilibrium learning: loss, sensitivity, gradients and the projected
//! training loop.

mod gradients;
mod train;

pub use gradients::{accuracy, grad_alpha, grad_weights, loss, sensitivity, AlphaGradient, GradientTerms};
pub use train::{initial_weights, train, EpochStats, Experiment, NormGuard, StepRule, TrainConfig, TrainOutcome, TrainRecord};

use crate::error::Result;

/// How independent jobs are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool when the `parallel` feature is enabled; otherwise
    /// the same as `Sequential`.
    #[default]
    Parallel,
}

/// Applies `f` to every item, preserving order.
pub fn map_jobs<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Runs independent training problems. Each run is sequential; runs may
/// proceed concurrently.
pub fn sweep(experiments: &[Experiment], exec: Execution) -> Vec<Result<TrainRecord>> {
    map_jobs(experiments, exec, Experiment::run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_sweep_matches_sequential() {
        let jobs: Vec<_> = (0..4)
            .map(|s| {
                let mut e = Experiment::reference(1, 60 + s);
                e.config.max_epochs = 30;
                e
            })
            .collect();
        let a = sweep(&jobs, Execution::Sequential);
        let b = sweep(&jobs, Execution::Parallel);
        for (x, y) in a.iter().zip(&b) {
            let (x, y) = (x.as_ref().unwrap(), y.as_ref().unwrap());
            assert_eq!(x.final_weights, y.final_weights);
            assert_eq!(x.epochs, y.epochs);
        }
    }
}
