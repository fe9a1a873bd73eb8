//! Trial execution, ground truth, statistics, CSV reporting, calibration and
//! acceptance checks.

pub mod acceptance;
pub mod calibrate;
pub mod constants;
pub mod experiments;
pub mod oracle;
pub mod report;
pub mod stats;

pub use constants::Constants;
pub use experiments::{run_experiment, Experiment, ExperimentOutput, Protocol};
pub use oracle::{verify_against_oracle, Oracle, Verdict};
pub use report::TrialRecord;
pub use stats::{Frequency, LinearFit, Summary};

use crate::model::{derive_seed, Stream};

/// Seed of trial `trial` under root seed `root`.
pub fn trial_seed(root: u64, trial: u64) -> u64 {
    derive_seed(root, &[Stream::Trial as u64, trial])
}

/// Runs `f` for every trial index, in parallel when the `parallel` feature is
/// on. Results come back in trial order either way.
pub fn run_trials<R, F>(trials: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_trials_sequential(trials, f)
    }
}

/// Same contract as [`run_trials`], always on the calling thread.
pub fn run_trials_sequential<R, F>(trials: u64, f: F) -> Vec<R>
where
    F: Fn(u64) -> R,
{
    (0..trials).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runners_agree_and_keep_order() {
        let f = |t: u64| trial_seed(42, t) ^ t;
        let par = run_trials(257, f);
        let seq = run_trials_sequential(257, f);
        assert_eq!(par, seq);
        assert_eq!(par[3], trial_seed(42, 3) ^ 3);
    }
}
