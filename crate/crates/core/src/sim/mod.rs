//! Synthetic worlds with closed-form ground truth, used to validate the
//! estimators against quantities that are known exactly rather than
//! merely plausible.
//!
//! Three families are provided: two-person household worlds built from
//! principal strata (so the infectiousness selection effect is known
//! analytically), two-stage trial worlds with count-dependent potential
//! outcomes (so every allocation-strategy estimand is an exact finite
//! sum), and cluster worlds for the observational estimators, either
//! with an explicit discrete confounder (whose bias and selection
//! functions are computed by enumeration) or with selection functions
//! planted by construction.
//!
//! All generators draw from a counter-based stream keyed by (seed,
//! entity), so each household/group/cluster is reproducible on its own
//! and results do not depend on iteration order.

mod cluster;
mod household;
mod trial;

pub use cluster::{
    simulate_confounded, simulate_selection, ConfoundedWorld, ConfounderRecord, MeanCoefs,
    SelectionWorld,
};
pub use household::{simulate_households, HouseholdTruth, HouseholdWorld};
pub use trial::{
    simulate_trial, true_trial_effects, Allocation, OutcomeRule, StrategyMeans, TrialDesign,
    TrialGroup, TrialTruth, TrialTruthPair, TrialWorld, Weighting,
};

use thiserror::Error;

use crate::selection::SelectionError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{name} = {value} is not a probability")]
    NotProbability { name: &'static str, value: f64 },
    #[error("{name} must sum to 1, got {total}")]
    NotNormalized { name: &'static str, total: f64 },
    #[error("conditioning event {event} has probability zero")]
    EmptyEvent { event: String },
    #[error("confounder rows have {a} and {b} levels; both covariate levels need the same support")]
    RaggedConfounder { a: usize, b: usize },
    #[error("group {index} has {size} members; interference needs at least 2")]
    GroupTooSmall { index: usize, size: usize },
    #[error("group {index} has {size} members, above the exact-sum cap of {cap}")]
    GroupTooLarge { index: usize, size: usize, cap: usize },
    #[error("outcome table for member {member} of group {group} has {got} entries; need one per possible count of treated peers ({want})")]
    TableLength {
        group: usize,
        member: usize,
        got: usize,
        want: usize,
    },
    #[error("allocating {treated} of {size} leaves an arm empty")]
    DegenerateAllocation { treated: usize, size: usize },
    #[error("strategies need distinct labels, both are {label:?}")]
    DuplicateLabel { label: String },
    #[error("first stage assigns {n_psi} of {n_groups} groups; both strategies need at least one group")]
    DegenerateFirstStage { n_psi: usize, n_groups: usize },
    #[error("outcome rule value {value} at (z={z}, treated peers={count}) is not 0/1; case counts need binary outcomes")]
    NonBinaryOutcome { z: u8, count: usize, value: f64 },
    #[error("cluster size {size} is below 2")]
    ClusterTooSmall { size: usize },
    #[error("noise scale {0} is negative")]
    NegativeNoise(f64),
    #[error("parameter block {block} has {got} entries; the standard model needs {want}")]
    ParamShape {
        block: &'static str,
        got: usize,
        want: usize,
    },
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

pub(crate) fn check_probability<R: crate::num::Real>(
    name: &'static str,
    value: R,
) -> Result<(), SimError> {
    if value >= R::zero() && value <= R::one() {
        Ok(())
    } else {
        Err(SimError::NotProbability {
            name,
            value: value.as_f64(),
        })
    }
}
