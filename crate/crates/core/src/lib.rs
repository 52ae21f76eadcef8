//! Estimation and sensitivity analysis for interventions whose effects
//! spill over to untreated neighbors.
//!
//! Three study designs are covered, each with the analyses that remain
//! honest when interference breaks the usual identification story:
//!
//! * **Two-stage randomized trials** ([`data::TrialTable`],
//!   [`estimands`]): groups are randomized to a treatment coverage
//!   strategy, individuals within groups to treatment. Direct,
//!   indirect, total, and overall risk differences with group-level
//!   variances, plus the decomposition identities tying them together.
//! * **Household vaccine studies** ([`data::InfectStudy`],
//!   [`infectiousness`]): secondary attack contrasts conditioned on a
//!   post-treatment infection are confounded by who gets infected.
//!   Principal-stratum sensitivity parameters (a shift, a stratum mean,
//!   a log odds ratio) and monotonicity bounds recover the contrast a
//!   randomized comparison would have given.
//! * **Observational clusters** ([`data::ClusterData`], [`selection`],
//!   [`confound`]): outcome regressions with neighborhood exposure,
//!   fit by GEE under a working independence model, with selection
//!   functions quantifying departures from ignorable treatment and
//!   closed-form bias corrections for an unmeasured confounder.
//!
//! [`sim`] builds synthetic worlds for all three designs in which the
//! estimation targets are known exactly, so every estimator and every
//! sensitivity adjustment can be checked against ground truth.
//! [`report`] renders results as TSV tables with stable formatting.
//!
//! Numeric routines are generic over the scalar type through
//! [`num::Real`]; the aliases at the crate root fix `f64` for the
//! common case.

pub mod confound;
pub mod data;
pub mod estimands;
pub mod infectiousness;
mod linalg;
pub mod num;
pub mod report;
mod rng;
pub mod selection;
pub mod sim;

pub type InfectStudy = data::InfectStudy<f64>;
pub type ClusterData = data::ClusterData<f64>;
pub type EffectEstimate = estimands::EffectEstimate<f64>;
pub type InfectEffect = infectiousness::InfectEffect<f64>;
pub type BiasSpecSimple = confound::BiasSpecSimple<f64>;
pub type BiasSpecGeneral = confound::BiasSpecGeneral<f64>;
pub type CorrectedEstimate = confound::CorrectedEstimate<f64>;
pub type SelectionModel = selection::SelectionModel<f64>;
pub type SelectionParams = selection::SelectionParams<f64>;
pub type FitResult = selection::FitResult<f64>;
pub type HouseholdWorld = sim::HouseholdWorld<f64>;
pub type TrialWorld = sim::TrialWorld<f64>;
pub type SelectionWorld = sim::SelectionWorld<f64>;
pub type ConfoundedWorld = sim::ConfoundedWorld<f64>;
