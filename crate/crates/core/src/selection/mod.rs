//! Effects of treatment on the treated under interference, with a
//! sensitivity analysis for post-treatment selection into exposure
//! groups.
//!
//! The target contrasts are `gamma_d(z,g,l,h)`, the effect of own
//! treatment `z` against the reference `z0 = 0` holding the others'
//! exposure summary `g` fixed, and `gamma_s(g,l,h)`, the effect of the
//! others' summary against `g0 = 0`. Without ignorability these are not
//! what regression on observed `(z, g)` returns; the gap is carried by
//! two selection-bias functions
//!
//! ```text
//! delta_d(z,g,l,h) = E[Y(z0,g)|z,g,l,h]  - E[Y(z0,g)|z0,g,l,h]
//! delta_s(g,l,h)   = E[Y(z0,g0)|g,l,h]   - E[Y(z0,g0)|g0,l,h]
//! ```
//!
//! which vanish at the reference levels by construction. Fixing a
//! parametric family for `(delta_d, delta_s)` makes the observed-data
//! conditional mean
//!
//! ```text
//! E[Y|z,g,l,h] = gamma_d + delta_d - sum_z' delta_d(z',g,l,h) f(z'|g,l,h)
//!              + gamma_s + delta_s - sum_{z*} delta_s(g(z*),l,h) f(z*|l,h)
//!              + q(l,h)
//! ```
//!
//! identified, with `q(l,h) = E[Y(z0,g0)|l,h]` the baseline. Estimation
//! is two-step: fit the treatment law `f` by maximum likelihood, then
//! solve an independence-working-correlation estimating equation for the
//! mean parameters with the fitted centering terms plugged in. Sweeping
//! the delta family's coefficients over a grid that includes zero (the
//! ignorability row) traces how conclusions move as selection grows.
//!
//! The regression contrast `gamma_d_dagger(z,g,l,h) = E[Y|z,g,l,h] -
//! E[Y|z0,g,l,h]` satisfies `gamma_d_dagger - gamma_d = delta_d` exactly,
//! so the delta scale reads directly as regression-contrast bias.

mod fit;
mod mean;

pub use fit::{
    bootstrap_se, fit_gee, fit_propensity, propensity_gof, sensitivity_sweep, BootstrapSpec,
    BootstrapSummary, CountCheck, FitResult, GeeSweepRow,
};
pub use mean::{
    count_distribution, reparameterized_mean, reparameterized_mean_enumerated, FittedPropensity,
    ENUMERATION_CAP,
};

use thiserror::Error;

use crate::data::{DataError, SummaryKind};
use crate::num::Real;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("group summary must be a scalar (count or mean of others), got {got}")]
    NonScalarSummary { got: &'static str },
    #[error("term {term} refers to {what} index {index}, but the data has {dim}")]
    TermOutOfRange {
        term: String,
        what: &'static str,
        index: usize,
        dim: usize,
    },
    #[error("peer-covariate summaries have mixed lengths ({a} and {b}); identity summaries need a constant cluster size")]
    RaggedH { a: usize, b: usize },
    #[error("treatment is constant ({value}) across all individuals; the treatment law is degenerate")]
    ConstantTreatment { value: u8 },
    #[error("complete separation: {column} alone perfectly predicts treatment")]
    Separation { column: String },
    #[error("treatment-model design is rank deficient: {column} is linearly dependent")]
    PropensityRankDeficient { column: String },
    #[error("treatment-model fit did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    PropensityDiverged {
        iterations: usize,
        gradient_norm: f64,
    },
    #[error("normal equations are singular: {column} is linearly dependent")]
    SingularNormalEquations { column: String },
    #[error("estimating-equation solve did not converge after {iterations} iterations; residual norms {trajectory:?}")]
    GeeDiverged {
        iterations: usize,
        trajectory: Vec<f64>,
    },
    #[error("cluster {cluster_id} has {size} members; exact enumeration is capped at {cap}")]
    ClusterTooLarge {
        cluster_id: String,
        size: usize,
        cap: usize,
    },
    #[error("no clusters of size {size} were seen when the treatment law was fitted")]
    UnseenClusterSize { size: usize },
    #[error("the sensitivity grid must contain the zero pair (the ignorability row)")]
    MissingZeroPair,
    #[error("only {used} of {requested} bootstrap replicates converged; too few for a standard error")]
    BootstrapUnstable { used: usize, requested: usize },
}

// ---------------------------------------------------------------------------
// Regression terms. Every direct term carries a factor of z and every
// spillover term a factor of g, so the fitted contrasts vanish at the
// reference levels (z0, g0) = (0, 0) by construction.

/// Regressors for `gamma_d`, all proportional to own treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirectTerm {
    Z,
    ZTimesG,
    ZTimesL(usize),
    ZTimesH(usize),
}

impl DirectTerm {
    pub(crate) fn value<R: Real>(self, z: R, g: R, l: &[R], h: &[R]) -> R {
        match self {
            DirectTerm::Z => z,
            DirectTerm::ZTimesG => z * g,
            DirectTerm::ZTimesL(i) => z * l[i],
            DirectTerm::ZTimesH(i) => z * h[i],
        }
    }

    pub fn label(self) -> String {
        match self {
            DirectTerm::Z => "z".into(),
            DirectTerm::ZTimesG => "z*g".into(),
            DirectTerm::ZTimesL(i) => format!("z*l{}", i + 1),
            DirectTerm::ZTimesH(i) => format!("z*h{}", i + 1),
        }
    }
}

/// Regressors for `gamma_s`, all proportional to the exposure summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpillTerm {
    G,
    GTimesL(usize),
    GTimesH(usize),
}

impl SpillTerm {
    pub(crate) fn value<R: Real>(self, g: R, l: &[R], h: &[R]) -> R {
        match self {
            SpillTerm::G => g,
            SpillTerm::GTimesL(i) => g * l[i],
            SpillTerm::GTimesH(i) => g * h[i],
        }
    }

    pub fn label(self) -> String {
        match self {
            SpillTerm::G => "g".into(),
            SpillTerm::GTimesL(i) => format!("g*l{}", i + 1),
            SpillTerm::GTimesH(i) => format!("g*h{}", i + 1),
        }
    }
}

/// Regressors for the baseline `q(l, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineTerm {
    One,
    L(usize),
    H(usize),
}

impl BaselineTerm {
    pub(crate) fn value<R: Real>(self, l: &[R], h: &[R]) -> R {
        match self {
            BaselineTerm::One => R::one(),
            BaselineTerm::L(i) => l[i],
            BaselineTerm::H(i) => h[i],
        }
    }

    pub fn label(self) -> String {
        match self {
            BaselineTerm::One => "1".into(),
            BaselineTerm::L(i) => format!("l{}", i + 1),
            BaselineTerm::H(i) => format!("h{}", i + 1),
        }
    }
}

/// Regressors for the per-individual treatment model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropTerm {
    One,
    L(usize),
}

impl PropTerm {
    pub(crate) fn value<R: Real>(self, l: &[R]) -> R {
        match self {
            PropTerm::One => R::one(),
            PropTerm::L(i) => l[i],
        }
    }

    pub fn label(self) -> String {
        match self {
            PropTerm::One => "1".into(),
            PropTerm::L(i) => format!("l{}", i + 1),
        }
    }
}

// ---------------------------------------------------------------------------
// Selection-bias families. All are proportional to z (direct) or g
// (spillover), so the defining constraints delta_d(z0,.) = 0 and
// delta_s(g0,.) = 0 hold for every coefficient value.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectDelta<R> {
    Zero,
    /// `lambda * z`
    Scaled { lambda: R },
    /// `z * (lambda1 + lambda2 * g)`
    GInteraction { lambda1: R, lambda2: R },
}

impl<R: Real> DirectDelta<R> {
    pub(crate) fn value(&self, z: R, g: R) -> R {
        match *self {
            DirectDelta::Zero => R::zero(),
            DirectDelta::Scaled { lambda } => lambda * z,
            DirectDelta::GInteraction { lambda1, lambda2 } => z * (lambda1 + lambda2 * g),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            DirectDelta::Zero => true,
            DirectDelta::Scaled { lambda } => lambda == R::zero(),
            DirectDelta::GInteraction { lambda1, lambda2 } => {
                lambda1 == R::zero() && lambda2 == R::zero()
            }
        }
    }

    /// The coefficients as `(lambda1, lambda2)`, zero-padded.
    pub fn coefficients(&self) -> (R, R) {
        match *self {
            DirectDelta::Zero => (R::zero(), R::zero()),
            DirectDelta::Scaled { lambda } => (lambda, R::zero()),
            DirectDelta::GInteraction { lambda1, lambda2 } => (lambda1, lambda2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpillDelta<R> {
    Zero,
    /// `lambda * g`
    Scaled { lambda: R },
    /// `g * (lambda1 + lambda2 * l[covariate])`
    CovariateInteraction {
        lambda1: R,
        lambda2: R,
        covariate: usize,
    },
}

impl<R: Real> SpillDelta<R> {
    pub(crate) fn value(&self, g: R, l: &[R]) -> R {
        match *self {
            SpillDelta::Zero => R::zero(),
            SpillDelta::Scaled { lambda } => lambda * g,
            SpillDelta::CovariateInteraction {
                lambda1,
                lambda2,
                covariate,
            } => g * (lambda1 + lambda2 * l[covariate]),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            SpillDelta::Zero => true,
            SpillDelta::Scaled { lambda } => lambda == R::zero(),
            SpillDelta::CovariateInteraction {
                lambda1, lambda2, ..
            } => lambda1 == R::zero() && lambda2 == R::zero(),
        }
    }

    pub fn coefficients(&self) -> (R, R) {
        match *self {
            SpillDelta::Zero => (R::zero(), R::zero()),
            SpillDelta::Scaled { lambda } => (lambda, R::zero()),
            SpillDelta::CovariateInteraction {
                lambda1, lambda2, ..
            } => (lambda1, lambda2),
        }
    }
}

/// One point in selection-sensitivity space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaPair<R> {
    pub direct: DirectDelta<R>,
    pub spill: SpillDelta<R>,
}

impl<R: Real> DeltaPair<R> {
    pub fn zero() -> Self {
        DeltaPair {
            direct: DirectDelta::Zero,
            spill: SpillDelta::Zero,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.direct.is_zero() && self.spill.is_zero()
    }
}

// ---------------------------------------------------------------------------
// The model and its parameters.

/// Shape of the treatment law.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PropensityForm {
    /// Independent per-individual binary-response regressions on own
    /// covariates. The default; it makes every centering sum collapse.
    Logistic(Vec<PropTerm>),
    /// Treatment vectors exchangeable given the cluster's treated count,
    /// with one count distribution per cluster size (fitted as empirical
    /// frequencies). No covariate dependence.
    ExchangeableCount,
}

impl PropensityForm {
    /// Intercept plus every covariate.
    pub fn standard_logistic(covariate_dim: usize) -> Self {
        let mut terms = vec![PropTerm::One];
        terms.extend((0..covariate_dim).map(PropTerm::L));
        PropensityForm::Logistic(terms)
    }
}

/// Working models for the observed-data mean and the treatment law.
/// Parameter blocks (`psi_d`, `psi_s`, `eta`, treatment-model
/// coefficients) are disjoint by construction: no term appears in two
/// blocks, which keeps the blocks variation independent.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModel<R> {
    pub direct_terms: Vec<DirectTerm>,
    pub spill_terms: Vec<SpillTerm>,
    pub baseline_terms: Vec<BaselineTerm>,
    pub propensity: PropensityForm,
    pub delta: DeltaPair<R>,
    /// How peers' treatments collapse into the scalar exposure `g`.
    pub g_summary: SummaryKind,
    /// How peers' covariates collapse into `h`.
    pub h_summary: SummaryKind,
}

impl<R: Real> SelectionModel<R> {
    /// The default forms: `gamma_d` linear in `z` and `z*g`, `gamma_s`
    /// linear in `g`, baseline linear in every covariate and peer
    /// summary, logistic treatment model, count-of-others exposure.
    pub fn standard(covariate_dim: usize, delta: DeltaPair<R>) -> Self {
        let mut baseline = vec![BaselineTerm::One];
        baseline.extend((0..covariate_dim).map(BaselineTerm::L));
        baseline.extend((0..covariate_dim).map(BaselineTerm::H));
        SelectionModel {
            direct_terms: vec![DirectTerm::Z, DirectTerm::ZTimesG],
            spill_terms: vec![SpillTerm::G],
            baseline_terms: baseline,
            propensity: PropensityForm::standard_logistic(covariate_dim),
            delta,
            g_summary: SummaryKind::CountOfOthers,
            h_summary: SummaryKind::CountOfOthers,
        }
    }

    pub fn with_delta(&self, delta: DeltaPair<R>) -> Self {
        let mut m = self.clone();
        m.delta = delta;
        m
    }

    /// Labels of the mean-model columns, in parameter order
    /// (`psi_d`, then `psi_s`, then `eta`).
    pub fn column_labels(&self) -> Vec<String> {
        let mut names: Vec<String> = self.direct_terms.iter().map(|t| t.label()).collect();
        names.extend(self.spill_terms.iter().map(|t| t.label()));
        names.extend(self.baseline_terms.iter().map(|t| t.label()));
        names
    }

    pub(crate) fn gamma_d(&self, psi_d: &[R], z: R, g: R, l: &[R], h: &[R]) -> R {
        self.direct_terms
            .iter()
            .zip(psi_d)
            .map(|(t, &p)| p * t.value(z, g, l, h))
            .sum()
    }

    pub(crate) fn gamma_s(&self, psi_s: &[R], g: R, l: &[R], h: &[R]) -> R {
        self.spill_terms
            .iter()
            .zip(psi_s)
            .map(|(t, &p)| p * t.value(g, l, h))
            .sum()
    }

    pub(crate) fn q(&self, eta: &[R], l: &[R], h: &[R]) -> R {
        self.baseline_terms
            .iter()
            .zip(eta)
            .map(|(t, &p)| p * t.value(l, h))
            .sum()
    }

    /// Bounds-checks every term against the data's covariate and peer
    /// summary dimensions.
    pub(crate) fn validate(&self, l_dim: usize, h_dim: usize) -> Result<(), SelectionError> {
        let check = |term: String, what: &'static str, index: usize, dim: usize| {
            if index >= dim {
                Err(SelectionError::TermOutOfRange {
                    term,
                    what,
                    index,
                    dim,
                })
            } else {
                Ok(())
            }
        };
        for t in &self.direct_terms {
            match *t {
                DirectTerm::ZTimesL(i) => check(t.label(), "covariate", i, l_dim)?,
                DirectTerm::ZTimesH(i) => check(t.label(), "peer summary", i, h_dim)?,
                _ => {}
            }
        }
        for t in &self.spill_terms {
            match *t {
                SpillTerm::GTimesL(i) => check(t.label(), "covariate", i, l_dim)?,
                SpillTerm::GTimesH(i) => check(t.label(), "peer summary", i, h_dim)?,
                _ => {}
            }
        }
        for t in &self.baseline_terms {
            match *t {
                BaselineTerm::L(i) => check(t.label(), "covariate", i, l_dim)?,
                BaselineTerm::H(i) => check(t.label(), "peer summary", i, h_dim)?,
                _ => {}
            }
        }
        if let PropensityForm::Logistic(terms) = &self.propensity {
            for t in terms {
                if let PropTerm::L(i) = *t {
                    check(t.label(), "covariate", i, l_dim)?;
                }
            }
        }
        if let SpillDelta::CovariateInteraction { covariate, .. } = self.delta.spill {
            check("delta_s g*l".into(), "covariate", covariate, l_dim)?;
        }
        Ok(())
    }
}

/// Mean-model parameter blocks, aligned with the model's term lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionParams<R> {
    pub psi_d: Vec<R>,
    pub psi_s: Vec<R>,
    pub eta: Vec<R>,
}

impl<R: Real> SelectionParams<R> {
    pub(crate) fn from_flat(model: &SelectionModel<R>, flat: &[R]) -> Self {
        let d = model.direct_terms.len();
        let s = model.spill_terms.len();
        SelectionParams {
            psi_d: flat[..d].to_vec(),
            psi_s: flat[d..d + s].to_vec(),
            eta: flat[d + s..].to_vec(),
        }
    }

    pub fn flat(&self) -> Vec<R> {
        let mut out = self.psi_d.clone();
        out.extend_from_slice(&self.psi_s);
        out.extend_from_slice(&self.eta);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_vanish_at_reference_levels() {
        let fams: Vec<DirectDelta<f64>> = vec![
            DirectDelta::Zero,
            DirectDelta::Scaled { lambda: 1.3 },
            DirectDelta::GInteraction {
                lambda1: 0.4,
                lambda2: -0.7,
            },
        ];
        for f in fams {
            for g in [0.0, 1.0, 2.5] {
                assert_eq!(f.value(0.0, g), 0.0);
            }
        }
        let fams: Vec<SpillDelta<f64>> = vec![
            SpillDelta::Zero,
            SpillDelta::Scaled { lambda: -0.2 },
            SpillDelta::CovariateInteraction {
                lambda1: 0.4,
                lambda2: 0.7,
                covariate: 0,
            },
        ];
        for f in fams {
            for l in [0.0, 1.0] {
                assert_eq!(f.value(0.0, &[l]), 0.0);
            }
        }
    }

    #[test]
    fn zero_detection_covers_all_families() {
        assert!(DeltaPair::<f64>::zero().is_zero());
        let z = DeltaPair {
            direct: DirectDelta::Scaled { lambda: 0.0 },
            spill: SpillDelta::CovariateInteraction {
                lambda1: 0.0,
                lambda2: 0.0,
                covariate: 0,
            },
        };
        assert!(z.is_zero());
        let nz = DeltaPair {
            direct: DirectDelta::Zero,
            spill: SpillDelta::Scaled { lambda: 1e-9 },
        };
        assert!(!nz.is_zero());
    }

    #[test]
    fn standard_model_layout() {
        let m = SelectionModel::<f64>::standard(2, DeltaPair::zero());
        assert_eq!(
            m.column_labels(),
            vec!["z", "z*g", "g", "1", "l1", "l2", "h1", "h2"]
        );
    }

    #[test]
    fn params_round_trip_through_flat() {
        let m = SelectionModel::<f64>::standard(1, DeltaPair::zero());
        let flat = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = SelectionParams::from_flat(&m, &flat);
        assert_eq!(p.psi_d, vec![1.0, 2.0]);
        assert_eq!(p.psi_s, vec![3.0]);
        assert_eq!(p.eta, vec![4.0, 5.0, 6.0]);
        assert_eq!(p.flat(), flat);
    }

    #[test]
    fn validation_names_the_offending_term() {
        let mut m = SelectionModel::<f64>::standard(1, DeltaPair::zero());
        m.direct_terms.push(DirectTerm::ZTimesL(3));
        let err = m.validate(1, 1).unwrap_err().to_string();
        assert!(err.contains("z*l4") && err.contains("index 3"), "{err}");
    }
}
