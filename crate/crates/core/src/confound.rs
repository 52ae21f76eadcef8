//! Bias formulas for unmeasured confounding of exposure contrasts, and
//! the corrections they license.
//!
//! The observed contrast `E[Y|z,g,l,h] - E[Y|z',g',l,h]` differs from the
//! causal contrast `E[Y(z,g)|l,h] - E[Y(z',g')|l,h]` by a bias factor `B`
//! whenever adjustment additionally requires an unmeasured own-level
//! confounder `U` and a summary `V` of the other members' confounders.
//! Specifying how `(U, V)` shifts the outcome and how its distribution
//! differs across the two exposure groups determines `B` exactly:
//!
//! ```text
//! B = sum_{u,v} shift(z,g,u,v)   * [P(u,v|z,g,l,h)   - P(u,v|l,h)]
//!   - sum_{u,v} shift(z',g',u,v) * [P(u,v|z',g',l,h) - P(u,v|l,h)]
//! ```
//!
//! where `shift(z,g,u,v) = E[Y|z,g,l,h,u,v] - E[Y|z,g,l,h,u*,v*]` against
//! an arbitrary reference `(u*, v*)`. When the shift is additive and the
//! same in both exposure groups, `shift = lambda (u - u*) + tau (v - v*)`,
//! the whole sum collapses to the two mean gaps
//!
//! ```text
//! B = lambda (E[U|z,g,l,h] - E[U|z',g',l,h])
//!   + tau    (E[V|z,g,l,h] - E[V|z',g',l,h])
//! ```
//!
//! and `B` no longer involves the outcome data at all. Subtracting `B`
//! from the observed contrast gives the corrected estimate in either
//! case; subtracting it from both confidence limits is valid only in the
//! simplified case, so [`correct`] refuses to shift an interval for a
//! general spec.
//!
//! Everything here is conditional on one covariate stratum `(l, h)`;
//! averaging corrections over strata is the caller's loop.

use thiserror::Error;

use crate::num::Real;

const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error("{which} sums to {total} over the support, expected 1")]
    NotNormalized { which: String, total: f64 },
    #[error("{which} has {got} probabilities for a support of {expected} points")]
    WrongLength {
        which: String,
        got: usize,
        expected: usize,
    },
    #[error("reference point ({u}, {v}) is not in the support")]
    ReferenceOutsideSupport { u: f64, v: f64 },
    #[error("shift at the reference point is {value:e} at (z={z}, g={g}), expected 0")]
    ReferenceShiftNonzero { z: f64, g: f64, value: f64 },
    #[error(
        "interval shifting needs the simplified additive bias; a general bias depends on unknown stratum distributions, so shifted limits would not be valid"
    )]
    CiShiftUnsupported,
}

/// One exposure pair: own treatment `z` and the group allocation `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exposure<R> {
    pub z: R,
    pub g: R,
}

impl<R> Exposure<R> {
    pub fn new(z: R, g: R) -> Self {
        Exposure { z, g }
    }
}

/// Fully specified bias inputs over a finite `(u, v)` support.
/// Continuous confounders must be discretized by the caller.
pub struct BiasSpecGeneral<R> {
    support: Vec<(R, R)>,
    reference: (R, R),
    shift: Box<dyn Fn(Exposure<R>, (R, R)) -> R>,
    dist_at: Box<dyn Fn(Exposure<R>) -> Vec<R>>,
    dist_marg: Vec<R>,
}

impl<R: Real> BiasSpecGeneral<R> {
    /// `shift(e, (u, v))` is the outcome shift of `(u, v)` against the
    /// reference under exposure `e`; `dist_at(e)` returns
    /// `P(u,v | e, l, h)` aligned with `support`; `dist_marg` is
    /// `P(u,v | l, h)`.
    pub fn new(
        support: Vec<(R, R)>,
        reference: (R, R),
        shift: impl Fn(Exposure<R>, (R, R)) -> R + 'static,
        dist_at: impl Fn(Exposure<R>) -> Vec<R> + 'static,
        dist_marg: Vec<R>,
    ) -> Result<Self, BiasError> {
        if !support.contains(&reference) {
            return Err(BiasError::ReferenceOutsideSupport {
                u: reference.0.as_f64(),
                v: reference.1.as_f64(),
            });
        }
        check_distribution("P(u,v|l,h)", &dist_marg, support.len())?;
        Ok(BiasSpecGeneral {
            support,
            reference,
            shift: Box::new(shift),
            dist_at: Box::new(dist_at),
            dist_marg,
        })
    }

    /// Builds the shift function from a conditional mean
    /// `mean(e, (u, v)) = E[Y | e, l, h, u, v]`, which makes the
    /// zero-at-reference invariant hold by construction.
    pub fn from_mean_fn(
        support: Vec<(R, R)>,
        reference: (R, R),
        mean: impl Fn(Exposure<R>, (R, R)) -> R + 'static,
        dist_at: impl Fn(Exposure<R>) -> Vec<R> + 'static,
        dist_marg: Vec<R>,
    ) -> Result<Self, BiasError> {
        let shift = move |e: Exposure<R>, uv: (R, R)| mean(e, uv) - mean(e, reference);
        Self::new(support, reference, shift, dist_at, dist_marg)
    }

    pub fn support(&self) -> &[(R, R)] {
        &self.support
    }

    fn exposure_term(&self, e: Exposure<R>) -> Result<R, BiasError> {
        let dist = (self.dist_at)(e);
        let which = || format!("P(u,v|z={}, g={})", e.z, e.g);
        if dist.len() != self.support.len() {
            return Err(BiasError::WrongLength {
                which: which(),
                got: dist.len(),
                expected: self.support.len(),
            });
        }
        let total: R = dist.iter().copied().sum();
        if (total - R::one()).abs().as_f64() > NORM_TOL {
            return Err(BiasError::NotNormalized {
                which: which(),
                total: total.as_f64(),
            });
        }
        let at_ref = (self.shift)(e, self.reference);
        if at_ref.abs().as_f64() > NORM_TOL {
            return Err(BiasError::ReferenceShiftNonzero {
                z: e.z.as_f64(),
                g: e.g.as_f64(),
                value: at_ref.as_f64(),
            });
        }
        let mut term = R::zero();
        for (i, &uv) in self.support.iter().enumerate() {
            term += (self.shift)(e, uv) * (dist[i] - self.dist_marg[i]);
        }
        Ok(term)
    }
}

fn check_distribution<R: Real>(name: &str, dist: &[R], expected: usize) -> Result<(), BiasError> {
    if dist.len() != expected {
        return Err(BiasError::WrongLength {
            which: name.to_string(),
            got: dist.len(),
            expected,
        });
    }
    let total: R = dist.iter().copied().sum();
    if (total - R::one()).abs().as_f64() > NORM_TOL {
        return Err(BiasError::NotNormalized {
            which: name.to_string(),
            total: total.as_f64(),
        });
    }
    Ok(())
}

/// The general bias factor for the contrast of `zg` against `zg_prime`.
pub fn bias_general<R: Real>(
    spec: &BiasSpecGeneral<R>,
    zg: Exposure<R>,
    zg_prime: Exposure<R>,
) -> Result<R, BiasError> {
    Ok(spec.exposure_term(zg)? - spec.exposure_term(zg_prime)?)
}

/// Whether the spec's shift function is the same at both exposure pairs
/// over the whole support. When it is not, a zero causal effect plus the
/// computed bias cannot reproduce the observed contrast, so sweeps built
/// on such a spec are incompatible with the sharp null; callers should
/// surface this as a warning.
pub fn shift_is_shared<R: Real>(
    spec: &BiasSpecGeneral<R>,
    zg: Exposure<R>,
    zg_prime: Exposure<R>,
) -> bool {
    spec.support.iter().all(|&uv| {
        ((spec.shift)(zg, uv) - (spec.shift)(zg_prime, uv))
            .abs()
            .as_f64()
            <= NORM_TOL
    })
}

/// Inputs to the simplified additive bias: outcome shifts per unit of `U`
/// and `V`, and the two across-exposure mean gaps
/// `dU = E[U|z,g,l,h] - E[U|z',g',l,h]`, `dV` likewise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSpecSimple<R> {
    pub lambda: R,
    pub tau: R,
    pub d_u: R,
    pub d_v: R,
}

pub fn bias_simple<R: Real>(spec: &BiasSpecSimple<R>) -> R {
    spec.lambda * spec.d_u + spec.tau * spec.d_v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedEstimate<R> {
    pub observed: R,
    pub bias: R,
    pub corrected: R,
    pub ci_observed: Option<(R, R)>,
    pub ci_corrected: Option<(R, R)>,
}

/// Subtracts the bias factor from the observed contrast. `simple` states
/// that `bias` came from an additive spec; only then is the interval
/// shifted, because only then is the bias free of the outcome data.
pub fn correct<R: Real>(
    observed: R,
    ci_observed: Option<(R, R)>,
    bias: R,
    simple: bool,
) -> Result<CorrectedEstimate<R>, BiasError> {
    let ci_corrected = match ci_observed {
        None => None,
        Some(_) if !simple => return Err(BiasError::CiShiftUnsupported),
        Some((lo, hi)) => Some((lo - bias, hi - bias)),
    };
    Ok(CorrectedEstimate {
        observed,
        bias,
        corrected: observed - bias,
        ci_observed,
        ci_corrected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSweepRow<R> {
    pub spec: BiasSpecSimple<R>,
    pub estimate: CorrectedEstimate<R>,
}

/// One corrected estimate per grid point, in grid order.
pub fn sweep_bias<R: Real>(
    grid: &[BiasSpecSimple<R>],
    observed: R,
    ci_observed: Option<(R, R)>,
) -> Vec<BiasSweepRow<R>> {
    grid.iter()
        .map(|&spec| BiasSweepRow {
            spec,
            estimate: correct(observed, ci_observed, bias_simple(&spec), true)
                .expect("simple bias always supports interval shifting"),
        })
        .collect()
}

/// Cartesian product of per-parameter grids, `lambda` outermost and
/// `d_v` innermost.
pub fn cartesian_grid<R: Real>(
    lambdas: &[R],
    taus: &[R],
    d_us: &[R],
    d_vs: &[R],
) -> Vec<BiasSpecSimple<R>> {
    let mut out = Vec::with_capacity(lambdas.len() * taus.len() * d_us.len() * d_vs.len());
    for &lambda in lambdas {
        for &tau in taus {
            for &d_u in d_us {
                for &d_v in d_vs {
                    out.push(BiasSpecSimple {
                        lambda,
                        tau,
                        d_u,
                        d_v,
                    });
                }
            }
        }
    }
    out
}
