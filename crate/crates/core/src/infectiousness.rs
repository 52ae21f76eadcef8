//! Infectiousness effect in two-person households, with sensitivity
//! analysis for the unidentified post-infection contrast.
//!
//! Setting: index members are randomized (`z1`), second members never
//! treated. Among households whose index would be infected either way
//! (the "doomed" stratum), the infectiousness effect contrasts the second
//! member's infection probability when the index is treated (`p_v`)
//! against untreated (`p_u`). Under the monotonicity assumption that
//! treatment never causes an index infection, `p_v` equals the observed
//! `p1`, but `p_u` is not identified: the observed `p0` mixes the doomed
//! stratum with households whose index was only infected because
//! untreated ("protected", a share `pi_p = 1 - attack1/attack0` of the
//! infected-untreated cell).
//!
//! Three equivalent sensitivity parameterizations pin `p_u` down:
//!
//! * `theta`: `p_u = p0 + theta`, the direct mixture gap;
//! * `gamma`: the protected stratum's infection probability, giving
//!   `p_u = (p0 - gamma * pi_p) / pi_d`;
//! * `beta`: log odds ratio of doomed vs. protected second-member
//!   infection, giving `p_u` as the admissible root of a quadratic.
//!
//! Converters map any of the three to the same `p_u`, and
//! [`monotonicity_bounds`] evaluates the `gamma` endpoints, which bound
//! the effect without further assumptions.

use thiserror::Error;

use crate::data::InfectStudy;
use crate::num::Real;

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("{param} = {value} out of range: admissible interval is [{lo}, {hi}]")]
    OutOfRange {
        param: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("attack0 = 0: no infections among untreated indexes, shares undefined")]
    NoUntreatedInfections,
    #[error("attack1 = 0: no infections among treated indexes, doomed share undefined")]
    NoTreatedInfections,
    #[error(
        "attack1 = {attack1} exceeds attack0 = {attack0}: inconsistent with treatment never causing index infection"
    )]
    AttackOrdering { attack1: f64, attack0: f64 },
    #[error("no admissible root in [0, 1] for beta = {beta}")]
    NoRoot { beta: f64 },
    #[error("solution failed back-substitution: |residual| = {residual:e}")]
    SolveCheck { residual: f64 },
}

/// The unidentified contrast at a fixed sensitivity value: second-member
/// infection probabilities in the doomed stratum, index treated (`p_v`)
/// vs. untreated (`p_u`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectEffect<R> {
    pub p_v: R,
    pub p_u: R,
}

impl<R: Real> InfectEffect<R> {
    pub fn risk_difference(&self) -> R {
        self.p_v - self.p_u
    }

    /// `None` when `p_u = 0`.
    pub fn risk_ratio(&self) -> Option<R> {
        (self.p_u > R::zero()).then(|| self.p_v / self.p_u)
    }

    /// `None` when `p_u = 0` or `p_v = 1`.
    pub fn odds_ratio(&self) -> Option<R> {
        (self.p_u > R::zero() && self.p_v < R::one())
            .then(|| self.p_v * (R::one() - self.p_u) / (self.p_u * (R::one() - self.p_v)))
    }

    /// `1 - risk ratio`; `None` when `p_u = 0`.
    pub fn efficacy(&self) -> Option<R> {
        self.risk_ratio().map(|rr| R::one() - rr)
    }
}

/// Share of the infected-untreated cell that is doomed (`pi_d`) and
/// protected (`pi_p = 1 - pi_d`).
pub fn stratum_shares<R: Real>(study: &InfectStudy<R>) -> Result<(R, R), SensitivityError> {
    if study.attack0 <= R::zero() {
        return Err(SensitivityError::NoUntreatedInfections);
    }
    if study.attack1 <= R::zero() {
        return Err(SensitivityError::NoTreatedInfections);
    }
    if study.attack1 > study.attack0 {
        return Err(SensitivityError::AttackOrdering {
            attack1: study.attack1.as_f64(),
            attack0: study.attack0.as_f64(),
        });
    }
    let pi_d = study.attack1 / study.attack0;
    Ok((pi_d, R::one() - pi_d))
}

/// The contrast read off directly from the two observed cells. Equals the
/// causal effect only in the absence of a protected stratum; under
/// monotonicity it is conservative whenever the protected stratum is at
/// no higher risk than the doomed one.
pub fn crude_effect<R: Real>(study: &InfectStudy<R>) -> InfectEffect<R> {
    InfectEffect {
        p_v: study.p1,
        p_u: study.p0,
    }
}

/// `p_u = p0 + theta`. Admissible while the sum stays a probability.
pub fn theta_adjust<R: Real>(
    study: &InfectStudy<R>,
    theta: R,
) -> Result<InfectEffect<R>, SensitivityError> {
    let p_u = study.p0 + theta;
    if !(R::zero()..=R::one()).contains(&p_u) {
        return Err(SensitivityError::OutOfRange {
            param: "theta",
            value: theta.as_f64(),
            lo: (-study.p0).as_f64(),
            hi: (R::one() - study.p0).as_f64(),
        });
    }
    Ok(InfectEffect {
        p_v: study.p1,
        p_u,
    })
}

/// A risk-difference interval shifted to match `theta_adjust`: with
/// `p_u = p0 + theta`, both limits of the crude interval move by
/// `-theta`. Intervals for the gamma and beta parameterizations are not
/// produced; those sweeps report points only.
pub fn theta_shifted_ci<R: Real>(crude_ci: (R, R), theta: R) -> (R, R) {
    (crude_ci.0 - theta, crude_ci.1 - theta)
}

/// Admissible `gamma` interval `[max(0, (p0 - pi_d)/pi_p), min(1, p0/pi_p)]`.
///
/// Errors when `pi_p = 0`; in that degenerate case every household in the
/// infected-untreated cell is doomed and `p_u = p0` regardless of gamma.
pub fn gamma_range<R: Real>(study: &InfectStudy<R>) -> Result<(R, R), SensitivityError> {
    let (pi_d, pi_p) = stratum_shares(study)?;
    if pi_p <= R::zero() {
        return Ok((R::zero(), R::one()));
    }
    let lo = ((study.p0 - pi_d) / pi_p).max(R::zero());
    let hi = (study.p0 / pi_p).min(R::one());
    Ok((lo, hi))
}

/// `p_u = (p0 - gamma * pi_p) / pi_d` for a postulated protected-stratum
/// infection probability `gamma`.
pub fn gamma_adjust<R: Real>(
    study: &InfectStudy<R>,
    gamma: R,
) -> Result<InfectEffect<R>, SensitivityError> {
    let (pi_d, pi_p) = stratum_shares(study)?;
    if pi_p <= R::zero() {
        return Ok(InfectEffect {
            p_v: study.p1,
            p_u: study.p0,
        });
    }
    let (lo, hi) = gamma_range(study)?;
    let tol = R::of(1e-12);
    if gamma < lo - tol || gamma > hi + tol {
        return Err(SensitivityError::OutOfRange {
            param: "gamma",
            value: gamma.as_f64(),
            lo: lo.as_f64(),
            hi: hi.as_f64(),
        });
    }
    let p_u = ((study.p0 - gamma * pi_p) / pi_d).max(R::zero()).min(R::one());
    Ok(InfectEffect {
        p_v: study.p1,
        p_u,
    })
}

/// Both `gamma` endpoints evaluated; together they bound the effect under
/// monotonicity alone.
#[derive(Debug, Clone, Copy)]
pub struct InfectBounds<R> {
    /// From the lower gamma endpoint: largest `p_u`, hence the smallest
    /// risk difference, risk ratio and odds ratio (and largest efficacy
    /// shortfall).
    pub lower: BoundEndpoint<R>,
    /// From the upper gamma endpoint: smallest `p_u`.
    pub upper: BoundEndpoint<R>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundEndpoint<R> {
    /// The gamma value that produced this endpoint.
    pub gamma: R,
    pub effect: InfectEffect<R>,
}

pub fn monotonicity_bounds<R: Real>(
    study: &InfectStudy<R>,
) -> Result<InfectBounds<R>, SensitivityError> {
    let (lo, hi) = gamma_range(study)?;
    Ok(InfectBounds {
        lower: BoundEndpoint {
            gamma: lo,
            effect: gamma_adjust(study, lo)?,
        },
        upper: BoundEndpoint {
            gamma: hi,
            effect: gamma_adjust(study, hi)?,
        },
    })
}

/// `p_u` for a postulated log odds ratio `beta` of doomed vs. protected
/// second-member infection given an untreated index.
///
/// Eliminating `gamma` from the pair of identities
/// `p_u = gamma * B / (1 + gamma * (B - 1))` (with `B = exp(beta)`) and
/// `p0 = gamma * pi_p + p_u * pi_d` yields
///
/// ```text
/// (B - 1)(1 - V) p_u^2 - [p0 (B - 1) + B (1 - V) + V] p_u + p0 B = 0
/// ```
///
/// with `V = pi_p`. At `B = 1` the equation degenerates to the linear
/// `p_u = p0`, which is the sanity anchor: the admissible root is the one
/// continuous in `B` with that solution. For probabilities strictly
/// inside (0, 1) exactly one root lies in [0, 1]; if rounding ever leaves
/// both roots admissible the root is tracked along a short homotopy in
/// `B` from 1. Every solve is verified by back-substitution into the two
/// identities.
pub fn beta_adjust<R: Real>(
    study: &InfectStudy<R>,
    beta: R,
) -> Result<InfectEffect<R>, SensitivityError> {
    let (_, pi_p) = stratum_shares(study)?;
    let p_u = if pi_p <= R::zero() || beta == R::zero() {
        study.p0
    } else {
        let p_u = solve_beta(study.p0, pi_p, beta)?;
        check_beta_solution(study.p0, pi_p, beta, p_u)?;
        p_u
    };
    Ok(InfectEffect {
        p_v: study.p1,
        p_u,
    })
}

/// Numerically stable real roots of `a x^2 + b x + c = 0`, degenerating
/// to the linear solution when `a = 0`.
fn quadratic_roots<R: Real>(a: R, b: R, c: R) -> Vec<R> {
    if a == R::zero() {
        if b == R::zero() {
            return Vec::new();
        }
        return vec![-c / b];
    }
    let disc = b * b - R::of(4.0) * a * c;
    if disc < R::zero() {
        return Vec::new();
    }
    let sq = disc.sqrt();
    // Avoid cancellation: compute the large-magnitude root first.
    let q = -(b + sq.copysign(b)) * R::of(0.5);
    if q == R::zero() {
        // b = 0 and disc = -4ac >= 0.
        let r = (-c / a).sqrt();
        return vec![r, -r];
    }
    vec![q / a, c / q]
}

fn admissible_root<R: Real>(p0: R, v: R, b_odds: R) -> Vec<R> {
    let a = (b_odds - R::one()) * (R::one() - v);
    let b = -(p0 * (b_odds - R::one()) + b_odds * (R::one() - v) + v);
    let c = p0 * b_odds;
    let tol = R::of(1e-9);
    quadratic_roots(a, b, c)
        .into_iter()
        .filter(|&r| r >= -tol && r <= R::one() + tol)
        .map(|r| r.max(R::zero()).min(R::one()))
        .collect()
}

fn solve_beta<R: Real>(p0: R, pi_p: R, beta: R) -> Result<R, SensitivityError> {
    let b_odds = beta.exp();
    let candidates = admissible_root(p0, pi_p, b_odds);
    match candidates.len() {
        0 => Err(SensitivityError::NoRoot {
            beta: beta.as_f64(),
        }),
        1 => Ok(candidates[0]),
        // Both roots admissible can only happen through rounding at the
        // boundary; walk B in from 1 and keep the branch connected to
        // p_u = p0.
        _ => {
            let mut prev = p0;
            let steps = 64;
            for k in 1..=steps {
                let bk = beta * R::of_usize(k) / R::of_usize(steps);
                let cands = admissible_root(p0, pi_p, bk.exp());
                prev = cands
                    .into_iter()
                    .min_by(|&x, &y| {
                        (x - prev)
                            .abs()
                            .partial_cmp(&(y - prev).abs())
                            .expect("roots are finite")
                    })
                    .ok_or(SensitivityError::NoRoot {
                        beta: beta.as_f64(),
                    })?;
            }
            Ok(prev)
        }
    }
}

fn check_beta_solution<R: Real>(
    p0: R,
    pi_p: R,
    beta: R,
    p_u: R,
) -> Result<(), SensitivityError> {
    let b_odds = beta.exp();
    let gamma = (p0 - p_u * (R::one() - pi_p)) / pi_p;
    let from_odds = gamma * b_odds / (R::one() + gamma * (b_odds - R::one()));
    let mixture = gamma * pi_p + p_u * (R::one() - pi_p);
    let residual = (from_odds - p_u).abs().max((mixture - p0).abs());
    let tol = R::of(1e-10);
    if residual > tol || gamma < -tol || gamma > R::one() + tol {
        return Err(SensitivityError::SolveCheck {
            residual: residual.as_f64(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Converters: any admissible p_u corresponds to one value of each
// sensitivity parameter.

/// The `theta` producing a given `p_u`.
pub fn theta_for_pu<R: Real>(study: &InfectStudy<R>, p_u: R) -> R {
    p_u - study.p0
}

/// The `gamma` producing a given `p_u`. Errors when `pi_p = 0` and
/// `p_u != p0` (no gamma can move the mixture).
pub fn gamma_for_pu<R: Real>(study: &InfectStudy<R>, p_u: R) -> Result<R, SensitivityError> {
    let (pi_d, pi_p) = stratum_shares(study)?;
    if pi_p <= R::zero() {
        return if (p_u - study.p0).abs() <= R::of(1e-12) {
            Ok(R::zero())
        } else {
            Err(SensitivityError::OutOfRange {
                param: "p_u",
                value: p_u.as_f64(),
                lo: study.p0.as_f64(),
                hi: study.p0.as_f64(),
            })
        };
    }
    Ok((study.p0 - p_u * pi_d) / pi_p)
}

/// The `beta` producing a given `p_u`, from the odds ratio of `p_u`
/// against the implied `gamma`. Requires both probabilities strictly
/// inside (0, 1) for finite log odds.
pub fn beta_for_pu<R: Real>(study: &InfectStudy<R>, p_u: R) -> Result<R, SensitivityError> {
    let gamma = gamma_for_pu(study, p_u)?;
    let interior = |x: R| x > R::zero() && x < R::one();
    if !interior(p_u) || !interior(gamma) {
        return Err(SensitivityError::OutOfRange {
            param: "p_u",
            value: p_u.as_f64(),
            lo: 0.0,
            hi: 1.0,
        });
    }
    let odds = |x: R| x / (R::one() - x);
    Ok((odds(p_u) / odds(gamma)).ln())
}

/// Which sensitivity parameterization a value or grid refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensitivityKind {
    Theta,
    Gamma,
    Beta,
}

impl SensitivityKind {
    pub fn name(self) -> &'static str {
        match self {
            SensitivityKind::Theta => "theta",
            SensitivityKind::Gamma => "gamma",
            SensitivityKind::Beta => "beta",
        }
    }
}

/// Dispatch to the adjuster for `kind`.
pub fn adjust<R: Real>(
    study: &InfectStudy<R>,
    kind: SensitivityKind,
    value: R,
) -> Result<InfectEffect<R>, SensitivityError> {
    match kind {
        SensitivityKind::Theta => theta_adjust(study, value),
        SensitivityKind::Gamma => gamma_adjust(study, value),
        SensitivityKind::Beta => beta_adjust(study, value),
    }
}

/// A grid of sensitivity values under one parameterization.
#[derive(Debug, Clone)]
pub struct SensitivitySpec<R> {
    pub kind: SensitivityKind,
    pub grid: Vec<R>,
}

/// One sweep row. Out-of-range grid points are kept with
/// `effect = None` rather than aborting the sweep.
#[derive(Debug, Clone)]
pub struct SweepRow<R> {
    pub kind: SensitivityKind,
    pub param: R,
    pub effect: Option<InfectEffect<R>>,
}

impl<R> SweepRow<R> {
    pub fn in_range(&self) -> bool {
        self.effect.is_some()
    }
}

/// Evaluates the grid in order. Range violations are recorded per row;
/// any other failure (degenerate study, solver breakdown) aborts.
pub fn sweep<R: Real>(
    study: &InfectStudy<R>,
    spec: &SensitivitySpec<R>,
) -> Result<Vec<SweepRow<R>>, SensitivityError> {
    let mut rows = Vec::with_capacity(spec.grid.len());
    for &param in &spec.grid {
        let effect = match adjust(study, spec.kind, param) {
            Ok(e) => Some(e),
            Err(SensitivityError::OutOfRange { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(SweepRow {
            kind: spec.kind,
            param,
            effect,
        });
    }
    Ok(rows)
}
