//! Two-person household worlds built from principal strata.
//!
//! The index member is randomized 1:1; the second member is never
//! treated. Each household belongs to one stratum describing the index
//! member's infection response: doomed (infected either way), protected
//! (infected only if untreated), or immune (never infected). Because no
//! "harmed" stratum exists, treated-index infections are a subset of
//! untreated-index infections by construction. Second-member risk
//! depends on the stratum and the index's treatment, which makes the
//! naive infectiousness contrast and its selection-adjusted versions
//! all available in closed form.

use rand::Rng;

use crate::data::HouseholdRecord;
use crate::num::Real;
use crate::rng::{draw_bool, keyed_rng};

use super::{check_probability, SimError};

/// Stratum masses and per-stratum second-member risks. Build through
/// [`HouseholdWorld::new`], which checks the probability constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HouseholdWorld<R> {
    /// Index infected under either assignment.
    pub doomed: R,
    /// Index infected only when untreated.
    pub protected: R,
    /// Index never infected.
    pub immune: R,
    /// P(second infected | doomed, index treated).
    pub q_doomed_v: R,
    /// P(second infected | doomed, index untreated).
    pub q_doomed_u: R,
    /// P(second infected | protected, index untreated).
    pub q_protected_u: R,
    /// P(second infected | index uninfected). Realism only: no estimand
    /// in this crate conditions on that cell.
    pub q_baseline: R,
}

/// Closed-form quantities implied by a household world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HouseholdTruth<R> {
    /// Second-member risk in the doomed stratum, index treated.
    pub p_v: R,
    /// Second-member risk in the doomed stratum, index untreated.
    pub p_u: R,
    /// Observable: risk given (index treated, index infected). Equals
    /// `p_v` because only the doomed are infected when treated.
    pub p1: R,
    /// Observable: risk given (index untreated, index infected). A
    /// mixture of doomed and protected households, hence the selection
    /// problem.
    pub p0: R,
    /// Index attack rate, treated arm.
    pub attack1: R,
    /// Index attack rate, untreated arm.
    pub attack0: R,
    /// Doomed share of untreated-index infections.
    pub pi_d: R,
    /// Protected share of untreated-index infections.
    pub pi_p: R,
    /// Additive selection shift `p_u - p0`.
    pub theta: R,
    /// Second-member risk among the protected, `q_protected_u`.
    pub gamma: R,
    /// Log odds ratio of second-member risk, doomed vs protected, both
    /// with untreated index. Saturates at +-infinity when a risk sits on
    /// the probability boundary.
    pub beta: R,
}

impl<R: Real> HouseholdWorld<R> {
    pub fn new(
        strata: (R, R, R),
        q_doomed_v: R,
        q_doomed_u: R,
        q_protected_u: R,
        q_baseline: R,
    ) -> Result<Self, SimError> {
        let (doomed, protected, immune) = strata;
        check_probability("doomed", doomed)?;
        check_probability("protected", protected)?;
        check_probability("immune", immune)?;
        let total = doomed + protected + immune;
        if (total - R::one()).abs().as_f64() > 1e-12 {
            return Err(SimError::NotNormalized {
                name: "stratum probabilities",
                total: total.as_f64(),
            });
        }
        check_probability("q_doomed_v", q_doomed_v)?;
        check_probability("q_doomed_u", q_doomed_u)?;
        check_probability("q_protected_u", q_protected_u)?;
        check_probability("q_baseline", q_baseline)?;
        Ok(HouseholdWorld {
            doomed,
            protected,
            immune,
            q_doomed_v,
            q_doomed_u,
            q_protected_u,
            q_baseline,
        })
    }

    /// Evaluates every closed-form quantity. Fails when the doomed
    /// stratum is empty: the contrast conditions on treated-and-infected
    /// indexes, and only the doomed can be both.
    pub fn truth(&self) -> Result<HouseholdTruth<R>, SimError> {
        if self.doomed <= R::zero() {
            return Err(SimError::EmptyEvent {
                event: "(z1=1, y1=1)".into(),
            });
        }
        let attack1 = self.doomed;
        let attack0 = self.doomed + self.protected;
        let pi_d = self.doomed / attack0;
        let pi_p = self.protected / attack0;
        let p0 = pi_d * self.q_doomed_u + pi_p * self.q_protected_u;
        let odds = |p: R| p / (R::one() - p);
        Ok(HouseholdTruth {
            p_v: self.q_doomed_v,
            p_u: self.q_doomed_u,
            p1: self.q_doomed_v,
            p0,
            attack1,
            attack0,
            pi_d,
            pi_p,
            theta: self.q_doomed_u - p0,
            gamma: self.q_protected_u,
            beta: (odds(self.q_doomed_u) / odds(self.q_protected_u)).ln(),
        })
    }

    /// Whether untreated-index infections are riskier for the second
    /// member than the doomed stratum alone, i.e. `p0 <= p_u`. Read off
    /// the mixture weights: it holds exactly when the protected stratum
    /// is no riskier than the doomed one (or is empty). On such worlds
    /// the naive contrast understates the protective effect.
    pub fn selection_is_conservative(&self) -> bool {
        self.protected <= R::zero() || self.q_protected_u <= self.q_doomed_u
    }
}

/// Draws `n` households i.i.d. from the world, index treatment assigned
/// 1:1. Deterministic given the seed, and household `i`'s draws do not
/// depend on any other household.
pub fn simulate_households<R: Real>(
    world: &HouseholdWorld<R>,
    n: usize,
    seed: u64,
) -> Vec<HouseholdRecord> {
    let half = R::of(0.5);
    (0..n)
        .map(|i| {
            let mut rng = keyed_rng(seed, i as u64);
            let z1 = draw_bool(&mut rng, half);
            let x = rng.random::<f64>();
            let (doomed, protected) = (world.doomed.as_f64(), world.protected.as_f64());
            let (is_doomed, is_protected) = if x < doomed {
                (true, false)
            } else if x < doomed + protected {
                (false, true)
            } else {
                (false, false)
            };
            let y1 = is_doomed || (is_protected && !z1);
            let q = if y1 {
                if is_doomed {
                    if z1 {
                        world.q_doomed_v
                    } else {
                        world.q_doomed_u
                    }
                } else {
                    world.q_protected_u
                }
            } else {
                world.q_baseline
            };
            let y2 = draw_bool(&mut rng, q);
            HouseholdRecord {
                household_id: format!("h{}", i + 1),
                z1,
                y1,
                y2,
            }
        })
        .collect()
}
