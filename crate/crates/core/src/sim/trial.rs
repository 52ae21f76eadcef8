//! Two-stage trial worlds with count-dependent potential outcomes.
//!
//! Outcomes are fixed functions of own treatment and the number of
//! treated peers, so the strategy averages reduce to finite sums over
//! that count and every estimand is exact. Two weighting conventions
//! are computed side by side: `Conditional` weights the peer count by
//! its distribution given own assignment (the convention behind the
//! group-randomized estimators), `Unconditional` by its marginal
//! distribution. They coincide under Bernoulli allocation, where own
//! assignment carries no information about the peers, and differ under
//! fixed-count allocation.

use rand::Rng;

use crate::data::{GroupSummary, TrialTable};
use crate::num::Real;
use crate::rng::{draw_bool, keyed_rng};

use super::SimError;

/// Largest group size for which the exact count sums are evaluated.
const GROUP_SIZE_CAP: usize = 10_000;

/// Stream id for the first-stage (group label) assignment, separate
/// from the per-group streams.
const ASSIGN_STREAM: u64 = 1 << 63;

/// One member's potential outcome as a function of (own treatment,
/// number of treated peers).
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeRule<R> {
    /// `base + own * z + peers * count`.
    Linear { base: R, own: R, peers: R },
    /// Explicit values, one per possible count of treated peers.
    Table {
        when_treated: Vec<R>,
        when_control: Vec<R>,
    },
}

impl<R: Real> OutcomeRule<R> {
    pub fn value(&self, z: bool, count: usize) -> R {
        match self {
            OutcomeRule::Linear { base, own, peers } => {
                let zr = if z { R::one() } else { R::zero() };
                *base + *own * zr + *peers * R::of_usize(count)
            }
            OutcomeRule::Table {
                when_treated,
                when_control,
            } => {
                if z {
                    when_treated[count]
                } else {
                    when_control[count]
                }
            }
        }
    }
}

/// A group: one outcome rule per member.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialGroup<R> {
    pub rules: Vec<OutcomeRule<R>>,
}

/// A fixed population of groups. Build through [`TrialWorld::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialWorld<R> {
    pub groups: Vec<TrialGroup<R>>,
}

impl<R: Real> TrialWorld<R> {
    pub fn new(groups: Vec<TrialGroup<R>>) -> Result<Self, SimError> {
        for (index, g) in groups.iter().enumerate() {
            let size = g.rules.len();
            if size < 2 {
                return Err(SimError::GroupTooSmall { index, size });
            }
            if size > GROUP_SIZE_CAP {
                return Err(SimError::GroupTooLarge {
                    index,
                    size,
                    cap: GROUP_SIZE_CAP,
                });
            }
            for (member, rule) in g.rules.iter().enumerate() {
                if let OutcomeRule::Table {
                    when_treated,
                    when_control,
                } = rule
                {
                    for t in [when_treated, when_control] {
                        if t.len() != size {
                            return Err(SimError::TableLength {
                                group: index,
                                member,
                                got: t.len(),
                                want: size,
                            });
                        }
                    }
                }
            }
        }
        Ok(TrialWorld { groups })
    }

    /// A world where every member of every group shares one rule.
    pub fn uniform(n_groups: usize, size: usize, rule: OutcomeRule<R>) -> Result<Self, SimError> {
        Self::new(vec![
            TrialGroup {
                rules: vec![rule; size],
            };
            n_groups
        ])
    }
}

/// Within-group treatment allocation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Allocation<R> {
    /// Exactly `treated` members treated, chosen uniformly.
    Mixed { treated: usize },
    /// Independent per-member coin flips.
    Bernoulli { p: R },
}

impl<R: Real> Allocation<R> {
    fn check(&self, group_size: usize) -> Result<(), SimError> {
        match *self {
            Allocation::Mixed { treated } => {
                if treated == 0 || treated >= group_size {
                    Err(SimError::DegenerateAllocation {
                        treated,
                        size: group_size,
                    })
                } else {
                    Ok(())
                }
            }
            Allocation::Bernoulli { p } => {
                if p > R::zero() && p < R::one() {
                    Ok(())
                } else {
                    Err(SimError::NotProbability {
                        name: "allocation p",
                        value: p.as_f64(),
                    })
                }
            }
        }
    }

    fn treat_prob(&self, group_size: usize) -> R {
        match *self {
            Allocation::Mixed { treated } => R::of_usize(treated) / R::of_usize(group_size),
            Allocation::Bernoulli { p } => p,
        }
    }

    /// Distribution of the number of treated peers for one member of a
    /// `group_size` group, given own assignment `z` (conditional) or
    /// marginally (unconditional). Length `group_size`.
    fn peer_count_weights(
        &self,
        group_size: usize,
        z: bool,
        weighting: Weighting,
    ) -> Vec<R> {
        let m = group_size - 1;
        match *self {
            Allocation::Bernoulli { p } => binomial_pmf(m, p),
            Allocation::Mixed { treated } => {
                let mut w = vec![R::zero(); group_size];
                match weighting {
                    Weighting::Conditional => {
                        // The total is fixed, so the peer count is
                        // determined by own assignment.
                        w[treated - usize::from(z)] = R::one();
                    }
                    Weighting::Unconditional => {
                        let n = R::of_usize(group_size);
                        w[treated - 1] = R::of_usize(treated) / n;
                        w[treated] = R::of_usize(group_size - treated) / n;
                    }
                }
                w
            }
        }
    }
}

/// How strategy averages weight the peer-count distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// Peer count weighted by its law given own assignment.
    Conditional,
    /// Peer count weighted by its marginal law.
    Unconditional,
}

/// `Binomial(m, p)` as a dense vector, computed through log space so
/// large `m` does not underflow near the mode (far tails flush to zero,
/// which the weighted sums tolerate).
fn binomial_pmf<R: Real>(m: usize, p: R) -> Vec<R> {
    let lp = p.ln();
    let lq = (R::one() - p).ln();
    let mut log_w = R::of_usize(m) * lq;
    let mut out = Vec::with_capacity(m + 1);
    out.push(log_w.exp());
    for c in 0..m {
        log_w = log_w + (R::of_usize(m - c) / R::of_usize(c + 1)).ln() + lp - lq;
        out.push(log_w.exp());
    }
    out
}

/// Population averages under one strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyMeans<R> {
    /// Average potential outcome when treated, `Ybar(1; strategy)`.
    pub treated: R,
    /// Average potential outcome when untreated, `Ybar(0; strategy)`.
    pub control: R,
    /// Marginal average, `Ybar(strategy)`.
    pub marginal: R,
}

/// Exact estimands for a (phi, psi) strategy pair, in the reduction
/// convention used by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTruth<R> {
    pub phi: StrategyMeans<R>,
    pub psi: StrategyMeans<R>,
    /// `Ybar(0; psi) - Ybar(1; psi)`.
    pub direct_psi: R,
    /// `Ybar(0; phi) - Ybar(1; phi)`.
    pub direct_phi: R,
    /// `Ybar(0; phi) - Ybar(0; psi)`.
    pub indirect: R,
    /// `Ybar(0; phi) - Ybar(1; psi)`.
    pub total: R,
    /// `Ybar(phi) - Ybar(psi)`.
    pub overall: R,
}

/// The same estimands under both weighting conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialTruthPair<R> {
    pub conditional: TrialTruth<R>,
    pub unconditional: TrialTruth<R>,
}

fn strategy_means<R: Real>(
    world: &TrialWorld<R>,
    alloc: &Allocation<R>,
    weighting: Weighting,
) -> StrategyMeans<R> {
    let mut treated = R::zero();
    let mut control = R::zero();
    let mut marginal = R::zero();
    for g in &world.groups {
        let n = g.rules.len();
        let w1 = alloc.peer_count_weights(n, true, weighting);
        let w0 = alloc.peer_count_weights(n, false, weighting);
        let p = alloc.treat_prob(n);
        let mut g1 = R::zero();
        let mut g0 = R::zero();
        for rule in &g.rules {
            let y1: R = w1
                .iter()
                .enumerate()
                .map(|(c, &w)| w * rule.value(true, c))
                .sum();
            let y0: R = w0
                .iter()
                .enumerate()
                .map(|(c, &w)| w * rule.value(false, c))
                .sum();
            g1 += y1;
            g0 += y0;
        }
        let rn = R::of_usize(n);
        g1 /= rn;
        g0 /= rn;
        treated += g1;
        control += g0;
        marginal += p * g1 + (R::one() - p) * g0;
    }
    let k = R::of_usize(world.groups.len());
    StrategyMeans {
        treated: treated / k,
        control: control / k,
        marginal: marginal / k,
    }
}

fn truth_for<R: Real>(
    world: &TrialWorld<R>,
    phi: &Allocation<R>,
    psi: &Allocation<R>,
    weighting: Weighting,
) -> TrialTruth<R> {
    let mphi = strategy_means(world, phi, weighting);
    let mpsi = strategy_means(world, psi, weighting);
    TrialTruth {
        phi: mphi,
        psi: mpsi,
        direct_psi: mpsi.control - mpsi.treated,
        direct_phi: mphi.control - mphi.treated,
        indirect: mphi.control - mpsi.control,
        total: mphi.control - mpsi.treated,
        overall: mphi.marginal - mpsi.marginal,
    }
}

/// Exact strategy-pair estimands under both weighting conventions.
pub fn true_trial_effects<R: Real>(
    world: &TrialWorld<R>,
    phi: &Allocation<R>,
    psi: &Allocation<R>,
) -> Result<TrialTruthPair<R>, SimError> {
    for g in &world.groups {
        phi.check(g.rules.len())?;
        psi.check(g.rules.len())?;
    }
    Ok(TrialTruthPair {
        conditional: truth_for(world, phi, psi, Weighting::Conditional),
        unconditional: truth_for(world, phi, psi, Weighting::Unconditional),
    })
}

/// The two-stage design: which strategies are compared, their table
/// labels, and how many groups the first stage assigns to psi.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDesign<R> {
    pub phi: Allocation<R>,
    pub psi: Allocation<R>,
    pub phi_label: String,
    pub psi_label: String,
    pub n_psi: usize,
}

/// Runs the two-stage experiment once: groups are randomized to
/// strategies, members to treatment, and the (necessarily 0/1) rule
/// values are tallied into arm counts. Group `i`'s draws depend only on
/// (seed, i), and the first stage has its own stream.
pub fn simulate_trial<R: Real>(
    world: &TrialWorld<R>,
    design: &TrialDesign<R>,
    seed: u64,
) -> Result<TrialTable, SimError> {
    let n_groups = world.groups.len();
    if design.n_psi == 0 || design.n_psi >= n_groups {
        return Err(SimError::DegenerateFirstStage {
            n_psi: design.n_psi,
            n_groups,
        });
    }
    if design.phi_label == design.psi_label {
        return Err(SimError::DuplicateLabel {
            label: design.phi_label.clone(),
        });
    }
    for g in &world.groups {
        design.phi.check(g.rules.len())?;
        design.psi.check(g.rules.len())?;
    }

    // First stage: draw which groups follow psi.
    let mut order: Vec<usize> = (0..n_groups).collect();
    let mut rng = keyed_rng(seed, ASSIGN_STREAM);
    for i in 0..design.n_psi {
        let j = rng.random_range(i..n_groups);
        order.swap(i, j);
    }
    let mut is_psi = vec![false; n_groups];
    for &i in &order[..design.n_psi] {
        is_psi[i] = true;
    }

    let mut rows = Vec::with_capacity(n_groups);
    for (i, g) in world.groups.iter().enumerate() {
        let n = g.rules.len();
        let alloc = if is_psi[i] { &design.psi } else { &design.phi };
        let mut rng = keyed_rng(seed, i as u64);
        let z = match *alloc {
            Allocation::Mixed { treated } => {
                let mut slots: Vec<usize> = (0..n).collect();
                for t in 0..treated {
                    let j = rng.random_range(t..n);
                    slots.swap(t, j);
                }
                let mut z = vec![false; n];
                for &s in &slots[..treated] {
                    z[s] = true;
                }
                z
            }
            Allocation::Bernoulli { p } => (0..n).map(|_| draw_bool(&mut rng, p)).collect(),
        };
        let total: usize = z.iter().filter(|&&b| b).count();
        let mut summary = GroupSummary {
            group_id: format!("g{}", i + 1),
            assignment: if is_psi[i] {
                design.psi_label.clone()
            } else {
                design.phi_label.clone()
            },
            n_treated: 0,
            cases_treated: 0,
            n_control: 0,
            cases_control: 0,
        };
        for (j, rule) in g.rules.iter().enumerate() {
            let count = total - usize::from(z[j]);
            let y = rule.value(z[j], count);
            let case = if y == R::zero() {
                false
            } else if y == R::one() {
                true
            } else {
                return Err(SimError::NonBinaryOutcome {
                    z: u8::from(z[j]),
                    count,
                    value: y.as_f64(),
                });
            };
            if z[j] {
                summary.n_treated += 1;
                summary.cases_treated += u64::from(case);
            } else {
                summary.n_control += 1;
                summary.cases_control += u64::from(case);
            }
        }
        rows.push(summary);
    }
    Ok(TrialTable::new(rows).expect("case counts bounded by arm sizes"))
}
