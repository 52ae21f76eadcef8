//! The observed-data conditional mean implied by a selection model: the
//! fitted contrasts plus the delta terms, centered against the treatment
//! law. The centering over the others' treatment vectors is computed two
//! ways: an exact collapse over the distribution of the treated count
//! (the working route, valid because `g` depends on the vector only
//! through its count) and raw enumeration of `{0,1}^(n-1)` (the
//! cross-check, capped at small clusters).

use std::collections::BTreeMap;

use crate::data::{features_for_cluster, Cluster, SummaryKind};
use crate::num::{expit, Real};

use super::{DeltaPair, SelectionError, SelectionModel, SelectionParams};

/// Largest cluster size for which raw enumeration is attempted.
pub const ENUMERATION_CAP: usize = 20;

/// A fitted treatment law, the output of `fit_propensity`.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedPropensity<R> {
    Logistic {
        terms: Vec<super::PropTerm>,
        alpha: Vec<R>,
        iterations: usize,
        /// Euclidean norm of the score at the solution.
        gradient_norm: R,
    },
    ExchangeableCount {
        /// Per cluster size, the fitted distribution of the treated
        /// count (length size + 1).
        by_size: BTreeMap<usize, Vec<R>>,
    },
}

impl<R: Real> FittedPropensity<R> {
    /// `P(z = 1 | l)` under the per-individual form; `None` for the
    /// exchangeable form, where no individual probability exists.
    pub fn individual_prob(&self, l: &[R]) -> Option<R> {
        match self {
            FittedPropensity::Logistic { terms, alpha, .. } => {
                let x: R = terms.iter().zip(alpha).map(|(t, &a)| a * t.value(l)).sum();
                Some(expit(x))
            }
            FittedPropensity::ExchangeableCount { .. } => None,
        }
    }

    /// The centering inputs for one member: the conditional probability
    /// of own treatment given the observed exposure, and the law of the
    /// others' treated count.
    pub(crate) fn member_context(
        &self,
        cluster: &Cluster<R>,
        member: usize,
    ) -> Result<MemberContext<R>, SelectionError> {
        let n = cluster.members.len();
        match self {
            FittedPropensity::Logistic { .. } => {
                let probs: Vec<R> = cluster
                    .members
                    .iter()
                    .map(|m| self.individual_prob(&m.l).expect("logistic form"))
                    .collect();
                let others: Vec<R> = probs
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != member)
                    .map(|(_, &p)| p)
                    .collect();
                Ok(MemberContext {
                    own_prob: probs[member],
                    count_dist: count_distribution(&others),
                })
            }
            FittedPropensity::ExchangeableCount { by_size } => {
                let pmf = by_size
                    .get(&n)
                    .ok_or(SelectionError::UnseenClusterSize { size: n })?;
                let s_obs = cluster
                    .members
                    .iter()
                    .enumerate()
                    .filter(|&(k, m)| k != member && m.z)
                    .count();
                // P(own = 1, others = s) = P(T = s+1) (s+1)/n under
                // exchangeability; own_prob conditions on the observed
                // others' count.
                let rn = R::of_usize(n);
                let with = pmf[s_obs + 1] * R::of_usize(s_obs + 1) / rn;
                let without = pmf[s_obs] * R::of_usize(n - s_obs) / rn;
                let own_prob = if with + without > R::zero() {
                    with / (with + without)
                } else {
                    // The observed configuration has probability zero
                    // under the fitted law (possible only when the law
                    // was fitted elsewhere); fall back to the marginal.
                    pmf.iter()
                        .enumerate()
                        .map(|(t, &p)| p * R::of_usize(t))
                        .sum::<R>()
                        / rn
                };
                let count_dist = (0..n)
                    .map(|c| {
                        pmf[c + 1] * R::of_usize(c + 1) / rn
                            + pmf[c] * R::of_usize(n - c) / rn
                    })
                    .collect();
                Ok(MemberContext {
                    own_prob,
                    count_dist,
                })
            }
        }
    }
}

pub(crate) struct MemberContext<R> {
    /// `f(z = 1 | g, l, h)` at the member's observed exposure.
    pub own_prob: R,
    /// `P(others' treated count = c | l, h)` for `c = 0 .. n-1`.
    pub count_dist: Vec<R>,
}

/// Distribution of a sum of independent non-identical Bernoulli draws,
/// as a vector indexed by the count. Exact convolution, O(n^2).
pub fn count_distribution<R: Real>(probs: &[R]) -> Vec<R> {
    let mut pmf = vec![R::one()];
    for &p in probs {
        let mut next = vec![R::zero(); pmf.len() + 1];
        for (c, &w) in pmf.iter().enumerate() {
            next[c] += w * (R::one() - p);
            next[c + 1] += w * p;
        }
        pmf = next;
    }
    pmf
}

fn count_to_g<R: Real>(kind: SummaryKind, count: usize, n_others: usize) -> R {
    match kind {
        SummaryKind::CountOfOthers => R::of_usize(count),
        SummaryKind::MeanOfOthers => R::of_usize(count) / R::of_usize(n_others),
        SummaryKind::Identity => unreachable!("rejected before dispatch"),
    }
}

/// Both delta terms and their centering corrections, as one additive
/// offset to the fitted contrasts. The own-treatment centering sum has
/// two terms of which the reference one vanishes; the others'-vector
/// centering collapses over the count distribution.
pub(crate) fn delta_offset<R: Real>(
    delta: &DeltaPair<R>,
    g_kind: SummaryKind,
    z: R,
    g: R,
    l: &[R],
    ctx: &MemberContext<R>,
) -> R {
    let n_others = ctx.count_dist.len() - 1;
    let direct = delta.direct.value(z, g) - ctx.own_prob * delta.direct.value(R::one(), g);
    let mut spill_center = R::zero();
    for (c, &p) in ctx.count_dist.iter().enumerate() {
        spill_center += p * delta.spill.value(count_to_g(g_kind, c, n_others), l);
    }
    direct + delta.spill.value(g, l) - spill_center
}

fn scalar_g<R: Real>(
    model: &SelectionModel<R>,
    row: &crate::data::FeatureRow<R>,
) -> Result<R, SelectionError> {
    row.g_scalar().ok_or(SelectionError::NonScalarSummary {
        got: model.g_summary.name(),
    })
}

/// `E[Y | z, g, l, h]` for one member of one cluster under the model,
/// with the others'-vector centering collapsed over the count law.
pub fn reparameterized_mean<R: Real>(
    model: &SelectionModel<R>,
    params: &SelectionParams<R>,
    propensity: &FittedPropensity<R>,
    cluster: &Cluster<R>,
    member: usize,
) -> Result<R, SelectionError> {
    let rows = features_for_cluster(0, cluster, model.g_summary, model.h_summary)?;
    let row = &rows[member];
    model.validate(row.l.len(), row.h.len())?;
    let g = scalar_g(model, row)?;
    let z = if row.z { R::one() } else { R::zero() };
    let ctx = propensity.member_context(cluster, member)?;
    Ok(structural_mean(model, params, z, g, &row.l, &row.h)
        + delta_offset(&model.delta, model.g_summary, z, g, &row.l, &ctx))
}

fn structural_mean<R: Real>(
    model: &SelectionModel<R>,
    params: &SelectionParams<R>,
    z: R,
    g: R,
    l: &[R],
    h: &[R],
) -> R {
    model.gamma_d(&params.psi_d, z, g, l, h)
        + model.gamma_s(&params.psi_s, g, l, h)
        + model.q(&params.eta, l, h)
}

/// Same quantity with the others'-vector centering computed by raw
/// enumeration of the `2^(n-1)` treatment vectors. Exists as the
/// brute-force cross-check for the collapsed route; errors on clusters
/// above [`ENUMERATION_CAP`].
pub fn reparameterized_mean_enumerated<R: Real>(
    model: &SelectionModel<R>,
    params: &SelectionParams<R>,
    propensity: &FittedPropensity<R>,
    cluster: &Cluster<R>,
    member: usize,
) -> Result<R, SelectionError> {
    let n = cluster.members.len();
    if n > ENUMERATION_CAP {
        return Err(SelectionError::ClusterTooLarge {
            cluster_id: cluster.cluster_id.clone(),
            size: n,
            cap: ENUMERATION_CAP,
        });
    }
    let rows = features_for_cluster(0, cluster, model.g_summary, model.h_summary)?;
    let row = &rows[member];
    model.validate(row.l.len(), row.h.len())?;
    let g = scalar_g(model, row)?;
    let z = if row.z { R::one() } else { R::zero() };
    let ctx = propensity.member_context(cluster, member)?;

    // Weight of one others'-vector under the fitted law.
    let n_others = n - 1;
    let others_probs: Vec<R> = match propensity {
        FittedPropensity::Logistic { .. } => cluster
            .members
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != member)
            .map(|(_, m)| propensity.individual_prob(&m.l).expect("logistic form"))
            .collect(),
        FittedPropensity::ExchangeableCount { .. } => Vec::new(),
    };
    let vector_weight = |mask: usize| -> R {
        match propensity {
            FittedPropensity::Logistic { .. } => {
                let mut w = R::one();
                for (k, &p) in others_probs.iter().enumerate() {
                    w *= if mask >> k & 1 == 1 { p } else { R::one() - p };
                }
                w
            }
            FittedPropensity::ExchangeableCount { by_size } => {
                let pmf = &by_size[&n];
                let s = (mask as u32).count_ones() as usize;
                pmf[s + 1] / R::of(binomial(n, s + 1)) + pmf[s] / R::of(binomial(n, s))
            }
        }
    };

    let mut spill_center = R::zero();
    for mask in 0..(1usize << n_others) {
        let count = (mask as u32).count_ones() as usize;
        let g_star = count_to_g(model.g_summary, count, n_others);
        spill_center += vector_weight(mask) * model.delta.spill.value(g_star, &row.l);
    }

    let direct = model.delta.direct.value(z, g)
        - ctx.own_prob * model.delta.direct.value(R::one(), g);
    Ok(structural_mean(model, params, z, g, &row.l, &row.h)
        + direct
        + model.delta.spill.value(g, &row.l)
        - spill_center)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::super::{DirectDelta, PropTerm, SpillDelta};
    use super::*;
    use crate::data::ClusterMember;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cluster(pattern: &[(bool, f64)]) -> Cluster<f64> {
        Cluster {
            cluster_id: "c1".into(),
            members: pattern
                .iter()
                .enumerate()
                .map(|(i, &(z, l))| ClusterMember {
                    individual_id: format!("m{i}"),
                    z,
                    y: 0.0,
                    l: vec![l],
                })
                .collect(),
        }
    }

    fn logistic(alpha: Vec<f64>) -> FittedPropensity<f64> {
        FittedPropensity::Logistic {
            terms: vec![PropTerm::One, PropTerm::L(0)],
            alpha,
            iterations: 0,
            gradient_norm: 0.0,
        }
    }

    fn zero_params(model: &SelectionModel<f64>) -> SelectionParams<f64> {
        SelectionParams {
            psi_d: vec![0.0; model.direct_terms.len()],
            psi_s: vec![0.0; model.spill_terms.len()],
            eta: vec![0.0; model.baseline_terms.len()],
        }
    }

    #[test]
    fn count_distribution_matches_binomial() {
        let p = 0.3f64;
        let pmf = count_distribution(&[p; 5]);
        for (c, &got) in pmf.iter().enumerate() {
            let want = binomial(5, c) * p.powi(c as i32) * (1.0 - p).powi(5 - c as i32);
            assert!((got - want).abs() < 1e-15, "count {c}");
        }
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn count_distribution_heterogeneous() {
        let pmf = count_distribution(&[0.2f64, 0.7]);
        assert!((pmf[0] - 0.8 * 0.3).abs() < 1e-15);
        assert!((pmf[1] - (0.2 * 0.3 + 0.8 * 0.7)).abs() < 1e-15);
        assert!((pmf[2] - 0.2 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn two_person_centering_arithmetic() {
        // Intercept-only law with alpha = 0: f(z=1|l) = 1/2. With all
        // structural parameters zero and delta_d = lambda z, the mean is
        // +lambda/2 for a treated member and -lambda/2 for a control.
        let lambda = 0.8;
        let mut model = SelectionModel::standard(1, DeltaPair::zero());
        model.delta.direct = DirectDelta::Scaled { lambda };
        model.propensity = PropensityForm::Logistic(vec![PropTerm::One]);
        let fitted = FittedPropensity::Logistic {
            terms: vec![PropTerm::One],
            alpha: vec![0.0],
            iterations: 0,
            gradient_norm: 0.0,
        };
        let c = cluster(&[(true, 0.0), (false, 1.0)]);
        let params = zero_params(&model);
        let m_treated = reparameterized_mean(&model, &params, &fitted, &c, 0).unwrap();
        let m_control = reparameterized_mean(&model, &params, &fitted, &c, 1).unwrap();
        assert!((m_treated - lambda / 2.0).abs() < 1e-15);
        assert!((m_control + lambda / 2.0).abs() < 1e-15);
    }

    use super::super::PropensityForm;

    #[test]
    fn zero_delta_leaves_structural_mean() {
        let model = SelectionModel::standard(1, DeltaPair::zero());
        let params = SelectionParams {
            psi_d: vec![1.5, -0.5],
            psi_s: vec![0.7],
            eta: vec![0.2, 0.3, -0.1],
        };
        let fitted = logistic(vec![-0.3, 0.9]);
        let c = cluster(&[(true, 1.0), (false, 0.0), (true, 1.0)]);
        for member in 0..3 {
            let got = reparameterized_mean(&model, &params, &fitted, &c, member).unwrap();
            let rows = features_for_cluster(0, &c, model.g_summary, model.h_summary).unwrap();
            let row = &rows[member];
            let z = if row.z { 1.0 } else { 0.0 };
            let g = row.g_scalar().unwrap();
            let want = params.psi_d[0] * z
                + params.psi_d[1] * z * g
                + params.psi_s[0] * g
                + params.eta[0]
                + params.eta[1] * row.l[0]
                + params.eta[2] * row.h[0];
            assert!((got - want).abs() < 1e-15);
        }
    }

    fn random_delta(rng: &mut ChaCha8Rng) -> DeltaPair<f64> {
        let direct = match rng.random_range(0..3) {
            0 => DirectDelta::Zero,
            1 => DirectDelta::Scaled {
                lambda: rng.random_range(-1.0..1.0),
            },
            _ => DirectDelta::GInteraction {
                lambda1: rng.random_range(-1.0..1.0),
                lambda2: rng.random_range(-1.0..1.0),
            },
        };
        let spill = match rng.random_range(0..3) {
            0 => SpillDelta::Zero,
            1 => SpillDelta::Scaled {
                lambda: rng.random_range(-1.0..1.0),
            },
            _ => SpillDelta::CovariateInteraction {
                lambda1: rng.random_range(-1.0..1.0),
                lambda2: rng.random_range(-1.0..1.0),
                covariate: 0,
            },
        };
        DeltaPair { direct, spill }
    }

    fn random_cluster(rng: &mut ChaCha8Rng, n: usize) -> Cluster<f64> {
        cluster(
            &(0..n)
                .map(|_| (rng.random::<f64>() < 0.5, rng.random_range(-1.0..1.0)))
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn collapse_agrees_with_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..60 {
            let n = rng.random_range(2..8);
            let c = random_cluster(&mut rng, n);
            let mut model = SelectionModel::standard(1, random_delta(&mut rng));
            if trial % 2 == 0 {
                model.g_summary = SummaryKind::MeanOfOthers;
            }
            let params = SelectionParams {
                psi_d: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                psi_s: vec![rng.random_range(-1.0..1.0)],
                eta: vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            };
            let fitted = if trial % 3 == 0 {
                let mut pmf = vec![0.0; n + 1];
                let raw: Vec<f64> = (0..=n).map(|_| rng.random_range(0.05..1.0)).collect();
                let tot: f64 = raw.iter().sum();
                for (p, r) in pmf.iter_mut().zip(raw) {
                    *p = r / tot;
                }
                FittedPropensity::ExchangeableCount {
                    by_size: BTreeMap::from([(n, pmf)]),
                }
            } else {
                logistic(vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ])
            };
            for member in 0..n {
                let fast = reparameterized_mean(&model, &params, &fitted, &c, member).unwrap();
                let slow =
                    reparameterized_mean_enumerated(&model, &params, &fitted, &c, member)
                        .unwrap();
                assert!(
                    (fast - slow).abs() < 1e-12,
                    "trial {trial} member {member}: {fast} vs {slow}"
                );
            }
        }
    }

    #[test]
    fn regression_contrast_gap_is_the_direct_delta() {
        // E[Y|z=1,g,l,h] - E[Y|z=0,g,l,h] - gamma_d(1,g,l,h) equals
        // delta_d(1,g,l,h): the centering terms do not involve own z.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..40 {
            let n = rng.random_range(2..6);
            let mut c = random_cluster(&mut rng, n);
            let model = SelectionModel::standard(1, random_delta(&mut rng));
            let params = SelectionParams {
                psi_d: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                psi_s: vec![rng.random_range(-1.0..1.0)],
                eta: vec![
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            };
            let fitted = logistic(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]);
            c.members[0].z = true;
            let m1 = reparameterized_mean(&model, &params, &fitted, &c, 0).unwrap();
            c.members[0].z = false;
            let m0 = reparameterized_mean(&model, &params, &fitted, &c, 0).unwrap();
            let rows = features_for_cluster(0, &c, model.g_summary, model.h_summary).unwrap();
            let g = rows[0].g_scalar().unwrap();
            let gamma_d1 = model.gamma_d(&params.psi_d, 1.0, g, &rows[0].l, &rows[0].h);
            let delta_d1 = model.delta.direct.value(1.0, g);
            assert!((m1 - m0 - gamma_d1 - delta_d1).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let model = SelectionModel::standard(1, DeltaPair::zero());
        let params = zero_params(&model);
        let fitted = logistic(vec![0.0, 0.0]);
        let big = cluster(&vec![(false, 0.0); 21]);
        let err = reparameterized_mean_enumerated(&model, &params, &fitted, &big, 0).unwrap_err();
        assert!(matches!(
            err,
            SelectionError::ClusterTooLarge { size: 21, cap: 20, .. }
        ));
        // The collapsed route has no such cap.
        assert!(reparameterized_mean(&model, &params, &fitted, &big, 0).is_ok());
    }

    #[test]
    fn unseen_cluster_size_is_an_error() {
        let model = SelectionModel::standard(1, DeltaPair::zero());
        let params = zero_params(&model);
        let fitted: FittedPropensity<f64> = FittedPropensity::ExchangeableCount {
            by_size: BTreeMap::from([(3, vec![0.25; 4])]),
        };
        let c = cluster(&[(true, 0.0), (false, 0.0)]);
        let err = reparameterized_mean(&model, &params, &fitted, &c, 0).unwrap_err();
        assert!(matches!(err, SelectionError::UnseenClusterSize { size: 2 }));
    }
}
