//! Cluster worlds for the observational estimators.
//!
//! Two constructions cover the two sensitivity analyses. A
//! [`SelectionWorld`] plants the selection functions directly: outcomes
//! are drawn around the model's own observed-data mean at known
//! parameters and a known treatment law, so the planted delta pair is
//! exactly the truth the estimator should recover. A
//! [`ConfoundedWorld`] carries an explicit discrete confounder per
//! member; treatment depends on it, the outcome mean is linear in it,
//! and every adjustment target (confounder distributions by exposure,
//! bias factors, selection functions) is computed by exact enumeration
//! over the peer configurations. Confounder values are returned in a
//! ledger separate from the observable data, so analysis pipelines
//! cannot read them by accident.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Cluster, ClusterData, ClusterMember};
use crate::num::{expit, Real};
use crate::rng::{draw_bool, keyed_rng};
use crate::selection::{
    reparameterized_mean, DeltaPair, FittedPropensity, PropTerm, SelectionModel, SelectionParams,
};

use super::{check_probability, SimError};

/// A world whose selection functions are planted by construction. Its
/// observed-data mean is the standard model's reparameterized display
/// evaluated at the stated parameters, delta pair, and treatment law,
/// so the estimator's target is known without any hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionWorld<R> {
    pub cluster_size: usize,
    /// P(L = 1).
    pub covariate_prob: R,
    /// Treatment-law coefficients: logit P(Z=1|L=l) = alpha.0 + alpha.1 l.
    pub alpha: (R, R),
    /// True mean parameters, shaped for [`SelectionModel::standard`].
    pub params: SelectionParams<R>,
    pub delta: DeltaPair<R>,
    pub noise_sd: R,
}

impl<R: Real> SelectionWorld<R> {
    pub fn model(&self) -> SelectionModel<R> {
        SelectionModel::standard(1, self.delta)
    }

    /// The generating treatment law in fitted form.
    pub fn true_propensity(&self) -> FittedPropensity<R> {
        FittedPropensity::Logistic {
            terms: vec![PropTerm::One, PropTerm::L(0)],
            alpha: vec![self.alpha.0, self.alpha.1],
            iterations: 0,
            gradient_norm: R::zero(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.cluster_size < 2 {
            return Err(SimError::ClusterTooSmall {
                size: self.cluster_size,
            });
        }
        check_probability("covariate_prob", self.covariate_prob)?;
        if self.noise_sd < R::zero() {
            return Err(SimError::NegativeNoise(self.noise_sd.as_f64()));
        }
        let model = self.model();
        for (block, got, want) in [
            ("psi_d", self.params.psi_d.len(), model.direct_terms.len()),
            ("psi_s", self.params.psi_s.len(), model.spill_terms.len()),
            ("eta", self.params.eta.len(), model.baseline_terms.len()),
        ] {
            if got != want {
                return Err(SimError::ParamShape { block, got, want });
            }
        }
        Ok(())
    }
}

/// Draws clusters from a [`SelectionWorld`]. Cluster `i` depends only
/// on (seed, i).
pub fn simulate_selection<R: Real>(
    world: &SelectionWorld<R>,
    n_clusters: usize,
    seed: u64,
) -> Result<ClusterData<R>, SimError> {
    world.validate()?;
    let model = world.model();
    let propensity = world.true_propensity();
    let noise = Normal::new(0.0, world.noise_sd.as_f64()).expect("validated noise scale");
    let n = world.cluster_size;
    let mut clusters = Vec::with_capacity(n_clusters);
    for i in 0..n_clusters {
        let mut rng = keyed_rng(seed, i as u64);
        let mut members = Vec::with_capacity(n);
        for j in 0..n {
            let l = draw_bool(&mut rng, world.covariate_prob);
            let lr = if l { R::one() } else { R::zero() };
            let z = draw_bool(&mut rng, expit(world.alpha.0 + world.alpha.1 * lr));
            members.push(ClusterMember {
                individual_id: format!("c{}m{}", i + 1, j + 1),
                z,
                y: R::zero(),
                l: vec![lr],
            });
        }
        let mut cluster = Cluster {
            cluster_id: format!("c{}", i + 1),
            members,
        };
        let means: Vec<R> = (0..n)
            .map(|j| reparameterized_mean(&model, &world.params, &propensity, &cluster, j))
            .collect::<Result<_, _>>()?;
        for (j, m) in means.into_iter().enumerate() {
            cluster.members[j].y = m + R::of(noise.sample(&mut rng));
        }
        clusters.push(cluster);
    }
    Ok(ClusterData::new(clusters, 1).expect("simulated clusters are well formed"))
}

/// Coefficients of a linear outcome mean in (z, g, l, h, u, v).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCoefs<R> {
    pub base: R,
    pub z: R,
    pub zg: R,
    pub g: R,
    pub l: R,
    pub h: R,
    pub u: R,
    pub v: R,
}

impl<R: Real> MeanCoefs<R> {
    pub fn eval(&self, z: R, g: R, l: R, h: R, u: R, v: R) -> R {
        self.base
            + self.z * z
            + self.zg * z * g
            + self.g * g
            + self.l * l
            + self.h * h
            + self.u * u
            + self.v * v
    }
}

/// A cluster world with an explicit discrete confounder. Members carry
/// a binary covariate `l` and a confounder level `u`; treatment depends
/// on both; the outcome mean is linear in own `(z, l, u)` and the peer
/// summaries `(g, h, v)` (count of treated peers, sum of peers' `l`,
/// sum of peers' `u`). Outcomes never depend on exposure except through
/// the stated mean, so the confounder distributions computed here are
/// exactly the inputs the bias formulas ask for.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedWorld<R> {
    pub cluster_size: usize,
    pub covariate_prob: R,
    /// P(U = u | L = l), one row per covariate level.
    pub u_given_l: [Vec<R>; 2],
    /// logit P(Z=1 | L=l, U=u) = treat.0 + treat.1 l + treat.2 u.
    pub treat: (R, R, R),
    pub mean: MeanCoefs<R>,
    pub noise_sd: R,
}

/// One member's hidden state, emitted separately from the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfounderRecord {
    pub cluster_id: String,
    pub individual_id: String,
    pub u: usize,
    /// Sum of the peers' confounder levels.
    pub v: usize,
}

impl<R: Real> ConfoundedWorld<R> {
    fn validate(&self) -> Result<(), SimError> {
        if self.cluster_size < 2 {
            return Err(SimError::ClusterTooSmall {
                size: self.cluster_size,
            });
        }
        check_probability("covariate_prob", self.covariate_prob)?;
        if self.noise_sd < R::zero() {
            return Err(SimError::NegativeNoise(self.noise_sd.as_f64()));
        }
        let (a, b) = (self.u_given_l[0].len(), self.u_given_l[1].len());
        if a != b || a == 0 {
            return Err(SimError::RaggedConfounder { a, b });
        }
        for (which, row) in [("u|l=0 distribution", 0), ("u|l=1 distribution", 1)]
            .map(|(name, i)| (name, &self.u_given_l[i]))
        {
            let mut total = R::zero();
            for &p in row {
                check_probability("confounder level probability", p)?;
                total += p;
            }
            if (total - R::one()).abs().as_f64() > 1e-12 {
                return Err(SimError::NotNormalized {
                    name: which,
                    total: total.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn u_levels(&self) -> usize {
        self.u_given_l[0].len()
    }

    /// Largest possible peer confounder sum.
    pub fn v_max(&self) -> usize {
        (self.cluster_size - 1) * (self.u_levels() - 1)
    }

    fn propensity(&self, l: bool, u: usize) -> R {
        let lr = if l { R::one() } else { R::zero() };
        expit(self.treat.0 + self.treat.1 * lr + self.treat.2 * R::of_usize(u))
    }

    /// The `(u, v)` support all distribution vectors align with:
    /// `u`-major, `v` from 0 to [`Self::v_max`].
    pub fn confounder_support(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.u_levels() * (self.v_max() + 1));
        for u in 0..self.u_levels() {
            for v in 0..=self.v_max() {
                out.push((u, v));
            }
        }
        out
    }

    pub fn mean_value(&self, z: bool, g: usize, l: bool, h: usize, u: usize, v: usize) -> R {
        let b = |x: bool| if x { R::one() } else { R::zero() };
        self.mean.eval(
            b(z),
            R::of_usize(g),
            b(l),
            R::of_usize(h),
            R::of_usize(u),
            R::of_usize(v),
        )
    }

    /// Joint weights of the peers' (treated count, covariate sum,
    /// confounder sum), by exact convolution over the n-1 peers.
    fn peer_table(&self) -> Vec<Vec<Vec<R>>> {
        let n = self.cluster_size;
        let n_u = self.u_levels();
        let v_max = self.v_max();
        let zero = || vec![vec![vec![R::zero(); v_max + 1]; n]; n];
        let mut dp = zero();
        dp[0][0][0] = R::one();
        for step in 0..n - 1 {
            let mut next = zero();
            for cz in 0..=step {
                for cl in 0..=step {
                    for su in 0..=step * (n_u - 1) {
                        let w = dp[cz][cl][su];
                        if w == R::zero() {
                            continue;
                        }
                        for l in [false, true] {
                            let pl = if l {
                                self.covariate_prob
                            } else {
                                R::one() - self.covariate_prob
                            };
                            for (u, &pu) in self.u_given_l[usize::from(l)].iter().enumerate() {
                                let pz1 = self.propensity(l, u);
                                for z in [false, true] {
                                    let pz = if z { pz1 } else { R::one() - pz1 };
                                    next[cz + usize::from(z)][cl + usize::from(l)][su + u] +=
                                        w * pl * pu * pz;
                                }
                            }
                        }
                    }
                }
            }
            dp = next;
        }
        dp
    }

    /// Own confounder distribution given `l`, optionally also given own
    /// treatment.
    fn own_u_dist(&self, l: bool, z: Option<bool>) -> Vec<R> {
        let row = &self.u_given_l[usize::from(l)];
        let raw: Vec<R> = row
            .iter()
            .enumerate()
            .map(|(u, &pu)| {
                let f = match z {
                    None => R::one(),
                    Some(true) => self.propensity(l, u),
                    Some(false) => R::one() - self.propensity(l, u),
                };
                pu * f
            })
            .collect();
        let total: R = raw.iter().copied().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    /// Peer confounder-sum distribution given the peer covariate sum,
    /// optionally also given the treated-peer count.
    fn peer_v_dist(&self, g: Option<usize>, h: usize) -> Result<Vec<R>, SimError> {
        let n = self.cluster_size;
        let event = || match g {
            Some(g) => format!("(g={g}, h={h})"),
            None => format!("(h={h})"),
        };
        if h > n - 1 || g.is_some_and(|g| g > n - 1) {
            return Err(SimError::EmptyEvent { event: event() });
        }
        let dp = self.peer_table();
        let mut raw = vec![R::zero(); self.v_max() + 1];
        match g {
            Some(g) => raw.clone_from(&dp[g][h]),
            None => {
                for slice in &dp {
                    for (v, &w) in slice[h].iter().enumerate() {
                        raw[v] += w;
                    }
                }
            }
        }
        let total: R = raw.iter().copied().sum();
        if total <= R::zero() {
            return Err(SimError::EmptyEvent { event: event() });
        }
        Ok(raw.into_iter().map(|w| w / total).collect())
    }

    fn joint(own: &[R], peer: &[R]) -> Vec<R> {
        let mut out = Vec::with_capacity(own.len() * peer.len());
        for &pu in own {
            for &pv in peer {
                out.push(pu * pv);
            }
        }
        out
    }

    /// P(u, v | z, g, l, h), aligned with [`Self::confounder_support`].
    pub fn confounder_dist(
        &self,
        z: bool,
        g: usize,
        l: bool,
        h: usize,
    ) -> Result<Vec<R>, SimError> {
        self.validate()?;
        Ok(Self::joint(
            &self.own_u_dist(l, Some(z)),
            &self.peer_v_dist(Some(g), h)?,
        ))
    }

    /// P(u, v | g, l, h): own treatment marginalized out.
    pub fn confounder_dist_given_g(
        &self,
        g: usize,
        l: bool,
        h: usize,
    ) -> Result<Vec<R>, SimError> {
        self.validate()?;
        Ok(Self::joint(
            &self.own_u_dist(l, None),
            &self.peer_v_dist(Some(g), h)?,
        ))
    }

    /// P(u, v | l, h): no exposure conditioning at all, the reference
    /// distribution of the bias formulas.
    pub fn confounder_dist_marginal(&self, l: bool, h: usize) -> Result<Vec<R>, SimError> {
        self.validate()?;
        Ok(Self::joint(
            &self.own_u_dist(l, None),
            &self.peer_v_dist(None, h)?,
        ))
    }

    /// The own-treatment selection function: how much the mean of the
    /// reference-treatment outcome differs between those observed at
    /// `z` and those observed at the reference, both at exposure `g`.
    pub fn true_delta_direct(
        &self,
        z: bool,
        g: usize,
        l: bool,
        h: usize,
    ) -> Result<R, SimError> {
        let at_z = self.confounder_dist(z, g, l, h)?;
        let at_ref = self.confounder_dist(false, g, l, h)?;
        let mut out = R::zero();
        for (i, &(u, v)) in self.confounder_support().iter().enumerate() {
            out += self.mean_value(false, g, l, h, u, v) * (at_z[i] - at_ref[i]);
        }
        Ok(out)
    }

    /// The peer-exposure selection function, with both own treatment
    /// and the outcome's exposure pinned at the reference.
    pub fn true_delta_spill(&self, g: usize, l: bool, h: usize) -> Result<R, SimError> {
        let at_g = self.confounder_dist_given_g(g, l, h)?;
        let at_ref = self.confounder_dist_given_g(0, l, h)?;
        let mut out = R::zero();
        for (i, &(u, v)) in self.confounder_support().iter().enumerate() {
            out += self.mean_value(false, 0, l, h, u, v) * (at_g[i] - at_ref[i]);
        }
        Ok(out)
    }
}

fn draw_index<R: Real>(rng: &mut ChaCha8Rng, pmf: &[R]) -> usize {
    let x = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in pmf.iter().enumerate() {
        acc += p.as_f64();
        if x < acc {
            return i;
        }
    }
    pmf.len() - 1
}

/// Draws clusters from a [`ConfoundedWorld`]. The observable data and
/// the confounder ledger are returned as separate collections; rows of
/// the ledger are in the same member order as the data.
pub fn simulate_confounded<R: Real>(
    world: &ConfoundedWorld<R>,
    n_clusters: usize,
    seed: u64,
) -> Result<(ClusterData<R>, Vec<ConfounderRecord>), SimError> {
    world.validate()?;
    let noise = Normal::new(0.0, world.noise_sd.as_f64()).expect("validated noise scale");
    let n = world.cluster_size;
    let mut clusters = Vec::with_capacity(n_clusters);
    let mut ledger = Vec::with_capacity(n_clusters * n);
    for i in 0..n_clusters {
        let mut rng = keyed_rng(seed, i as u64);
        let mut ls = Vec::with_capacity(n);
        let mut us = Vec::with_capacity(n);
        let mut zs = Vec::with_capacity(n);
        for _ in 0..n {
            let l = draw_bool(&mut rng, world.covariate_prob);
            let u = draw_index(&mut rng, &world.u_given_l[usize::from(l)]);
            let z = draw_bool(&mut rng, world.propensity(l, u));
            ls.push(l);
            us.push(u);
            zs.push(z);
        }
        let z_total = zs.iter().filter(|&&z| z).count();
        let l_total = ls.iter().filter(|&&l| l).count();
        let u_total: usize = us.iter().sum();
        let cluster_id = format!("c{}", i + 1);
        let mut members = Vec::with_capacity(n);
        for j in 0..n {
            let g = z_total - usize::from(zs[j]);
            let h = l_total - usize::from(ls[j]);
            let v = u_total - us[j];
            let individual_id = format!("c{}m{}", i + 1, j + 1);
            let y = world.mean_value(zs[j], g, ls[j], h, us[j], v)
                + R::of(noise.sample(&mut rng));
            members.push(ClusterMember {
                individual_id: individual_id.clone(),
                z: zs[j],
                y,
                l: vec![if ls[j] { R::one() } else { R::zero() }],
            });
            ledger.push(ConfounderRecord {
                cluster_id: cluster_id.clone(),
                individual_id,
                u: us[j],
                v,
            });
        }
        clusters.push(Cluster {
            cluster_id,
            members,
        });
    }
    Ok((
        ClusterData::new(clusters, 1).expect("simulated clusters are well formed"),
        ledger,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confound::{bias_general, bias_simple, BiasSpecGeneral, BiasSpecSimple, Exposure};
    use crate::selection::{fit_gee, fit_propensity, DirectDelta, SpillDelta};

    fn base_selection_world() -> SelectionWorld<f64> {
        SelectionWorld {
            cluster_size: 3,
            covariate_prob: 0.5,
            alpha: (-0.4, 0.9),
            params: SelectionParams {
                psi_d: vec![1.2, -0.3],
                psi_s: vec![0.5],
                eta: vec![0.7, 0.4, -0.2],
            },
            delta: DeltaPair::zero(),
            noise_sd: 0.0,
        }
    }

    #[test]
    fn zero_delta_outcomes_are_the_structural_mean() {
        let data = simulate_selection(&base_selection_world(), 50, 3).unwrap();
        for c in data.clusters() {
            let z_total = c.members.iter().filter(|m| m.z).count() as f64;
            let l_total: f64 = c.members.iter().map(|m| m.l[0]).sum();
            for m in &c.members {
                let z = f64::from(m.z);
                let g = z_total - z;
                let h = l_total - m.l[0];
                let want = 1.2 * z - 0.3 * z * g + 0.5 * g + 0.7 + 0.4 * m.l[0] - 0.2 * h;
                assert!((m.y - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_simulation_is_keyed_by_cluster() {
        let w = base_selection_world();
        let a = simulate_selection(&w, 40, 11).unwrap();
        let b = simulate_selection(&w, 40, 11).unwrap();
        assert_eq!(a, b);
        let short = simulate_selection(&w, 10, 11).unwrap();
        assert_eq!(&a.clusters()[..10], short.clusters());
        assert_ne!(a, simulate_selection(&w, 40, 12).unwrap());
    }

    #[test]
    fn planted_deltas_survive_propensity_estimation() {
        // With scaled delta families, a binary covariate, constant
        // cluster size, and count summaries, the error introduced by
        // centering with the estimated treatment law instead of the
        // true one lies in the span of the baseline columns, so the
        // contrast blocks come back exactly despite alpha being off.
        let mut w = base_selection_world();
        w.cluster_size = 4;
        w.delta = DeltaPair {
            direct: DirectDelta::Scaled { lambda: 0.8 },
            spill: SpillDelta::Scaled { lambda: -0.5 },
        };
        let data = simulate_selection(&w, 400, 17).unwrap();
        let model = w.model();
        let fitted = fit_propensity(&data, &model.propensity).unwrap();
        // The estimated law is close to but not equal to the truth.
        let a1 = fitted.individual_prob(&[1.0]).unwrap();
        let t1 = expit(-0.4 + 0.9);
        assert!((a1 - t1).abs() > 1e-6);
        let fit = fit_gee(&data, &model, &fitted).unwrap();
        for (got, want) in fit.params.psi_d.iter().zip(&w.params.psi_d) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        for (got, want) in fit.params.psi_s.iter().zip(&w.params.psi_s) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    fn base_confounded_world() -> ConfoundedWorld<f64> {
        ConfoundedWorld {
            cluster_size: 3,
            covariate_prob: 0.4,
            u_given_l: [vec![0.7, 0.3], vec![0.2, 0.8]],
            treat: (-0.5, 0.6, 1.1),
            mean: MeanCoefs {
                base: 0.3,
                z: 1.0,
                zg: -0.2,
                g: 0.4,
                l: 0.5,
                h: -0.1,
                u: 0.9,
                v: 0.35,
            },
            noise_sd: 0.3,
        }
    }

    #[test]
    fn confounder_distributions_are_proper() {
        let w = base_confounded_world();
        let support = w.confounder_support();
        assert_eq!(support.len(), 2 * 3);
        for z in [false, true] {
            for g in 0..=2usize {
                for l in [false, true] {
                    for h in 0..=2usize {
                        let d = w.confounder_dist(z, g, l, h).unwrap();
                        assert_eq!(d.len(), support.len());
                        assert!(d.iter().all(|&p| p >= 0.0));
                        let total: f64 = d.iter().sum();
                        assert!((total - 1.0).abs() < 1e-12);
                    }
                }
            }
        }
        let m = w.confounder_dist_marginal(true, 1).unwrap();
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconfounded_treatment_kills_both_deltas() {
        let mut w = base_confounded_world();
        w.treat.2 = 0.0;
        for g in 0..=2usize {
            for l in [false, true] {
                for h in 0..=2usize {
                    let dd = w.true_delta_direct(true, g, l, h).unwrap();
                    assert!(dd.abs() < 1e-13, "delta_d({g},{l},{h}) = {dd}");
                    let ds = w.true_delta_spill(g, l, h).unwrap();
                    assert!(ds.abs() < 1e-13, "delta_s({g},{l},{h}) = {ds}");
                }
            }
        }
    }

    #[test]
    fn confounded_treatment_induces_nonzero_deltas() {
        let w = base_confounded_world();
        assert!(w.true_delta_direct(true, 1, true, 1).unwrap().abs() > 1e-3);
        assert!(w.true_delta_spill(2, true, 1).unwrap().abs() > 1e-3);
        // Reference levels give exact zeros.
        assert_eq!(w.true_delta_direct(false, 1, true, 1).unwrap(), 0.0);
        assert_eq!(w.true_delta_spill(0, true, 1).unwrap(), 0.0);
    }

    #[test]
    fn general_and_simple_bias_agree_on_this_additive_world() {
        // The world's shift in (u, v) is additive and exposure free, so
        // the full distributional bias formula collapses to the
        // two-coefficient version.
        let w = base_confounded_world();
        let (l, h) = (true, 1usize);
        let support_r: Vec<(f64, f64)> = w
            .confounder_support()
            .iter()
            .map(|&(u, v)| (u as f64, v as f64))
            .collect();
        let coefs = w.mean;
        let wd = w.clone();
        let dist_at = move |e: Exposure<f64>| {
            wd.confounder_dist(e.z != 0.0, e.g as usize, l, h).unwrap()
        };
        let spec = BiasSpecGeneral::from_mean_fn(
            support_r.clone(),
            (0.0, 0.0),
            move |e: Exposure<f64>, (u, v)| coefs.eval(e.z, e.g, 1.0, h as f64, u, v),
            dist_at,
            w.confounder_dist_marginal(l, h).unwrap(),
        )
        .unwrap();

        let zg = Exposure::new(1.0, 1.0);
        let zg_prime = Exposure::new(0.0, 1.0);
        let general = bias_general(&spec, zg, zg_prime).unwrap();

        let moments = |e: Exposure<f64>| {
            let d = w.confounder_dist(e.z != 0.0, e.g as usize, l, h).unwrap();
            let eu: f64 = support_r.iter().zip(&d).map(|(&(u, _), &p)| u * p).sum();
            let ev: f64 = support_r.iter().zip(&d).map(|(&(_, v), &p)| v * p).sum();
            (eu, ev)
        };
        let (eu1, ev1) = moments(zg);
        let (eu0, ev0) = moments(zg_prime);
        let simple = bias_simple(&BiasSpecSimple {
            lambda: w.mean.u,
            tau: w.mean.v,
            d_u: eu1 - eu0,
            d_v: ev1 - ev0,
        });
        assert!((general - simple).abs() < 1e-12, "{general} vs {simple}");
        assert!(general.abs() > 1e-3);
    }

    #[test]
    fn enumeration_matches_simulation() {
        let w = base_confounded_world();
        let n_clusters = 150_000;
        let (data, ledger) = simulate_confounded(&w, n_clusters, 31).unwrap();
        assert_eq!(ledger.len(), data.n_individuals());

        // The ledger's v really is the peers' u sum.
        for rows in ledger.chunks(3) {
            let total: usize = rows.iter().map(|r| r.u).sum();
            for r in rows {
                assert_eq!(r.v, total - r.u);
            }
        }

        // Empirical confounder distribution and outcome mean in one
        // exposure cell against the enumerated values.
        let (zc, gc, lc, hc) = (true, 1usize, true, 1usize);
        let mut us = Vec::new();
        let mut ys = Vec::new();
        let mut y0 = Vec::new();
        for (ci, c) in data.clusters().iter().enumerate() {
            let z_total = c.members.iter().filter(|m| m.z).count();
            let l_total: f64 = c.members.iter().map(|m| m.l[0]).sum();
            for (j, m) in c.members.iter().enumerate() {
                let g = z_total - usize::from(m.z);
                let h = (l_total - m.l[0]) as usize;
                if g == gc && (m.l[0] == 1.0) == lc && h == hc {
                    if m.z == zc {
                        us.push(ledger[ci * 3 + j].u as f64);
                        ys.push(m.y);
                    } else {
                        y0.push(m.y);
                    }
                }
            }
        }
        assert!(us.len() > 5_000, "cell too rare: {}", us.len());

        let dist = w.confounder_dist(zc, gc, lc, hc).unwrap();
        let support = w.confounder_support();
        let want_eu: f64 = support
            .iter()
            .zip(&dist)
            .map(|(&(u, _), &p)| u as f64 * p)
            .sum();
        let want_ey: f64 = support
            .iter()
            .zip(&dist)
            .map(|(&(u, v), &p)| w.mean_value(zc, gc, lc, hc, u, v) * p)
            .sum();
        let mc = |xs: &[f64]| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (mean, (var / n).sqrt())
        };
        let (eu, se_u) = mc(&us);
        assert!((eu - want_eu).abs() < 4.0 * se_u, "{eu} vs {want_eu}");
        let (ey, se_y) = mc(&ys);
        assert!((ey - want_ey).abs() < 4.0 * se_y, "{ey} vs {want_ey}");

        // The regression-contrast gap at this cell equals the direct
        // selection function plus the structural contrast.
        let (ey0, se_y0) = mc(&y0);
        let gap = ey - ey0;
        let want_gap = w.mean.z + w.mean.zg * gc as f64
            + w.true_delta_direct(zc, gc, lc, hc).unwrap();
        let se_gap = (se_y * se_y + se_y0 * se_y0).sqrt();
        assert!((gap - want_gap).abs() < 4.0 * se_gap, "{gap} vs {want_gap}");
    }

    #[test]
    fn impossible_conditioning_cells_are_named() {
        let mut w = base_confounded_world();
        w.covariate_prob = 0.0;
        let err = w.confounder_dist(true, 1, false, 2).unwrap_err().to_string();
        assert!(err.contains("(g=1, h=2)"), "{err}");
        let err = w.confounder_dist_marginal(false, 9).unwrap_err().to_string();
        assert!(err.contains("(h=9)"), "{err}");
    }

    #[test]
    fn malformed_worlds_are_rejected() {
        let mut w = base_confounded_world();
        w.u_given_l[1] = vec![0.5, 0.6];
        assert!(matches!(
            w.confounder_dist(true, 1, true, 1).unwrap_err(),
            SimError::NotNormalized { .. }
        ));
        let mut w = base_confounded_world();
        w.u_given_l[1] = vec![0.2, 0.3, 0.5];
        assert!(matches!(
            simulate_confounded(&w, 1, 0).unwrap_err(),
            SimError::RaggedConfounder { a: 2, b: 3 }
        ));
        let mut w = base_selection_world();
        w.params.eta.pop();
        assert!(matches!(
            simulate_selection(&w, 1, 0).unwrap_err(),
            SimError::ParamShape {
                block: "eta",
                got: 2,
                want: 3
            }
        ));
    }
}
