//! Group-level effect contrasts for two-stage randomized designs.
//!
//! Groups are randomized to an allocation strategy (identified by an
//! opaque label such as `"50"` or `"30"`) and individuals within a group
//! to treatment or control. Four contrasts are estimated from per-group
//! arm rates:
//!
//! * direct: within-label mean of (control rate - treated rate),
//! * indirect(phi, psi): mean control rate under `phi` minus under `psi`,
//! * total(phi, psi): mean control rate under `phi` minus mean treated
//!   rate under `psi`,
//! * overall(phi, psi): mean whole-group rate under `phi` minus under
//!   `psi`.
//!
//! All four default to the reduction sign convention (control minus
//! treated, cases averted positive); [`EffectEstimate::negated`] flips to
//! the treated-minus-control convention.
//!
//! Variance estimates treat the group as the sampling unit: the sample
//! variance of the per-group arm rates within a label, divided by the
//! number of groups carrying that label, summed over the contrast's two
//! arms. Direct effects are reported without a variance: their
//! within-label contrast has a different sampling structure and no
//! comparable between-group formula, so rather than report a misleading
//! number none is attached.

use thiserror::Error;

use crate::data::TrialTable;
use crate::num::{mean, normal_quantile, sample_variance, Real};

#[derive(Debug, Error)]
pub enum EstimandError {
    #[error("no groups carry label {0:?}")]
    UnknownLabel(String),
    #[error("group {group:?} has an empty {arm} arm, required by this contrast")]
    EmptyArm { group: String, arm: &'static str },
}

/// Sign convention of a reported contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    /// Control minus treated: positive numbers are cases averted.
    Reduction,
    /// Treated minus control.
    TreatedMinusControl,
}

impl SignConvention {
    pub fn name(self) -> &'static str {
        match self {
            SignConvention::Reduction => "reduction",
            SignConvention::TreatedMinusControl => "treated-minus-control",
        }
    }

    fn flipped(self) -> Self {
        match self {
            SignConvention::Reduction => SignConvention::TreatedMinusControl,
            SignConvention::TreatedMinusControl => SignConvention::Reduction,
        }
    }
}

/// A point estimate on the rate scale with optional dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectEstimate<R> {
    /// Human-readable contrast id, e.g. `direct@50` or `indirect(30,50)`.
    pub contrast: String,
    pub point: R,
    pub variance: Option<R>,
    pub ci: Option<(R, R)>,
    pub convention: SignConvention,
    /// Set when something about the estimate deserves attention, e.g. a
    /// variance that could not be computed.
    pub warning: Option<String>,
}

impl<R: Real> EffectEstimate<R> {
    fn new(contrast: String, point: R, variance: Option<R>) -> Self {
        EffectEstimate {
            contrast,
            point,
            variance,
            ci: None,
            convention: SignConvention::Reduction,
            warning: None,
        }
    }

    /// The same estimate under the opposite sign convention. For the
    /// two-argument contrasts this is exactly the estimate with the
    /// strategy arguments swapped.
    pub fn negated(mut self) -> Self {
        self.point = -self.point;
        self.ci = self.ci.map(|(lo, hi)| (-hi, -lo));
        self.convention = self.convention.flipped();
        self
    }

    /// Attaches a Wald interval `point +- z * sqrt(variance)` at the given
    /// two-sided level, when a variance is available.
    pub fn with_wald_ci(mut self, level: f64) -> Self {
        assert!(level > 0.0 && level < 1.0, "level must be in (0, 1)");
        if let Some(v) = self.variance {
            let z = R::of(normal_quantile(0.5 + level / 2.0));
            let half = z * v.sqrt();
            self.ci = Some((self.point - half, self.point + half));
        }
        self
    }
}

/// Per-group rates derived from a [`crate::data::GroupSummary`]. Arms of
/// size zero yield `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRates<R> {
    pub group_id: String,
    pub assignment: String,
    pub rate_treated: Option<R>,
    pub rate_control: Option<R>,
    pub rate_overall: Option<R>,
    /// Fraction of the group assigned to treatment.
    pub coverage: Option<R>,
}

pub fn group_rates<R: Real>(table: &TrialTable) -> Vec<GroupRates<R>> {
    table
        .groups()
        .iter()
        .map(|g| {
            let rate = |cases: u64, n: u64| {
                (n > 0).then(|| R::of_usize(cases as usize) / R::of_usize(n as usize))
            };
            let n_total = g.n_treated + g.n_control;
            GroupRates {
                group_id: g.group_id.clone(),
                assignment: g.assignment.clone(),
                rate_treated: rate(g.cases_treated, g.n_treated),
                rate_control: rate(g.cases_control, g.n_control),
                rate_overall: rate(g.cases_treated + g.cases_control, n_total),
                coverage: rate(g.n_treated, n_total),
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Arm {
    Treated,
    Control,
    Overall,
}

impl Arm {
    fn name(self) -> &'static str {
        match self {
            Arm::Treated => "treated",
            Arm::Control => "control",
            Arm::Overall => "overall",
        }
    }
}

/// The chosen arm's rate for every group under `label`, erring when the
/// label is unknown or a group lacks the arm.
fn arm_rates<R: Real>(
    table: &TrialTable,
    label: &str,
    arm: Arm,
) -> Result<Vec<R>, EstimandError> {
    let mut out = Vec::new();
    for r in group_rates::<R>(table) {
        if r.assignment != label {
            continue;
        }
        let v = match arm {
            Arm::Treated => r.rate_treated,
            Arm::Control => r.rate_control,
            Arm::Overall => r.rate_overall,
        };
        match v {
            Some(v) => out.push(v),
            None => {
                return Err(EstimandError::EmptyArm {
                    group: r.group_id,
                    arm: arm.name(),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(EstimandError::UnknownLabel(label.to_string()));
    }
    Ok(out)
}

fn label_variance<R: Real>(rates: &[R]) -> Option<R> {
    sample_variance(rates).map(|s2| s2 / R::of_usize(rates.len()))
}

fn single_group_warning(label: &str, rates_len: usize) -> Option<String> {
    (rates_len < 2).then(|| {
        format!("label {label:?} has a single group: between-group variance undefined")
    })
}

/// Within-label mean of (control rate - treated rate).
pub fn direct_effect<R: Real>(
    table: &TrialTable,
    label: &str,
) -> Result<EffectEstimate<R>, EstimandError> {
    let control = arm_rates::<R>(table, label, Arm::Control)?;
    let treated = arm_rates::<R>(table, label, Arm::Treated)?;
    let diffs: Vec<R> = control
        .iter()
        .zip(&treated)
        .map(|(&c, &t)| c - t)
        .collect();
    Ok(EffectEstimate::new(
        format!("direct@{label}"),
        mean(&diffs),
        None,
    ))
}

/// Mean control rate under `phi` minus mean control rate under `psi`.
pub fn indirect_effect<R: Real>(
    table: &TrialTable,
    phi: &str,
    psi: &str,
) -> Result<EffectEstimate<R>, EstimandError> {
    two_label_contrast(table, phi, psi, Arm::Control, Arm::Control, "indirect")
}

/// Mean control rate under `phi` minus mean treated rate under `psi`.
pub fn total_effect<R: Real>(
    table: &TrialTable,
    phi: &str,
    psi: &str,
) -> Result<EffectEstimate<R>, EstimandError> {
    two_label_contrast(table, phi, psi, Arm::Control, Arm::Treated, "total")
}

/// Mean whole-group rate under `phi` minus under `psi`.
pub fn overall_effect<R: Real>(
    table: &TrialTable,
    phi: &str,
    psi: &str,
) -> Result<EffectEstimate<R>, EstimandError> {
    two_label_contrast(table, phi, psi, Arm::Overall, Arm::Overall, "overall")
}

fn two_label_contrast<R: Real>(
    table: &TrialTable,
    phi: &str,
    psi: &str,
    arm_phi: Arm,
    arm_psi: Arm,
    name: &str,
) -> Result<EffectEstimate<R>, EstimandError> {
    let a = arm_rates::<R>(table, phi, arm_phi)?;
    let b = arm_rates::<R>(table, psi, arm_psi)?;
    let point = mean(&a) - mean(&b);
    let variance = match (label_variance(&a), label_variance(&b)) {
        (Some(va), Some(vb)) => Some(va + vb),
        _ => None,
    };
    let mut est = EffectEstimate::new(format!("{name}({phi},{psi})"), point, variance);
    est.warning = single_group_warning(phi, a.len()).or_else(|| single_group_warning(psi, b.len()));
    Ok(est)
}

/// The additive decomposition of the total and overall contrasts, with
/// the residuals left after recombining their components.
///
/// `residual_total = total - (direct@psi + indirect)` is zero by
/// construction, kept as a numerical self-check. `residual_overall`
/// compares the overall contrast against
/// `indirect + coverage_psi * direct@psi - coverage_phi * direct@phi`
/// (coverages averaged per label) and vanishes exactly when every group
/// under a label shares one coverage.
#[derive(Debug, Clone)]
pub struct Decomposition<R> {
    pub direct_phi: EffectEstimate<R>,
    pub direct_psi: EffectEstimate<R>,
    pub indirect: EffectEstimate<R>,
    pub total: EffectEstimate<R>,
    pub overall: EffectEstimate<R>,
    pub coverage_phi: R,
    pub coverage_psi: R,
    pub residual_total: R,
    pub residual_overall: R,
}

pub fn decomposition<R: Real>(
    table: &TrialTable,
    phi: &str,
    psi: &str,
) -> Result<Decomposition<R>, EstimandError> {
    let direct_phi = direct_effect(table, phi)?;
    let direct_psi = direct_effect(table, psi)?;
    let indirect = indirect_effect(table, phi, psi)?;
    let total = total_effect(table, phi, psi)?;
    let overall = overall_effect(table, phi, psi)?;

    let coverage = |label: &str| -> Result<R, EstimandError> {
        let mut cov = Vec::new();
        for r in group_rates::<R>(table) {
            if r.assignment == label {
                match r.coverage {
                    Some(c) => cov.push(c),
                    None => {
                        return Err(EstimandError::EmptyArm {
                            group: r.group_id,
                            arm: "overall",
                        })
                    }
                }
            }
        }
        Ok(mean(&cov))
    };
    let coverage_phi = coverage(phi)?;
    let coverage_psi = coverage(psi)?;

    let residual_total = total.point - (direct_psi.point + indirect.point);
    let residual_overall = overall.point
        - (indirect.point + coverage_psi * direct_psi.point - coverage_phi * direct_phi.point);

    Ok(Decomposition {
        direct_phi,
        direct_psi,
        indirect,
        total,
        overall,
        coverage_phi,
        coverage_psi,
        residual_total,
        residual_overall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_group_summary, GroupSummary};

    fn table_from(rows: &[(&str, &str, u64, u64, u64, u64)]) -> TrialTable {
        TrialTable::new(
            rows.iter()
                .map(|&(id, lab, nt, ct, nc, cc)| GroupSummary {
                    group_id: id.into(),
                    assignment: lab.into(),
                    n_treated: nt,
                    cases_treated: ct,
                    n_control: nc,
                    cases_control: cc,
                })
                .collect(),
        )
        .unwrap()
    }

    fn study_table() -> TrialTable {
        let text = "group_id,assignment,n_treated,cases_treated,n_control,cases_control\n\
            g1,50,12541,16,12541,18\n\
            g2,50,11513,26,11513,54\n\
            g3,30,10772,17,25134,119\n\
            g4,30,8883,22,20727,122\n\
            g5,30,5627,15,13130,92\n";
        parse_group_summary(text.as_bytes()).unwrap()
    }

    #[test]
    fn study_table_contrasts() {
        let t = study_table();
        let d30: EffectEstimate<f64> = direct_effect(&t, "30").unwrap();
        let d50: EffectEstimate<f64> = direct_effect(&t, "50").unwrap();
        let ind: EffectEstimate<f64> = indirect_effect(&t, "30", "50").unwrap();
        let tot: EffectEstimate<f64> = total_effect(&t, "30", "50").unwrap();
        let ovr: EffectEstimate<f64> = overall_effect(&t, "30", "50").unwrap();

        assert!((d30.point - 3.635_664_690_344_826e-3).abs() < 1e-15);
        assert!((d50.point - 1.295_755_134_658_364e-3).abs() < 1e-15);
        assert!((ind.point - 2.813_018_631_606_812e-3).abs() < 1e-15);
        assert!((tot.point - 4.108_773_766_265_176e-3).abs() < 1e-15);
        assert!((ovr.point - 2.370_198_645_933_882e-3).abs() < 1e-15);

        assert!(d30.variance.is_none());
        assert!((ind.variance.unwrap() - 3.079_129_569_002_729e-6).abs() < 1e-18);
        assert!((tot.variance.unwrap() - 6.716_064_829_912_149e-7).abs() < 1e-19);
        assert!((ovr.variance.unwrap() - 1.430_029_786_715_839e-6).abs() < 1e-18);
    }

    #[test]
    fn decomposition_residuals_on_study_table() {
        let t = study_table();
        let d: Decomposition<f64> = decomposition(&t, "30", "50").unwrap();
        assert!(d.residual_total.abs() < 1e-12);
        // Coverages are only approximately constant at label 30, so the
        // overall recombination misses by a small but nonzero amount.
        assert!(d.residual_overall.abs() < 1e-5);
        assert!(d.residual_overall.abs() > 0.0);
        assert!((d.coverage_psi - 0.5).abs() < 1e-15);
        assert!((d.coverage_phi - 0.3).abs() < 1e-6);
    }

    #[test]
    fn overall_residual_vanishes_under_shared_coverage() {
        // Every group splits its arms 1:2, so coverage is exactly 1/3.
        let t = table_from(&[
            ("a1", "a", 100, 3, 200, 11),
            ("a2", "a", 50, 2, 100, 9),
            ("b1", "b", 300, 1, 600, 20),
            ("b2", "b", 40, 0, 80, 7),
        ]);
        let d: Decomposition<f64> = decomposition(&t, "a", "b").unwrap();
        assert!(d.residual_total.abs() < 1e-15);
        assert!(d.residual_overall.abs() < 1e-15);
    }

    #[test]
    fn reduction_convention_and_negation() {
        let t = table_from(&[("a1", "a", 10, 1, 10, 5), ("b1", "b", 10, 2, 10, 3)]);
        let d: EffectEstimate<f64> = direct_effect(&t, "a").unwrap();
        // Control rate 0.5, treated 0.1: 0.4 cases averted.
        assert!((d.point - 0.4).abs() < 1e-15);
        assert_eq!(d.convention, SignConvention::Reduction);
        let n = d.clone().negated();
        assert_eq!(n.point, -d.point);
        assert_eq!(n.convention, SignConvention::TreatedMinusControl);
        assert_eq!(n.negated().point, d.point);
    }

    #[test]
    fn antisymmetry_in_strategy_order() {
        let t = study_table();
        let ab: EffectEstimate<f64> = indirect_effect(&t, "30", "50").unwrap();
        let ba: EffectEstimate<f64> = indirect_effect(&t, "50", "30").unwrap();
        assert_eq!(ab.point, -ba.point);
        let ab: EffectEstimate<f64> = overall_effect(&t, "30", "50").unwrap();
        let ba: EffectEstimate<f64> = overall_effect(&t, "50", "30").unwrap();
        assert_eq!(ab.point, -ba.point);
    }

    #[test]
    fn invariant_to_group_order_and_count_scaling() {
        let rows = [
            ("a1", "a", 100u64, 3u64, 200u64, 11u64),
            ("a2", "a", 50, 2, 120, 9),
            ("b1", "b", 300, 1, 600, 20),
        ];
        let t = table_from(&rows);
        let mut shuffled = rows;
        shuffled.swap(0, 2);
        let t_shuffled = table_from(&shuffled);
        let scaled: Vec<_> = rows
            .iter()
            .map(|&(id, lab, nt, ct, nc, cc)| (id, lab, nt * 7, ct * 7, nc * 7, cc * 7))
            .collect();
        let t_scaled = table_from(&scaled);

        for t2 in [&t_shuffled, &t_scaled] {
            for (a, b) in [
                (
                    indirect_effect::<f64>(&t, "a", "b").unwrap(),
                    indirect_effect::<f64>(t2, "a", "b").unwrap(),
                ),
                (
                    total_effect::<f64>(&t, "a", "b").unwrap(),
                    total_effect::<f64>(t2, "a", "b").unwrap(),
                ),
                (
                    overall_effect::<f64>(&t, "a", "b").unwrap(),
                    overall_effect::<f64>(t2, "a", "b").unwrap(),
                ),
                (
                    direct_effect::<f64>(&t, "a").unwrap(),
                    direct_effect::<f64>(t2, "a").unwrap(),
                ),
            ] {
                assert_eq!(a.point, b.point);
                assert_eq!(a.variance, b.variance);
            }
        }
    }

    #[test]
    fn single_group_label_gets_warning_not_variance() {
        let t = table_from(&[("a1", "a", 10, 1, 10, 5), ("b1", "b", 10, 2, 10, 3)]);
        let e: EffectEstimate<f64> = indirect_effect(&t, "a", "b").unwrap();
        assert!(e.variance.is_none());
        let w = e.warning.unwrap();
        assert!(w.contains("single group"), "{w}");
    }

    #[test]
    fn empty_arm_is_rejected_with_group_named() {
        let t = table_from(&[("a1", "a", 0, 0, 10, 5), ("b1", "b", 10, 2, 10, 3)]);
        // Indirect needs only control arms, so it works.
        assert!(indirect_effect::<f64>(&t, "a", "b").is_ok());
        let err = direct_effect::<f64>(&t, "a").unwrap_err().to_string();
        assert!(err.contains("a1") && err.contains("treated"), "{err}");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let t = table_from(&[("a1", "a", 10, 1, 10, 5)]);
        let err = direct_effect::<f64>(&t, "c").unwrap_err().to_string();
        assert!(err.contains("\"c\""), "{err}");
    }

    #[test]
    fn wald_interval_brackets_the_point() {
        let t = study_table();
        let e = indirect_effect::<f64>(&t, "30", "50")
            .unwrap()
            .with_wald_ci(0.95);
        let (lo, hi) = e.ci.unwrap();
        assert!(lo < e.point && e.point < hi);
        let half = 1.959_963_984_540_054 * e.variance.unwrap().sqrt();
        assert!((hi - e.point - half).abs() < 1e-12);
    }
}
