//! Two-step estimation: maximum likelihood for the treatment law, then
//! an independence-working-correlation estimating equation for the mean
//! parameters with the fitted centering terms plugged in. Standard
//! errors come from a cluster bootstrap that repeats both steps; no
//! closed-form (sandwich) variance is attempted for the two-step
//! estimator.

use std::collections::BTreeMap;

use rand::Rng;

use crate::data::{cluster_features, ClusterData, SummaryKind};
use crate::linalg;
use crate::num::{expit, sample_variance, Real};
use crate::rng::keyed_rng;

use super::mean::{delta_offset, FittedPropensity, MemberContext};
use super::{
    DeltaPair, PropTerm, PropensityForm, SelectionError, SelectionModel, SelectionParams,
};

const IRLS_MAX_ITER: usize = 100;
/// Score tolerance per observation. Both score functions sum over
/// individuals, so a flat cutoff would sit at or below accumulation
/// round-off once samples get large; the loops scale these by n.
const IRLS_GRADIENT_TOL: f64 = 1e-8;
/// Accepted-step norm below which the likelihood iterate is frozen and
/// the fit is taken as converged.
const IRLS_STEP_TOL: f64 = 1e-10;
const GEE_MAX_ITER: usize = 50;
/// Per-observation residual tolerance, like [`IRLS_GRADIENT_TOL`].
const GEE_SCORE_TOL: f64 = 1e-12;
const GEE_STEP_TOL: f64 = 1e-10;
/// Coefficient magnitude past which a non-converged binary-response fit
/// is reported as separation rather than plain divergence.
const SEPARATION_SCALE: f64 = 25.0;

fn norm<R: Real>(v: &[R]) -> R {
    v.iter().map(|&x| x * x).sum::<R>().sqrt()
}

fn log1p_exp<R: Real>(t: R) -> R {
    if t > R::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

// ---------------------------------------------------------------------------
// Step one: the treatment law.

/// Maximum likelihood for the chosen treatment-law form.
pub fn fit_propensity<R: Real>(
    data: &ClusterData<R>,
    form: &PropensityForm,
) -> Result<FittedPropensity<R>, SelectionError> {
    match form {
        PropensityForm::Logistic(terms) => fit_logistic(data, terms),
        PropensityForm::ExchangeableCount => Ok(fit_exchangeable(data)),
    }
}

fn fit_exchangeable<R: Real>(data: &ClusterData<R>) -> FittedPropensity<R> {
    let mut counts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for c in data.clusters() {
        let n = c.members.len();
        let t = c.members.iter().filter(|m| m.z).count();
        counts.entry(n).or_insert_with(|| vec![0; n + 1])[t] += 1;
    }
    let by_size = counts
        .into_iter()
        .map(|(n, freq)| {
            let total = R::of_usize(freq.iter().sum());
            (
                n,
                freq.into_iter()
                    .map(|f| R::of_usize(f) / total)
                    .collect::<Vec<R>>(),
            )
        })
        .collect();
    FittedPropensity::ExchangeableCount { by_size }
}

fn fit_logistic<R: Real>(
    data: &ClusterData<R>,
    terms: &[PropTerm],
) -> Result<FittedPropensity<R>, SelectionError> {
    for t in terms {
        if let PropTerm::L(i) = *t {
            if i >= data.covariate_dim() {
                return Err(SelectionError::TermOutOfRange {
                    term: t.label(),
                    what: "covariate",
                    index: i,
                    dim: data.covariate_dim(),
                });
            }
        }
    }
    let mut xs: Vec<Vec<R>> = Vec::with_capacity(data.n_individuals());
    let mut zs: Vec<bool> = Vec::with_capacity(data.n_individuals());
    for c in data.clusters() {
        for m in &c.members {
            xs.push(terms.iter().map(|t| t.value(&m.l)).collect());
            zs.push(m.z);
        }
    }
    if zs.iter().all(|&z| z) || zs.iter().all(|&z| !z) {
        return Err(SelectionError::ConstantTreatment {
            value: u8::from(zs[0]),
        });
    }
    // A single column strictly separating the two arms guarantees an
    // unbounded likelihood; catch it before iterating.
    for (c, term) in terms.iter().enumerate() {
        if matches!(term, PropTerm::One) {
            continue;
        }
        let mut max0 = R::neg_infinity();
        let mut min0 = R::infinity();
        let mut max1 = R::neg_infinity();
        let mut min1 = R::infinity();
        for (x, &z) in xs.iter().zip(&zs) {
            if z {
                max1 = max1.max(x[c]);
                min1 = min1.min(x[c]);
            } else {
                max0 = max0.max(x[c]);
                min0 = min0.min(x[c]);
            }
        }
        if max0 < min1 || max1 < min0 {
            return Err(SelectionError::Separation {
                column: term.label(),
            });
        }
    }

    let p = terms.len();
    let mut alpha = vec![R::zero(); p];
    let log_lik = |alpha: &[R]| -> R {
        xs.iter()
            .zip(&zs)
            .map(|(x, &z)| {
                let t: R = x.iter().zip(alpha).map(|(&xi, &a)| xi * a).sum();
                let zr = if z { R::one() } else { R::zero() };
                zr * t - log1p_exp(t)
            })
            .sum()
    };
    let tol = IRLS_GRADIENT_TOL * zs.len() as f64;
    let mut iterations = 0;
    let mut gradient_norm = R::infinity();
    for _ in 0..IRLS_MAX_ITER {
        let mut grad = vec![R::zero(); p];
        let mut hess = vec![vec![R::zero(); p]; p];
        for (x, &z) in xs.iter().zip(&zs) {
            let t: R = x.iter().zip(&alpha).map(|(&xi, &a)| xi * a).sum();
            let pr = expit(t);
            let resid = if z { R::one() - pr } else { -pr };
            let w = pr * (R::one() - pr);
            for a in 0..p {
                grad[a] += x[a] * resid;
                for b in 0..p {
                    hess[a][b] += w * x[a] * x[b];
                }
            }
        }
        gradient_norm = norm(&grad);
        if gradient_norm.as_f64() < tol {
            return Ok(FittedPropensity::Logistic {
                terms: terms.to_vec(),
                alpha,
                iterations,
                gradient_norm,
            });
        }
        let step = linalg::solve(hess, grad)
            .map_err(|c| classify_logistic_failure(terms, &alpha, c))?;
        let ll0 = log_lik(&alpha);
        let mut t = R::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<R> = alpha
                .iter()
                .zip(&step)
                .map(|(&a, &s)| a + t * s)
                .collect();
            if log_lik(&cand) >= ll0 - R::of(1e-12) {
                alpha = cand;
                accepted = true;
                break;
            }
            t *= R::of(0.5);
        }
        if !accepted {
            break;
        }
        iterations += 1;
        // Close to the optimum the line search is deciding on round-off
        // in the log likelihood and can pin the iterate with the
        // gradient a shade above tolerance. A vanishing accepted step
        // inside the separation guard is convergence, not failure.
        if (t * norm(&step)).as_f64() < IRLS_STEP_TOL
            && alpha.iter().all(|a| a.abs().as_f64() <= SEPARATION_SCALE)
        {
            return Ok(FittedPropensity::Logistic {
                terms: terms.to_vec(),
                alpha,
                iterations,
                gradient_norm,
            });
        }
    }
    if alpha.iter().any(|a| a.abs().as_f64() > SEPARATION_SCALE) {
        let worst = worst_column(terms, &alpha);
        return Err(SelectionError::Separation { column: worst });
    }
    Err(SelectionError::PropensityDiverged {
        iterations,
        gradient_norm: gradient_norm.as_f64(),
    })
}

fn classify_logistic_failure<R: Real>(
    terms: &[PropTerm],
    alpha: &[R],
    column: usize,
) -> SelectionError {
    if alpha.iter().any(|a| a.abs().as_f64() > SEPARATION_SCALE) {
        SelectionError::Separation {
            column: worst_column(terms, alpha),
        }
    } else {
        SelectionError::PropensityRankDeficient {
            column: terms[column].label(),
        }
    }
}

fn worst_column<R: Real>(terms: &[PropTerm], alpha: &[R]) -> String {
    terms
        .iter()
        .zip(alpha)
        .filter(|(t, _)| !matches!(t, PropTerm::One))
        .max_by(|a, b| {
            a.1.abs()
                .partial_cmp(&b.1.abs())
                .expect("finite coefficients")
        })
        .map(|(t, _)| t.label())
        .unwrap_or_else(|| "1".into())
}

/// Per-cluster observed vs. expected treated counts under the fitted
/// law, the basic goodness-of-fit check for the treatment model.
#[derive(Debug, Clone, PartialEq)]
pub struct CountCheck<R> {
    pub cluster_id: String,
    pub size: usize,
    pub observed: usize,
    pub expected: R,
}

pub fn propensity_gof<R: Real>(
    data: &ClusterData<R>,
    fitted: &FittedPropensity<R>,
) -> Result<Vec<CountCheck<R>>, SelectionError> {
    data.clusters()
        .iter()
        .map(|c| {
            let n = c.members.len();
            let observed = c.members.iter().filter(|m| m.z).count();
            let expected = match fitted {
                FittedPropensity::Logistic { .. } => c
                    .members
                    .iter()
                    .map(|m| fitted.individual_prob(&m.l).expect("logistic form"))
                    .sum(),
                FittedPropensity::ExchangeableCount { by_size } => {
                    let pmf = by_size
                        .get(&n)
                        .ok_or(SelectionError::UnseenClusterSize { size: n })?;
                    pmf.iter()
                        .enumerate()
                        .map(|(t, &p)| p * R::of_usize(t))
                        .sum()
                }
            };
            Ok(CountCheck {
                cluster_id: c.cluster_id.clone(),
                size: n,
                observed,
                expected,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Step two: the estimating equation.

struct DesignRow<R> {
    x: Vec<R>,
    y: R,
    z: R,
    g: R,
    l: Vec<R>,
    ctx: MemberContext<R>,
}

struct Design<R> {
    rows: Vec<DesignRow<R>>,
    labels: Vec<String>,
    g_summary: SummaryKind,
    l_dim: usize,
    h_dim: usize,
}

fn build_design<R: Real>(
    data: &ClusterData<R>,
    model: &SelectionModel<R>,
    propensity: &FittedPropensity<R>,
) -> Result<Design<R>, SelectionError> {
    let features = cluster_features(data, model.g_summary, model.h_summary)?;
    let h_dim = features[0].h.len();
    for f in &features {
        if f.h.len() != h_dim {
            return Err(SelectionError::RaggedH {
                a: h_dim,
                b: f.h.len(),
            });
        }
    }
    model.validate(data.covariate_dim(), h_dim)?;
    let mut rows = Vec::with_capacity(features.len());
    for f in features {
        let g = f.g_scalar().ok_or(SelectionError::NonScalarSummary {
            got: model.g_summary.name(),
        })?;
        let z = if f.z { R::one() } else { R::zero() };
        let mut x: Vec<R> = model
            .direct_terms
            .iter()
            .map(|t| t.value(z, g, &f.l, &f.h))
            .collect();
        x.extend(model.spill_terms.iter().map(|t| t.value(g, &f.l, &f.h)));
        x.extend(model.baseline_terms.iter().map(|t| t.value(&f.l, &f.h)));
        let ctx = propensity.member_context(&data.clusters()[f.cluster_index], f.member_index)?;
        rows.push(DesignRow {
            x,
            y: f.y,
            z,
            g,
            l: f.l,
            ctx,
        });
    }
    Ok(Design {
        rows,
        labels: model.column_labels(),
        g_summary: model.g_summary,
        l_dim: data.covariate_dim(),
        h_dim,
    })
}

struct GeeSolution<R> {
    theta: Vec<R>,
    iterations: usize,
    residual_norm: R,
    step_norm: R,
}

fn solve_gee<R: Real>(design: &Design<R>, delta: &DeltaPair<R>) -> Result<GeeSolution<R>, SelectionError> {
    let p = design.labels.len();
    let adjusted: Vec<R> = design
        .rows
        .iter()
        .map(|r| r.y - delta_offset(delta, design.g_summary, r.z, r.g, &r.l, &r.ctx))
        .collect();
    let mut gram = vec![vec![R::zero(); p]; p];
    for r in &design.rows {
        for a in 0..p {
            for b in a..p {
                gram[a][b] += r.x[a] * r.x[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[a][b] = gram[b][a];
        }
    }
    let score = |theta: &[R]| -> Vec<R> {
        let mut f = vec![R::zero(); p];
        for (r, &adj) in design.rows.iter().zip(&adjusted) {
            let fitted: R = r.x.iter().zip(theta).map(|(&xi, &t)| xi * t).sum();
            let e = adj - fitted;
            for a in 0..p {
                f[a] += r.x[a] * e;
            }
        }
        f
    };

    let mut theta = vec![R::zero(); p];
    let mut trajectory: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let tol = GEE_SCORE_TOL * design.rows.len() as f64;
    for _ in 0..GEE_MAX_ITER {
        let f = score(&theta);
        let f_norm = norm(&f);
        trajectory.push(f_norm.as_f64());
        if f_norm.as_f64() < tol {
            return Ok(GeeSolution {
                theta,
                iterations,
                residual_norm: f_norm,
                step_norm: R::zero(),
            });
        }
        let step = linalg::solve(gram.clone(), f).map_err(|c| {
            SelectionError::SingularNormalEquations {
                column: design.labels[c].clone(),
            }
        })?;
        let mut t = R::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<R> = theta
                .iter()
                .zip(&step)
                .map(|(&th, &s)| th + t * s)
                .collect();
            if norm(&score(&cand)) <= f_norm * (R::one() - t * R::of(1e-4)) {
                accepted = Some((cand, t));
                break;
            }
            t *= R::of(0.5);
        }
        let Some((next, t)) = accepted else { break };
        let step_norm = t * norm(&step);
        theta = next;
        iterations += 1;
        if step_norm.as_f64() < GEE_STEP_TOL {
            let residual_norm = norm(&score(&theta));
            return Ok(GeeSolution {
                theta,
                iterations,
                residual_norm,
                step_norm,
            });
        }
    }
    let tail = trajectory.len().saturating_sub(8);
    Err(SelectionError::GeeDiverged {
        iterations,
        trajectory: trajectory[tail..].to_vec(),
    })
}

/// A converged two-step fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<R> {
    pub delta: DeltaPair<R>,
    pub params: SelectionParams<R>,
    pub propensity: FittedPropensity<R>,
    pub iterations: usize,
    pub residual_norm: R,
    pub step_norm: R,
    /// Cluster-bootstrap standard errors, when requested.
    pub bootstrap: Option<BootstrapSummary<R>>,
}

/// Solves the estimating equation at the model's delta, with the given
/// fitted treatment law plugged into the centering terms.
pub fn fit_gee<R: Real>(
    data: &ClusterData<R>,
    model: &SelectionModel<R>,
    propensity: &FittedPropensity<R>,
) -> Result<FitResult<R>, SelectionError> {
    let design = build_design(data, model, propensity)?;
    let sol = solve_gee(&design, &model.delta)?;
    Ok(FitResult {
        delta: model.delta,
        params: SelectionParams::from_flat(model, &sol.theta),
        propensity: propensity.clone(),
        iterations: sol.iterations,
        residual_norm: sol.residual_norm,
        step_norm: sol.step_norm,
        bootstrap: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary<R> {
    /// Per-parameter standard deviations across replicate refits.
    pub se: SelectionParams<R>,
    pub replicates: usize,
    /// Replicates whose two-step fit converged and entered the spread.
    pub used: usize,
}

/// Cluster bootstrap of the full two-step pipeline (treatment law refit
/// on every resample). Replicate streams are keyed by replicate index,
/// so results do not depend on execution order.
pub fn bootstrap_se<R: Real>(
    data: &ClusterData<R>,
    model: &SelectionModel<R>,
    spec: &BootstrapSpec,
) -> Result<BootstrapSummary<R>, SelectionError> {
    bootstrap_with_base(data, model, spec, 0)
}

fn bootstrap_with_base<R: Real>(
    data: &ClusterData<R>,
    model: &SelectionModel<R>,
    spec: &BootstrapSpec,
    entity_base: u64,
) -> Result<BootstrapSummary<R>, SelectionError> {
    let n = data.clusters().len();
    let mut draws: Vec<Vec<R>> = Vec::with_capacity(spec.replicates);
    for r in 0..spec.replicates {
        let mut rng = keyed_rng(spec.seed, entity_base + r as u64);
        let clusters = (0..n)
            .map(|_| data.clusters()[rng.random_range(0..n)].clone())
            .collect();
        let resampled =
            ClusterData::new(clusters, data.covariate_dim()).expect("resample of valid data");
        let refit = fit_propensity(&resampled, &model.propensity)
            .and_then(|prop| fit_gee(&resampled, model, &prop));
        if let Ok(fit) = refit {
            draws.push(fit.params.flat());
        }
    }
    if draws.len() < 2 {
        return Err(SelectionError::BootstrapUnstable {
            used: draws.len(),
            requested: spec.replicates,
        });
    }
    let p = draws[0].len();
    let se: Vec<R> = (0..p)
        .map(|c| {
            let col: Vec<R> = draws.iter().map(|d| d[c]).collect();
            sample_variance(&col).expect("at least two draws").sqrt()
        })
        .collect();
    Ok(BootstrapSummary {
        se: SelectionParams::from_flat(model, &se),
        replicates: spec.replicates,
        used: draws.len(),
    })
}

/// One sensitivity-sweep row: the delta pair it was fitted under and the
/// fit outcome. Failures are recorded per row so one bad grid point does
/// not abort the sweep.
#[derive(Debug)]
pub struct GeeSweepRow<R> {
    pub delta: DeltaPair<R>,
    pub result: Result<FitResult<R>, SelectionError>,
}

/// Refits the mean parameters at every delta pair in the grid. The
/// treatment law is fitted once (it does not involve delta) and shared;
/// the grid must contain the zero pair so the sweep is anchored at the
/// ignorability fit. With a bootstrap spec, replicate streams are keyed
/// by (row, replicate), so row results are order independent.
pub fn sensitivity_sweep<R: Real>(
    data: &ClusterData<R>,
    model: &SelectionModel<R>,
    grid: &[DeltaPair<R>],
    bootstrap: Option<&BootstrapSpec>,
) -> Result<Vec<GeeSweepRow<R>>, SelectionError> {
    if !grid.iter().any(DeltaPair::is_zero) {
        return Err(SelectionError::MissingZeroPair);
    }
    let propensity = fit_propensity(data, &model.propensity)?;
    let design = build_design(data, model, &propensity)?;
    let mut rows = Vec::with_capacity(grid.len());
    for (i, &delta) in grid.iter().enumerate() {
        let row_model = model.with_delta(delta);
        let result = row_model
            .validate(design.l_dim, design.h_dim)
            .and_then(|()| solve_gee(&design, &delta))
            .map(|sol| FitResult {
                delta,
                params: SelectionParams::from_flat(model, &sol.theta),
                propensity: propensity.clone(),
                iterations: sol.iterations,
                residual_norm: sol.residual_norm,
                step_norm: sol.step_norm,
                bootstrap: None,
            })
            .and_then(|mut fit| {
                if let Some(spec) = bootstrap {
                    fit.bootstrap = Some(bootstrap_with_base(
                        data,
                        &row_model,
                        spec,
                        (i as u64) << 32,
                    )?);
                }
                Ok(fit)
            });
        rows.push(GeeSweepRow { delta, result });
    }
    Ok(rows)
}
