//! Household worlds as an oracle for the selection adjusters: fed the
//! world's own parameter, every parameterization must land back on the
//! doomed-stratum risk, analytically and from simulated records; and on
//! worlds where the protected stratum is no riskier than the doomed one,
//! the naive contrast must understate the effect on every scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use spillover::data::{summarize_households, HouseholdRecord};
use spillover::infectiousness::{
    adjust, crude_effect, monotonicity_bounds, SensitivityKind,
};
use spillover::sim::{simulate_households, HouseholdWorld};
use spillover::InfectStudy;

const KINDS: [SensitivityKind; 3] = [
    SensitivityKind::Theta,
    SensitivityKind::Gamma,
    SensitivityKind::Beta,
];

fn random_world(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> HouseholdWorld<f64> {
    let doomed = rng.random_range(0.15..0.5);
    let protected = rng.random_range(0.15..0.45);
    let immune = 1.0 - doomed - protected;
    HouseholdWorld::new(
        (doomed, protected, immune),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(0.0..0.2),
    )
    .unwrap()
}

fn true_param(t: &spillover::sim::HouseholdTruth<f64>, kind: SensitivityKind) -> f64 {
    match kind {
        SensitivityKind::Theta => t.theta,
        SensitivityKind::Gamma => t.gamma,
        SensitivityKind::Beta => t.beta,
    }
}

#[test]
fn adjusters_recover_planted_worlds_analytically() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..20 {
        let w = random_world(&mut rng, 0.05, 0.95);
        let t = w.truth().unwrap();
        let study = InfectStudy::new(t.p1, t.p0, t.attack1, t.attack0, 0).unwrap();
        for kind in KINDS {
            let got = adjust(&study, kind, true_param(&t, kind)).unwrap().p_u;
            assert!(
                (got - t.p_u).abs() <= 1e-10,
                "world {i}, {}: {got} vs {}",
                kind.name(),
                t.p_u
            );
        }
        // Monotonicity alone brackets the risk.
        let b = monotonicity_bounds(&study).unwrap();
        assert!(b.upper.effect.p_u <= t.p_u + 1e-12, "world {i}: upper");
        assert!(b.lower.effect.p_u >= t.p_u - 1e-12, "world {i}: lower");
    }
}

/// Cell counts behind a summarized study.
struct Cells {
    m1: u64,
    m0: u64,
    k1: u64,
    k0: u64,
    j1: u64,
    j0: u64,
}

fn count_cells(records: &[HouseholdRecord]) -> Cells {
    let mut c = Cells { m1: 0, m0: 0, k1: 0, k0: 0, j1: 0, j0: 0 };
    for r in records {
        if r.z1 {
            c.m1 += 1;
            c.k1 += u64::from(r.y1);
            c.j1 += u64::from(r.y1 && r.y2);
        } else {
            c.m0 += 1;
            c.k0 += u64::from(r.y1);
            c.j0 += u64::from(r.y1 && r.y2);
        }
    }
    c
}

/// Standard error of each adjusted estimate under a parametric resample
/// of the four binomial cells at the observed rates.
fn bootstrap_ses(cells: &Cells, params: [f64; 3], draws: usize, seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ratio = |num: u64, den: u64| num as f64 / den as f64;
    let mut samples: [Vec<f64>; 3] = Default::default();
    for _ in 0..draws {
        let k1 = Binomial::new(cells.m1, ratio(cells.k1, cells.m1)).unwrap().sample(&mut rng);
        let k0 = Binomial::new(cells.m0, ratio(cells.k0, cells.m0)).unwrap().sample(&mut rng);
        let j1 = Binomial::new(k1, ratio(cells.j1, cells.k1)).unwrap().sample(&mut rng);
        let j0 = Binomial::new(k0, ratio(cells.j0, cells.k0)).unwrap().sample(&mut rng);
        let study = InfectStudy::new(
            ratio(j1, k1),
            ratio(j0, k0),
            ratio(k1, cells.m1),
            ratio(k0, cells.m0),
            (cells.m1 + cells.m0) as usize,
        )
        .unwrap();
        for (kind, (param, out)) in KINDS.iter().zip(params.iter().zip(&mut samples)) {
            out.push(adjust(&study, *kind, *param).unwrap().p_u);
        }
    }
    samples.map(|s| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        (s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (s.len() - 1) as f64).sqrt()
    })
}

#[test]
fn adjusters_recover_a_simulated_world_within_monte_carlo_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = random_world(&mut rng, 0.15, 0.85);
    let t = w.truth().unwrap();
    let records = simulate_households(&w, 200_000, 17);
    let study = summarize_households::<f64>(&records).unwrap();
    let params = KINDS.map(|k| true_param(&t, k));
    let ses = bootstrap_ses(&count_cells(&records), params, 200, 18);
    for (kind, (param, se)) in KINDS.iter().zip(params.iter().zip(ses)) {
        let got = adjust(&study, *kind, *param).unwrap().p_u;
        assert!(
            (got - t.p_u).abs() <= 3.0 * se,
            "{}: {got} vs {} (se {se})",
            kind.name(),
            t.p_u
        );
    }
}

#[test]
fn benign_protected_stratum_makes_the_naive_contrast_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..20 {
        let mut w = random_world(&mut rng, 0.05, 0.95);
        if w.q_protected_u > w.q_doomed_u {
            std::mem::swap(&mut w.q_protected_u, &mut w.q_doomed_u);
        }
        assert!(w.selection_is_conservative());
        let t = w.truth().unwrap();
        let study = InfectStudy::new(t.p1, t.p0, t.attack1, t.attack0, 0).unwrap();
        let crude = crude_effect(&study);
        let causal = spillover::infectiousness::InfectEffect { p_v: t.p_v, p_u: t.p_u };
        assert!(crude.risk_difference() >= causal.risk_difference() - 1e-12, "world {i}: rd");
        assert!(
            crude.risk_ratio().unwrap() >= causal.risk_ratio().unwrap() - 1e-12,
            "world {i}: rr"
        );
        assert!(
            crude.odds_ratio().unwrap() >= causal.odds_ratio().unwrap() - 1e-12,
            "world {i}: or"
        );
        assert!(
            crude.efficacy().unwrap() <= causal.efficacy().unwrap() + 1e-12,
            "world {i}: efficacy"
        );
    }
}
