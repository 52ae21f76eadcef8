//! Property checks for the effect decomposition: the total contrast
//! always recombines from its parts, and the overall contrast does
//! whenever every group under a label shares one coverage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spillover::data::{GroupSummary, TrialTable};
use spillover::estimands::decomposition;

fn group(id: usize, label: &str, n_treated: u64, n_control: u64, rng: &mut ChaCha8Rng) -> GroupSummary {
    GroupSummary {
        group_id: format!("g{id}"),
        assignment: label.to_string(),
        n_treated,
        cases_treated: rng.random_range(0..=n_treated),
        n_control,
        cases_control: rng.random_range(0..=n_control),
    }
}

fn random_table(rng: &mut ChaCha8Rng, shared_coverage: bool) -> TrialTable {
    let mut rows = Vec::new();
    let mut id = 0;
    for label in ["a", "b"] {
        let (t_unit, c_unit) = (rng.random_range(1..=20u64), rng.random_range(1..=20u64));
        for _ in 0..rng.random_range(1..=5) {
            id += 1;
            let (nt, nc) = if shared_coverage {
                let m = rng.random_range(1..=30u64);
                (t_unit * m, c_unit * m)
            } else {
                (rng.random_range(1..=500), rng.random_range(1..=500))
            };
            rows.push(group(id, label, nt, nc, rng));
        }
    }
    TrialTable::new(rows).unwrap()
}

#[test]
fn total_always_recombines_from_direct_and_indirect() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let table = random_table(&mut rng, false);
        let d = decomposition::<f64>(&table, "a", "b").unwrap();
        assert!(
            d.residual_total.abs() <= 1e-12,
            "table {i}: residual {}",
            d.residual_total
        );
    }
}

#[test]
fn overall_recombines_when_coverages_are_shared_within_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let table = random_table(&mut rng, true);
        let d = decomposition::<f64>(&table, "a", "b").unwrap();
        assert!(
            d.residual_overall.abs() <= 1e-12,
            "table {i}: residual {}",
            d.residual_overall
        );
    }
}

#[test]
fn unequal_coverages_generally_leave_an_overall_residual() {
    // The overall identity is a coverage identity, not an algebraic one:
    // with lopsided arms it must be allowed to fail, otherwise the
    // residual would be vacuous as a diagnostic.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonzero = 0;
    for _ in 0..100 {
        let table = random_table(&mut rng, false);
        let d = decomposition::<f64>(&table, "a", "b").unwrap();
        if d.residual_overall.abs() > 1e-6 {
            nonzero += 1;
        }
    }
    assert!(nonzero > 50, "only {nonzero} of 100 tables had a residual");
}
