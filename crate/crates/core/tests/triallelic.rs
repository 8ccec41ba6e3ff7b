use proptest::prelude::*;
use quadri_core::conditional_times::{conditional_moments, ConditionalTimeMoments, TimeOptions};
use quadri_core::demography::{DemographicModel, Piece};
use quadri_core::oracle::{estimate_pair_events, OracleOptions};
use quadri_core::sample::PairModel;
use quadri_core::triallelic::{
    event_prob, event_prob_with, event_weight, joint_config_prob, joint_config_weight, MutationModel, OuterRange,
};

const RANGES: [OuterRange; 2] = [OuterRange::Standard, OuterRange::IncludeTerminal];

fn compositions(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (1..n).flat_map(move |a| (1..n - a).map(move |x| (a, x, n - a - x)))
}

fn joint_total(n: usize, m: usize, index: u8, moments: &ConditionalTimeMoments, range: OuterRange) -> f64 {
    compositions(n)
        .map(|c| joint_config_weight(&PairModel::new(index, m, c).unwrap(), moments, range).unwrap())
        .sum()
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn synthetic_table(n: usize, m: usize, seed: &[f64]) -> ConditionalTimeMoments {
    let first = (m..=n).map(|i| 100.0 + i as f64).collect();
    ConditionalTimeMoments::from_tables(n, m, 500.0, 1000.0, first, |j, k| {
        1.0 + seed[(j * 31 + k * 7) % seed.len()] * 1e4
    })
    .unwrap()
}

#[test]
fn joint_sums_to_event_for_computed_moments() {
    let demog = DemographicModel::new(
        1000.0,
        600.0,
        vec![Piece::constant(0.0, 1.0), Piece::exponential(200.0, 1.0, -2e-3)],
    )
    .unwrap();
    let opts = TimeOptions::default();
    for n in 3..=10 {
        for m in 1..=n {
            let moments = conditional_moments(&demog, n, m, &opts).unwrap();
            for range in RANGES {
                let event = event_weight(&PairModel::new(1, m, (n - 2, 1, 1)).unwrap(), &moments, range).unwrap();
                for index in 1..=3u8 {
                    let total = joint_total(n, m, index, &moments, range);
                    assert!(
                        relative_gap(total, event) < 1e-10,
                        "N={n} M={m} model {index} {range:?}: {total} vs {event}"
                    );
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn joint_sums_to_event_for_any_table(n in 3usize..=12, m_frac in 0.0f64..1.0, seed in prop::collection::vec(0.0f64..1.0, 13)) {
        let m = 1 + ((n as f64) * m_frac) as usize % n;
        let moments = synthetic_table(n, m, &seed);
        for range in RANGES {
            let event = event_weight(&PairModel::new(2, m, (1, 1, n - 2)).unwrap(), &moments, range).unwrap();
            let total = joint_total(n, m, 2, &moments, range);
            prop_assert!(relative_gap(total, event) < 1e-10, "{total} vs {event}");
        }
    }
}

#[test]
fn exactly_quadratic_in_theta() {
    let demog = DemographicModel::constant(1000.0, 400.0).unwrap();
    let moments = conditional_moments(&demog, 6, 2, &TimeOptions::default()).unwrap();
    let pm = PairModel::new(3, 2, (3, 2, 1)).unwrap();
    let base = MutationModel::uniform(1e-3).unwrap();
    for factor in [2.0, 10.0, 0.5] {
        let scaled = base.with_theta(1e-3 * factor).unwrap();
        type Prob = fn(&PairModel, &MutationModel, &ConditionalTimeMoments) -> quadri_core::Result<f64>;
        for (f, label) in [(joint_config_prob as Prob, "joint"), (event_prob as Prob, "event")] {
            let a = f(&pm, &base, &moments).unwrap();
            let b = f(&pm, &scaled, &moments).unwrap();
            assert!(relative_gap(b / a, factor * factor) < 1e-13, "{label}: ratio {}", b / a);
        }
    }
}

#[test]
fn silent_channel_and_missing_allele_give_zero() {
    let demog = DemographicModel::constant(1000.0, 400.0).unwrap();
    let moments = conditional_moments(&demog, 5, 2, &TimeOptions::default()).unwrap();
    let mut p = [[0.0; 4]; 4];
    p[0] = [0.0, 0.0, 0.5, 0.5];
    for row in p.iter_mut().skip(1) {
        row[0] = 1.0;
    }
    let mm = MutationModel::new(p, 0.01).unwrap();
    let pm = PairModel::new(1, 2, (3, 1, 1)).unwrap();
    assert_eq!(joint_config_prob(&pm, &mm, &moments).unwrap(), 0.0);
    assert_eq!(event_prob(&pm, &mm, &moments).unwrap(), 0.0);

    let uniform = MutationModel::uniform(0.01).unwrap();
    let missing = PairModel::new(1, 2, (4, 1, 0)).unwrap();
    assert_eq!(joint_config_prob(&missing, &uniform, &moments).unwrap(), 0.0);
    assert!(event_prob(&missing, &uniform, &moments).unwrap() > 0.0);
}

#[test]
fn full_count_has_empty_standard_range() {
    let demog = DemographicModel::constant(1000.0, 100.0).unwrap();
    let opts = TimeOptions::default();
    let moments = conditional_moments(&demog, 4, 4, &opts).unwrap();
    let pm = PairModel::new(1, 4, (2, 1, 1)).unwrap();
    let mm = MutationModel::uniform(0.01).unwrap();
    assert_eq!(event_prob(&pm, &mm, &moments).unwrap(), 0.0);
    // with M = N every lineage persists to t_d; only the terminal term remains
    let terminal = event_prob_with(&pm, &mm, &moments, OuterRange::IncludeTerminal).unwrap();
    let expected = 0.25 * 0.01f64.powi(2) / 9.0 * (4.0 * 3.0 / 2.0) * (100.0f64 / 2000.0).powi(2);
    assert!(relative_gap(terminal, expected) < 1e-12, "{terminal} vs {expected}");
}

#[test]
fn table_mismatch_is_rejected() {
    let demog = DemographicModel::constant(1000.0, 400.0).unwrap();
    let moments = conditional_moments(&demog, 5, 2, &TimeOptions::default()).unwrap();
    let mm = MutationModel::uniform(0.01).unwrap();
    let wrong_m = PairModel::new(1, 3, (3, 1, 1)).unwrap();
    let wrong_n = PairModel::new(1, 2, (4, 1, 1)).unwrap();
    assert!(joint_config_prob(&wrong_m, &mm, &moments).is_err());
    assert!(event_prob(&wrong_n, &mm, &moments).is_err());
}

/// Analytic value against the simulated stratum with the matching lineage
/// count at `t_d`.
fn stratum_z(n_counts: (usize, usize, usize), m: usize, td: f64, theta: f64, range: OuterRange, reps: u64) -> (f64, f64) {
    let demog = DemographicModel::constant(1000.0, td).unwrap();
    let pm = PairModel::new(1, m, n_counts).unwrap();
    let mm = MutationModel::uniform(theta).unwrap();
    let moments = conditional_moments(&demog, pm.sample_size, m, &TimeOptions::default()).unwrap();
    let analytic = event_prob_with(&pm, &mm, &moments, range).unwrap();
    let est = estimate_pair_events(&pm, &[pm.sample_size], &demog, &mm, reps, 17, &OracleOptions::default()).unwrap();
    let s = est.stratum(m).unwrap();
    (analytic, s.event.z_score(analytic))
}

#[test]
fn event_matches_simulation_when_one_lineage_remains() {
    let (analytic, z) = stratum_z((1, 1, 1), 1, 4000.0, 0.05, OuterRange::Standard, 2_000_000);
    assert!(analytic > 0.0);
    assert!(z.abs() < 4.0, "z = {z}");
}

#[test]
fn terminal_term_matches_simulation_when_no_lineage_coalesces() {
    let (analytic, z) = stratum_z((2, 1, 1), 4, 150.0, 0.05, OuterRange::IncludeTerminal, 2_000_000);
    assert!(analytic > 0.0);
    assert!(z.abs() < 4.0, "z = {z}");
}
