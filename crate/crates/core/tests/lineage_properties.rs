use proptest::prelude::*;
use quadri_core::demography::{DemographicModel, Piece};
use quadri_core::lineage::{lineage_count_distribution, lineage_count_prob, lineage_count_prob_between};

fn families(td: f64) -> Vec<DemographicModel> {
    vec![
        DemographicModel::constant(1000.0, td).unwrap(),
        DemographicModel::new(1000.0, td, vec![Piece::exponential(0.0, 1.0, -5e-4)]).unwrap(),
        DemographicModel::new(1000.0, td, vec![Piece::constant(0.0, 1.0), Piece::constant(td / 2.0, 2.0)]).unwrap(),
    ]
}

#[test]
fn normalization_up_to_thirty() {
    let td = 800.0;
    for d in families(td) {
        for n in 1..=30 {
            for t in [0.0, td / 4.0, td / 2.0, td, 10.0 * td] {
                let dist = lineage_count_distribution(&d, n, t).unwrap();
                assert!((dist.total() - 1.0).abs() <= 1e-8, "N={n} t={t}: {}", dist.total());
                for &p in &dist.probs {
                    assert!((-1e-10..=1.0 + 1e-10).contains(&p));
                }
            }
        }
    }
}

#[test]
fn long_time_limit_is_one_lineage() {
    // Λ(t)/(4N) = 20 under constant size
    let d = DemographicModel::constant(1000.0, 100.0).unwrap();
    let t = 20.0 * 4000.0;
    for n in [2, 5, 12, 40] {
        let dist = lineage_count_distribution(&d, n, t).unwrap();
        assert!((dist.prob(1) - 1.0).abs() < 1e-8);
        for m in 2..=n {
            assert!(dist.prob(m).abs() < 1e-8);
        }
    }
}

#[test]
fn sample_intact_at_time_zero() {
    let d = DemographicModel::constant(1000.0, 100.0).unwrap();
    for n in [1, 3, 30, 31, 80] {
        assert_eq!(lineage_count_prob(&d, n, n, 0.0).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chapman_kolmogorov(n in 2usize..=18, m_frac in 0.0f64..1.0, s_frac in 0.0f64..1.0, t in 1.0f64..4000.0) {
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let s = t * s_frac;
        for d in families(2000.0) {
            let direct = lineage_count_prob(&d, n, m, t).unwrap();
            let mut via = 0.0;
            for k in m..=n {
                via += lineage_count_prob_between(&d, n, k, 0.0, s).unwrap()
                    * lineage_count_prob_between(&d, k, m, s, t).unwrap();
            }
            prop_assert!((direct - via).abs() < 1e-7, "N={} M={} s={} t={}: {} vs {}", n, m, s, t, direct, via);
        }
    }

    #[test]
    fn entries_are_probabilities(n in 1usize..=45, t in 0.0f64..20000.0) {
        for d in families(2000.0) {
            let dist = lineage_count_distribution(&d, n, t).unwrap();
            prop_assert!((dist.total() - 1.0).abs() < 1e-8);
            prop_assert!(dist.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
