use quadri_core::conditional_times::{
    conditional_moments, MomentMode, PairConditioning, TimeOptions,
};
use quadri_core::demography::{DemographicModel, Piece};
use quadri_core::quadrature::{integrate, QuadratureOptions};
use quadri_core::Error;

const N_REF: f64 = 1000.0;

fn families(td: f64) -> Vec<DemographicModel> {
    vec![
        DemographicModel::constant(N_REF, td).unwrap(),
        DemographicModel::new(N_REF, td, vec![Piece::exponential(0.0, 1.0, 1e-3)]).unwrap(),
        DemographicModel::new(N_REF, td, vec![Piece::constant(0.0, 1.0), Piece::constant(500.0, 2.0)]).unwrap(),
    ]
}

struct TwoLineage {
    lambda: f64,
    td: f64,
}

impl TwoLineage {
    fn norm(&self) -> f64 {
        1.0 - (-self.lambda * self.td).exp()
    }
    fn mean_t2(&self) -> f64 {
        let e = (-self.lambda * self.td).exp();
        1.0 / self.lambda - self.td * e / self.norm()
    }
    fn second_t2(&self) -> f64 {
        let (l, td) = (self.lambda, self.td);
        let e = (-l * td).exp();
        (2.0 / (l * l) - e * (td * td + 2.0 * td / l + 2.0 / (l * l))) / self.norm()
    }
}

#[test]
fn two_lineage_closed_forms() {
    for td in [50.0, 800.0, 5000.0] {
        let d = DemographicModel::constant(N_REF, td).unwrap();
        let exact = TwoLineage { lambda: 1.0 / (2.0 * N_REF), td };
        let opts = TimeOptions {
            rel_tol: 1e-10,
            joint_rel_tol: 1e-10,
            ..TimeOptions::default()
        };
        let pc = PairConditioning::new(&d, 2, 1, &opts).unwrap();
        let e2 = exact.mean_t2();
        assert!((pc.expected_time(2).unwrap() - e2).abs() < 1e-8 * td);
        assert!((pc.expected_time(1).unwrap() - (td - e2)).abs() < 1e-8 * td);

        let e22 = exact.second_t2();
        let e21 = td * e2 - e22;
        let e11 = td * td - 2.0 * td * e2 + e22;
        let tab = pc.moments().unwrap();
        for (j, k, want) in [(2, 2, e22), (2, 1, e21), (1, 2, e21), (1, 1, e11)] {
            let scalar = pc.joint_time_moment(j, k).unwrap();
            assert!(((scalar - want) / want).abs() < 1e-8, "td={td} ({j},{k}): {scalar} vs {want}");
            assert!(((tab.second_moment(j, k) - want) / want).abs() < 1e-8);
        }

        // occupancy of the single-lineage state
        for tau in [0.0, td / 3.0, td] {
            let want = (1.0 - (-exact.lambda * tau).exp()) / exact.norm();
            assert!((pc.occupancy_prob(1, tau).unwrap() - want).abs() < 1e-12);
        }

        for t in [0.0, td / 7.0, td / 2.0, td] {
            let want = exact.lambda * (-exact.lambda * t).exp() / exact.norm();
            let got = pc.conditional_density(2, t).unwrap();
            assert!(((got - want) / want).abs() < 1e-10);
        }
    }
}

#[test]
fn occupancy_endpoints() {
    for d in families(800.0) {
        let pc = PairConditioning::new(&d, 6, 3, &TimeOptions::default()).unwrap();
        assert!((pc.occupancy_prob(6, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((pc.occupancy_prob(3, 800.0).unwrap() - 1.0).abs() < 1e-12);
        let mut total = 0.0;
        for i in 3..=6 {
            total += pc.occupancy_prob(i, 321.0).unwrap();
        }
        assert!((total - 1.0).abs() < 1e-10);
    }
}

#[test]
fn partition_of_divergence_interval() {
    for d in families(800.0) {
        for n in 1..=8 {
            for m in 1..=n {
                let tab = conditional_moments(&d, n, m, &TimeOptions::default()).unwrap();
                let total: f64 = tab.first_moments().map(|(_, v)| v).sum();
                assert!((total - 800.0).abs() <= 1e-4 * 800.0, "N={n} M={m}: {total}");
                assert!(tab.first_moments().all(|(_, v)| v >= 0.0));
            }
        }
    }
}

#[test]
fn rare_conditioning_stays_accurate() {
    // P^{8,1} after 20 generations is around 1e-17, below float-series noise
    let d = DemographicModel::constant(N_REF, 20.0).unwrap();
    let tab = conditional_moments(&d, 8, 1, &TimeOptions::default()).unwrap();
    let total: f64 = tab.first_moments().map(|(_, v)| v).sum();
    assert!((total - 20.0).abs() <= 1e-4 * 20.0, "{total}");
    assert!(tab.first_moments().all(|(_, v)| v > 0.0));
    for (j, k, v) in tab.second_moments() {
        assert!(v > 0.0 && v <= 400.0, "({j},{k}) = {v}");
    }
}

#[test]
fn second_moment_bounds() {
    let td = 800.0;
    for d in families(td) {
        for (n, m) in [(5, 2), (6, 3), (8, 1), (7, 7)] {
            let tab = conditional_moments(&d, n, m, &TimeOptions::default()).unwrap();
            for j in m..=n {
                let ej = tab.first_moment(j);
                assert!(tab.second_moment(j, j) >= ej * ej * (1.0 - 1e-6));
                for k in m..=n {
                    let jk = tab.second_moment(j, k);
                    assert_eq!(jk, tab.second_moment(k, j));
                    assert!(jk >= 0.0 && jk <= td * td * (1.0 + 1e-6));
                    let cs = tab.second_moment(j, j) * tab.second_moment(k, k);
                    assert!(jk * jk <= cs * (1.0 + 1e-6) + 1e-8, "({j},{k})");
                }
            }
        }
    }
}

#[test]
fn table_matches_scalar_quadrature() {
    let d = &families(800.0)[2];
    let pc = PairConditioning::new(d, 5, 2, &TimeOptions::default()).unwrap();
    let tab = pc.moments().unwrap();
    for i in 2..=5 {
        let a = pc.expected_time(i).unwrap();
        assert!(((tab.first_moment(i) - a) / a).abs() < 1e-5);
    }
    for (j, k) in [(2, 2), (3, 2), (5, 4), (5, 2), (4, 4)] {
        let a = pc.joint_time_moment(j, k).unwrap();
        assert_eq!(a, pc.joint_time_moment(k, j).unwrap());
        assert!(((tab.second_moment(j, k) - a) / a).abs() < 5e-5, "({j},{k}): {} vs {a}", tab.second_moment(j, k));
    }
}

#[test]
fn densities_normalize_and_match_means() {
    let td = 800.0;
    let q = QuadratureOptions::with_rel_tol(1e-8);
    for d in families(td) {
        for n in 2..=8 {
            for m in 1..n {
                let pc = PairConditioning::new(&d, n, m, &TimeOptions::default()).unwrap();
                for i in m..=n {
                    let mass = integrate(|t| pc.conditional_density(i, t), 0.0, td, &[], &q).unwrap().value;
                    assert!((mass - 1.0).abs() < 1e-6, "N={n} M={m} i={i}: mass {mass}");
                    if n <= 6 {
                        let mean = integrate(|t| Ok(t * pc.conditional_density(i, t)?), 0.0, td, &[], &q)
                            .unwrap()
                            .value;
                        let e = pc.expected_time(i).unwrap();
                        assert!(((mean - e) / e).abs() < 1e-5, "N={n} M={m} i={i}: {mean} vs {e}");
                    }
                }
            }
        }
    }
}

#[test]
fn long_divergence_recovers_standard_interval_means() {
    // Λ(t_d)/(4N) = 20
    let td = 80.0 * N_REF;
    let d = DemographicModel::constant(N_REF, td).unwrap();
    let tab = conditional_moments(&d, 6, 1, &TimeOptions::default()).unwrap();
    for i in 2..=6 {
        let want = 4.0 * N_REF / (i * (i - 1)) as f64;
        assert!(((tab.first_moment(i) - want) / want).abs() < 0.01, "i={i}");
    }
}

#[test]
fn degenerate_divergence() {
    let d = DemographicModel::constant(N_REF, 0.0).unwrap();
    let tab = conditional_moments(&d, 4, 4, &TimeOptions::default()).unwrap();
    assert!(tab.first_moments().all(|(_, v)| v == 0.0));
    assert!(tab.second_moments().all(|(_, _, v)| v == 0.0));
    let err = conditional_moments(&d, 4, 2, &TimeOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ConditioningImpossible { .. }));

    let d = DemographicModel::constant(N_REF, 300.0).unwrap();
    let tab = conditional_moments(&d, 3, 3, &TimeOptions::default()).unwrap();
    assert_eq!(tab.first_moment(3), 300.0);
    assert_eq!(tab.second_moment(3, 3), 90000.0);
    let pc = PairConditioning::new(&d, 3, 3, &TimeOptions::default()).unwrap();
    assert!((pc.expected_time(3).unwrap() - 300.0).abs() < 1e-9);
    assert!(matches!(pc.conditional_density(3, 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn conditioning_impossible_is_reported() {
    // essentially certain to reach one lineage long before t_d
    let d = DemographicModel::constant(1.0, 1e5).unwrap();
    let err = PairConditioning::new(&d, 10, 8, &TimeOptions::default()).err().unwrap();
    assert!(matches!(err, Error::ConditioningImpossible { m: 8, .. }));
}

#[test]
fn argument_errors() {
    let d = DemographicModel::constant(N_REF, 100.0).unwrap();
    assert!(matches!(PairConditioning::new(&d, 3, 4, &TimeOptions::default()).err(), Some(Error::Argument(_))));
    let pc = PairConditioning::new(&d, 5, 2, &TimeOptions::default()).unwrap();
    assert!(pc.occupancy_prob(1, 10.0).is_err());
    assert!(pc.occupancy_prob(3, 101.0).is_err());
    assert!(pc.joint_time_moment(6, 2).is_err());
}

#[test]
fn unconditional_mode_is_truncated_occupancy() {
    let td = 800.0;
    let d = DemographicModel::constant(N_REF, td).unwrap();
    let opts = TimeOptions {
        mode: MomentMode::UnconditionalTruncated,
        ..TimeOptions::default()
    };
    let tab = conditional_moments(&d, 2, 1, &opts).unwrap();
    // E[min(T, t_d)] for an exponential coalescence time
    let lambda = 1.0 / (2.0 * N_REF);
    let want = (1.0 - (-lambda * td).exp()) / lambda;
    assert!(((tab.first_moment(2) - want) / want).abs() < 1e-6);
    assert!((tab.first_moment(1) + tab.first_moment(2) - td).abs() < 1e-4 * td);
}
