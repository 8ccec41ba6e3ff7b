//! Leading-order probabilities of two non-nested mutations within one
//! pairwise model.
//!
//! Both quantities are `θ²/4 · P_{a,x} · P_{a,y}` times a weighted sum of
//! second moments of the interval lengths, measured in units of `2N_ref`
//! generations. The event counted is ordered: the older of the two mutations
//! produces allele `x`, the younger produces `y`. Terms of order `θ³` are
//! dropped, so results are exactly homogeneous of degree two in `θ`.

use serde::{Deserialize, Serialize};

use crate::conditional_times::ConditionalTimeMoments;
use crate::error::{Error, Result};
use crate::sample::{Allele, PairModel};

const ROW_TOLERANCE: f64 = 1e-12;

/// Lower end of the outer sum over interval index `k`.
///
/// `Standard` starts at `M + 1`. That leaves out the pair of mutations both
/// falling in the last interval before `t_d` (`j = k = M`), which is
/// identically zero for `M <= 2` but not for larger `M`; `IncludeTerminal`
/// starts at `M` and adds it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterRange {
    #[default]
    Standard,
    IncludeTerminal,
}

impl OuterRange {
    fn start(self, m: usize) -> usize {
        match self {
            OuterRange::Standard => m + 1,
            OuterRange::IncludeTerminal => m.max(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationModel {
    transition: [[f64; 4]; 4],
    theta: f64,
}

impl MutationModel {
    pub fn new(transition: [[f64; 4]; 4], theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::Argument(format!("theta must be finite and non-negative, got {theta}")));
        }
        for (r, row) in transition.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Argument(format!("transition row {r} has entry {v} outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Argument(format!("transition row {r} sums to {sum}, not 1")));
            }
        }
        if theta > 0.1 {
            log::warn!("theta = {theta}: the two-mutation expansion assumes theta << 1");
        }
        Ok(Self { transition, theta })
    }

    /// Every mutation picks one of the other three alleles uniformly.
    pub fn uniform(theta: f64) -> Result<Self> {
        let mut p = [[1.0 / 3.0; 4]; 4];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        // rows of thirds sum to 1 within one ulp
        Self::new(p, theta)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn transition(&self) -> &[[f64; 4]; 4] {
        &self.transition
    }

    pub fn prob(&self, from: Allele, to: Allele) -> f64 {
        self.transition[from.index()][to.index()]
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.transition, theta)
    }

    /// Relabel alleles: `b → c → d → b`, matching a rotation of population
    /// roles.
    pub fn rotated(&self) -> Self {
        let perm = [0usize, 2, 3, 1];
        let mut p = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                p[perm[i]][perm[j]] = self.transition[i][j];
            }
        }
        Self {
            transition: p,
            theta: self.theta,
        }
    }

    fn prefactor(&self, pm: &PairModel) -> f64 {
        let (x, y) = pm.derived_pair;
        0.25 * self.theta * self.theta * self.prob(Allele::A, x) * self.prob(Allele::A, y)
    }
}

/// Binomial coefficients as f64, zero outside `0 <= q <= p`.
struct Pascal {
    rows: Vec<Vec<f64>>,
}

impl Pascal {
    fn new(max: usize) -> Self {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(max + 1);
        for p in 0..=max {
            let mut row = vec![1.0; p + 1];
            for q in 1..p {
                row[q] = rows[p - 1][q - 1] + rows[p - 1][q];
            }
            rows.push(row);
        }
        Self { rows }
    }

    fn get(&self, p: i64, q: i64) -> f64 {
        if p < 0 || q < 0 || q > p {
            return 0.0;
        }
        self.rows[p as usize][q as usize]
    }
}

fn check_table(pm: &PairModel, moments: &ConditionalTimeMoments) -> Result<()> {
    if moments.sample_size != pm.sample_size || moments.divergence_count != pm.divergence_count {
        return Err(Error::Argument(format!(
            "moment table built for (N, M) = ({}, {}) but model {} needs ({}, {})",
            moments.sample_size, moments.divergence_count, pm.index, pm.sample_size, pm.divergence_count
        )));
    }
    Ok(())
}

fn delta(a: usize, b: usize) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// The moment sum behind [`joint_config_prob`], without the `θ²/4 · P P`
/// prefactor. Zero unless all three alleles are present.
pub fn joint_config_weight(pm: &PairModel, moments: &ConditionalTimeMoments, range: OuterRange) -> Result<f64> {
    check_table(pm, moments)?;
    if !pm.is_triallelic() {
        return Ok(0.0);
    }
    let (n, m) = (pm.sample_size, pm.divergence_count);
    let (na, nx, _) = pm.counts;
    let pascal = Pascal::new(n);
    let c = |p: usize, q: i64| pascal.get(p as i64, q);
    let k_max = n.min(na + nx + 1);

    let mut total = 0.0;
    for k in range.start(m)..=k_max {
        let (ki, denom_n) = (k as i64, c(n - 1, k as i64 - 1));
        for j in m..=k {
            let ji = j as i64;
            let mut inner = 0.0;
            for l in (ji - 2)..=(ki - 2) {
                let num = pascal.get(na as i64 - 1, l - 1) * pascal.get(nx as i64 - 1, ki - l - 2) * pascal.get(ki - ji, ki - l - 2);
                if num == 0.0 {
                    continue;
                }
                inner += num / (denom_n * pascal.get(ki - 1, l + 1));
            }
            if inner == 0.0 {
                continue;
            }
            let pair = (j * (j - 1)) as f64 / (1.0 + delta(j, k));
            total += inner * pair * moments.scaled_second_moment(j, k);
        }
    }
    Ok(total)
}

/// The moment sum behind [`event_prob`], without the prefactor.
pub fn event_weight(pm: &PairModel, moments: &ConditionalTimeMoments, range: OuterRange) -> Result<f64> {
    check_table(pm, moments)?;
    let (n, m) = (pm.sample_size, pm.divergence_count);
    let mut total = 0.0;
    for k in range.start(m)..=n {
        for j in m..=k {
            let w = (k * (j - 1)) as f64 - 2.0 * delta(j, 2) / (k - 1) as f64;
            total += w / (1.0 + delta(j, k)) * moments.scaled_second_moment(j, k);
        }
    }
    Ok(total)
}

/// `Pr[N = N^a + N^x + N^y, E_xy]` to leading order in `θ`.
pub fn joint_config_prob(pm: &PairModel, mm: &MutationModel, moments: &ConditionalTimeMoments) -> Result<f64> {
    joint_config_prob_with(pm, mm, moments, OuterRange::Standard)
}

pub fn joint_config_prob_with(
    pm: &PairModel,
    mm: &MutationModel,
    moments: &ConditionalTimeMoments,
    range: OuterRange,
) -> Result<f64> {
    Ok(mm.prefactor(pm) * joint_config_weight(pm, moments, range)?)
}

/// `Pr[E_xy]` to leading order in `θ`.
pub fn event_prob(pm: &PairModel, mm: &MutationModel, moments: &ConditionalTimeMoments) -> Result<f64> {
    event_prob_with(pm, mm, moments, OuterRange::Standard)
}

pub fn event_prob_with(
    pm: &PairModel,
    mm: &MutationModel,
    moments: &ConditionalTimeMoments,
    range: OuterRange,
) -> Result<f64> {
    Ok(mm.prefactor(pm) * event_weight(pm, moments, range)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pascal_support() {
        let p = Pascal::new(10);
        assert_eq!(p.get(5, 2), 10.0);
        assert_eq!(p.get(10, 0), 1.0);
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(-1, 0), 0.0);
        assert_eq!(p.get(3, -1), 0.0);
        assert_eq!(p.get(3, 4), 0.0);
    }

    #[test]
    fn transition_validation() {
        let mut p = [[0.25; 4]; 4];
        assert!(MutationModel::new(p, 0.01).is_ok());
        p[2][1] = 0.3;
        assert!(MutationModel::new(p, 0.01).is_err());
        assert!(MutationModel::new([[0.25; 4]; 4], -1.0).is_err());
        assert!(MutationModel::new([[0.25; 4]; 4], f64::NAN).is_err());
        let mut neg = [[0.0, 0.5, 0.5, 0.0]; 4];
        neg[0] = [-0.1, 0.6, 0.5, 0.0];
        assert!(MutationModel::new(neg, 0.01).is_err());
    }

    #[test]
    fn rotation_moves_allele_roles() {
        let mut p = [[0.0; 4]; 4];
        p[0] = [0.1, 0.2, 0.3, 0.4];
        for (i, row) in p.iter_mut().enumerate().skip(1) {
            row[i] = 1.0;
        }
        let mm = MutationModel::new(p, 0.01).unwrap();
        let r = mm.rotated();
        assert_eq!(r.prob(Allele::A, Allele::C), 0.2);
        assert_eq!(r.prob(Allele::A, Allele::D), 0.3);
        assert_eq!(r.prob(Allele::A, Allele::B), 0.4);
    }
}
