//! Distribution of the number of ancestral lineages of a sample.
//!
//! A sample of `N` lineages at time 0 loses lineages by pairwise coalescence;
//! the probability that exactly `M` remain after intensity `Λ` is the
//! alternating series
//!
//! ```text
//! P^{N,M} = Σ_{i=M}^{N} c^{N,M,i} exp(-i(i-1) Λ / 4N_ref)
//! ```
//!
//! Small samples are summed in f64 with compensation; samples above
//! [`LineageOptions::exact_above`] use exact rational coefficients and
//! fixed-point decay factors.

mod fixed;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::demography::DemographicModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineageOptions {
    /// Largest sample size accepted.
    pub max_sample_size: usize,
    /// Samples larger than this use the exact-coefficient path.
    pub exact_above: usize,
}

impl Default for LineageOptions {
    fn default() -> Self {
        Self {
            max_sample_size: 100,
            exact_above: 20,
        }
    }
}

fn check_indices(n: usize, m: usize, i: usize) -> Result<()> {
    if !(1 <= m && m <= i && i <= n) {
        return Err(Error::Argument(format!("need 1 <= M <= i <= N, got N = {n}, M = {m}, i = {i}")));
    }
    Ok(())
}

fn big(v: usize) -> BigInt {
    BigInt::from(v)
}

/// Exact `c^{N,M,i}`, evaluated straight from the product formula.
pub fn tavare_coefficient_exact(n: usize, m: usize, i: usize) -> Result<BigRational> {
    check_indices(n, m, i)?;
    let mut num = big(2 * i - 1);
    for q in 0..i - 1 {
        num *= big(m + q);
    }
    for q in 0..i {
        num *= big(n - q);
    }
    let mut den = BigInt::one();
    for q in 2..=m {
        den *= big(q);
    }
    for q in 2..=(i - m) {
        den *= big(q);
    }
    for q in 0..i {
        den *= big(n + q);
    }
    if (i - m) % 2 == 1 {
        num = -num;
    }
    Ok(BigRational::new(num, den))
}

/// `c^{N,M,i}` rounded to f64.
pub fn tavare_coefficient(n: usize, m: usize, i: usize) -> Result<f64> {
    Ok(tavare_coefficient_exact(n, m, i)?.to_f64().unwrap_or(f64::NAN))
}

/// Coefficients `c^{N,M,i}` for `i = M..=N`, by the term-ratio recurrence.
fn coefficient_row(n: usize, m: usize) -> Vec<BigRational> {
    let mut row = Vec::with_capacity(n - m + 1);
    let mut c = tavare_coefficient_exact(n, m, m).expect("valid indices");
    row.push(c.clone());
    for i in m..n {
        let num = -(big(2 * i + 1) * big(m + i - 1) * big(n - i));
        let den = big(2 * i - 1) * big(i + 1 - m) * big(n + i);
        c = c * BigRational::new(num, den);
        row.push(c.clone());
    }
    row
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Clamp a raw probability that is within rounding of `[0, 1]`; reject
/// anything further out.
fn finish(raw: f64, n: usize, m: usize) -> Result<f64> {
    if !raw.is_finite() || raw < -1e-6 || raw > 1.0 + 1e-6 {
        return Err(Error::NumericalInstability {
            context: format!("P^{{{n},{m}}}"),
            value: raw,
        });
    }
    if (-1e-9..0.0).contains(&raw) {
        Ok(0.0)
    } else if raw > 1.0 && raw <= 1.0 + 1e-9 {
        Ok(1.0)
    } else {
        Ok(raw)
    }
}

enum Row {
    Float(Vec<f64>),
    Fixed(Vec<BigInt>),
}

/// Precomputed coefficient rows for every `1 <= M <= N <= max_n`.
pub struct LineageKernel {
    opts: LineageOptions,
    max_n: usize,
    rows: Vec<Row>,
    bits: u32,
}

/// Decay factors `exp(-i(i-1) x)` for `i = 1..=max_n` at one scaled intensity.
pub struct Decays {
    x: f64,
    float: Vec<f64>,
    fixed: Vec<BigInt>,
}

impl Decays {
    pub fn get(&self, i: usize) -> f64 {
        self.float[i - 1]
    }
}

fn row_index(n: usize, m: usize) -> usize {
    (n - 1) * n / 2 + (m - 1)
}

impl LineageKernel {
    pub fn new(max_n: usize, opts: LineageOptions) -> Result<Self> {
        if max_n == 0 {
            return Err(Error::Argument("sample size must be at least 1".into()));
        }
        if max_n > opts.max_sample_size {
            return Err(Error::Argument(format!(
                "sample size {max_n} exceeds the configured cap of {}",
                opts.max_sample_size
            )));
        }
        if max_n > 100 {
            log::warn!("sample size {max_n} above 100: exact rational coefficient cost grows quickly");
        }
        let mut exact_rows = Vec::new();
        let mut max_bits = 0u64;
        for n in 1..=max_n {
            for m in 1..=n {
                let row = coefficient_row(n, m);
                if n > opts.exact_above {
                    for c in &row {
                        let mag = c.abs();
                        let int_bits = (mag.numer() / mag.denom()).bits();
                        max_bits = max_bits.max(int_bits + 1);
                    }
                }
                exact_rows.push((n, row));
            }
        }
        let bits = (max_bits as u32) + 96;
        let rows = exact_rows
            .into_iter()
            .map(|(n, row)| {
                if n > opts.exact_above {
                    Row::Fixed(row.iter().map(|c| fixed::to_fixed(c, bits)).collect())
                } else {
                    Row::Float(row.iter().map(|c| c.to_f64().unwrap_or(f64::NAN)).collect())
                }
            })
            .collect();
        Ok(Self {
            opts,
            max_n,
            rows,
            bits,
        })
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn coefficient(&self, n: usize, m: usize, i: usize) -> Result<f64> {
        check_indices(n, m, i)?;
        match &self.rows[row_index(n, m)] {
            Row::Float(r) => Ok(r[i - m]),
            Row::Fixed(r) => Ok(fixed::fixed_to_f64(&r[i - m], self.bits)),
        }
    }

    /// Decay factors at scaled intensity `x = ΔΛ / 4N_ref`.
    pub fn decays(&self, x: f64) -> Result<Decays> {
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::Domain(format!("scaled intensity must be finite and non-negative, got {x}")));
        }
        let float = (1..=self.max_n).map(|i| (-((i * (i - 1)) as f64) * x).exp()).collect();
        let fixed = if self.max_n > self.opts.exact_above {
            fixed::exp_neg_triangular(x, self.max_n, self.bits)
        } else {
            Vec::new()
        };
        Ok(Decays { x, float, fixed })
    }

    /// `P^{N,M}` from precomputed decays, with the raw-value checks applied.
    pub fn prob_from(&self, n: usize, m: usize, decays: &Decays) -> Result<f64> {
        if !(1 <= m && m <= n && n <= self.max_n) {
            return Err(Error::Argument(format!(
                "need 1 <= M <= N <= {}, got N = {n}, M = {m}",
                self.max_n
            )));
        }
        if decays.x == 0.0 {
            return Ok(if m == n { 1.0 } else { 0.0 });
        }
        let raw = match &self.rows[row_index(n, m)] {
            Row::Float(r) => compensated_sum(r.iter().enumerate().map(|(k, c)| c * decays.float[m + k - 1])),
            Row::Fixed(r) => {
                let mut acc = BigInt::zero();
                for (k, c) in r.iter().enumerate() {
                    acc += c * &decays.fixed[m + k - 1];
                }
                fixed::fixed_to_f64(&acc, 2 * self.bits)
            }
        };
        finish(raw, n, m)
    }

    /// [`prob_from`](Self::prob_from) together with a bound on its absolute
    /// rounding error. Float rows carry about one ulp of error per term, which
    /// matters once the alternating sum is much smaller than its terms; the
    /// fixed-point rows are exact to far below `f64` resolution.
    pub fn prob_with_error(&self, n: usize, m: usize, decays: &Decays) -> Result<(f64, f64)> {
        let p = self.prob_from(n, m, decays)?;
        let err = match &self.rows[row_index(n, m)] {
            Row::Float(r) if decays.x > 0.0 => {
                let mass: f64 = r.iter().enumerate().map(|(k, c)| (c * decays.float[m + k - 1]).abs()).sum();
                4.0 * f64::EPSILON * mass
            }
            _ => 0.0,
        };
        Ok((p, err))
    }

    /// `P^{N,M}` after scaled intensity `x`.
    pub fn prob_scaled(&self, n: usize, m: usize, x: f64) -> Result<f64> {
        let d = self.decays(x)?;
        self.prob_from(n, m, &d)
    }

    /// `P^{N,M}(s, t)`: `N` lineages at time `s`, `M` at time `t`.
    pub fn prob_between(&self, demog: &DemographicModel, n: usize, m: usize, s: f64, t: f64) -> Result<f64> {
        let x = demog.intensity_between(s, t)? / demog.coalescence_scale();
        self.prob_scaled(n, m, x)
    }
}

/// `P^{N,M}(t)`, the probability that `N` sampled lineages have exactly `M`
/// ancestors `t` generations ago.
pub fn lineage_count_prob(demog: &DemographicModel, n: usize, m: usize, t: f64) -> Result<f64> {
    lineage_count_prob_between(demog, n, m, 0.0, t)
}

/// Two-time form `P^{N,M}(s, t)`.
pub fn lineage_count_prob_between(demog: &DemographicModel, n: usize, m: usize, s: f64, t: f64) -> Result<f64> {
    lineage_count_prob_with(demog, n, m, s, t, &LineageOptions::default())
}

pub fn lineage_count_prob_with(
    demog: &DemographicModel,
    n: usize,
    m: usize,
    s: f64,
    t: f64,
    opts: &LineageOptions,
) -> Result<f64> {
    if !(1 <= m && m <= n) {
        return Err(Error::Argument(format!("need 1 <= M <= N, got N = {n}, M = {m}")));
    }
    if n > opts.max_sample_size {
        return Err(Error::Argument(format!(
            "sample size {n} exceeds the configured cap of {}",
            opts.max_sample_size
        )));
    }
    let x = demog.intensity_between(s, t)? / demog.coalescence_scale();
    if !x.is_finite() {
        return Err(Error::Domain(format!("scaled intensity is not finite over [{s}, {t}]")));
    }
    if x == 0.0 {
        return Ok(if m == n { 1.0 } else { 0.0 });
    }
    let row = coefficient_row(n, m);
    let raw = if n > opts.exact_above {
        let max_bits = row.iter().map(|c| (c.numer().abs() / c.denom()).bits()).max().unwrap_or(0);
        let bits = max_bits as u32 + 97;
        let mut acc = BigInt::zero();
        for (k, c) in row.iter().enumerate() {
            let i = m + k;
            let decay = fixed::exp_neg_fixed(x, (i * (i - 1)) as u64, bits);
            acc += (fixed::to_fixed(c, bits) * decay) >> bits as usize;
        }
        fixed::fixed_to_f64(&acc, bits)
    } else {
        compensated_sum(row.iter().enumerate().map(|(k, c)| {
            let i = m + k;
            c.to_f64().unwrap_or(f64::NAN) * (-((i * (i - 1)) as f64) * x).exp()
        }))
    };
    finish(raw, n, m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineageCountDistribution {
    pub sample_size: usize,
    pub eval_time: f64,
    /// `probs[M - 1] = P^{N,M}(t)`.
    pub probs: Vec<f64>,
}

impl LineageCountDistribution {
    pub fn prob(&self, m: usize) -> f64 {
        if m == 0 || m > self.sample_size {
            0.0
        } else {
            self.probs[m - 1]
        }
    }

    pub fn total(&self) -> f64 {
        compensated_sum(self.probs.iter().copied())
    }
}

pub fn lineage_count_distribution(demog: &DemographicModel, n: usize, t: f64) -> Result<LineageCountDistribution> {
    lineage_count_distribution_with(demog, n, t, &LineageOptions::default())
}

pub fn lineage_count_distribution_with(
    demog: &DemographicModel,
    n: usize,
    t: f64,
    opts: &LineageOptions,
) -> Result<LineageCountDistribution> {
    if n == 0 {
        return Err(Error::Argument("sample size must be at least 1".into()));
    }
    let kernel = LineageKernel::new(n, *opts)?;
    let x = demog.intensity(t)? / demog.coalescence_scale();
    let decays = kernel.decays(x)?;
    let probs = (1..=n).map(|m| kernel.prob_from(n, m, &decays)).collect::<Result<Vec<_>>>()?;
    Ok(LineageCountDistribution {
        sample_size: n,
        eval_time: t,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demography::Piece;

    fn frac(p: i64, q: i64) -> BigRational {
        BigRational::new(BigInt::from(p), BigInt::from(q))
    }

    #[test]
    fn hand_evaluated_coefficients() {
        assert_eq!(tavare_coefficient_exact(2, 1, 1).unwrap(), frac(1, 1));
        assert_eq!(tavare_coefficient_exact(2, 1, 2).unwrap(), frac(-1, 1));
        assert_eq!(tavare_coefficient_exact(1, 1, 1).unwrap(), frac(1, 1));
        // N = M = i = 3: 5 * (3*4) * 3! / (3! * (3*4*5)) = 1
        assert_eq!(tavare_coefficient_exact(3, 3, 3).unwrap(), frac(1, 1));
        assert_eq!(tavare_coefficient(2, 1, 2).unwrap(), -1.0);
    }

    #[test]
    fn coefficient_index_errors() {
        assert!(matches!(tavare_coefficient(3, 0, 1), Err(Error::Argument(_))));
        assert!(matches!(tavare_coefficient(3, 2, 1), Err(Error::Argument(_))));
        assert!(matches!(tavare_coefficient(3, 2, 4), Err(Error::Argument(_))));
    }

    #[test]
    fn recurrence_matches_product_formula() {
        for n in 1..=25 {
            for m in 1..=n {
                let row = coefficient_row(n, m);
                for (k, c) in row.iter().enumerate() {
                    assert_eq!(*c, tavare_coefficient_exact(n, m, m + k).unwrap());
                }
            }
        }
    }

    #[test]
    fn coefficients_sum_to_indicator_at_zero() {
        // P^{N,M}(0) = 1{M = N} means each row sums exactly to that indicator
        for n in 1..=40 {
            for m in 1..=n {
                let s: BigRational = coefficient_row(n, m).into_iter().sum();
                let expected = if m == n { BigRational::one() } else { BigRational::zero() };
                assert_eq!(s, expected, "N = {n}, M = {m}");
            }
        }
    }

    #[test]
    fn small_closed_forms() {
        let d = DemographicModel::constant(250.0, 1000.0).unwrap();
        for &t in &[0.0, 1.0, 100.0, 777.0, 5000.0] {
            let lam = 1.0 / (2.0 * 250.0);
            let p21 = lineage_count_prob(&d, 2, 1, t).unwrap();
            assert!((p21 - (1.0 - (-lam * t).exp())).abs() < 1e-12);
            let p32 = lineage_count_prob(&d, 3, 2, t).unwrap();
            let expected = 1.5 * ((-lam * t).exp() - (-3.0 * lam * t).exp());
            assert!((p32 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_cases() {
        let d = DemographicModel::constant(100.0, 10.0).unwrap();
        for n in 1..=35 {
            assert_eq!(lineage_count_prob(&d, n, n, 0.0).unwrap(), 1.0);
        }
        let one = lineage_count_distribution(&d, 1, 123.0).unwrap();
        assert_eq!(one.probs, vec![1.0]);
        let five = lineage_count_distribution(&d, 5, 0.0).unwrap();
        assert_eq!(five.probs, vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(lineage_count_prob(&d, 3, 4, 1.0).is_err());
        assert!(lineage_count_prob(&d, 101, 1, 1.0).is_err());
    }

    #[test]
    fn exact_path_agrees_with_float_path() {
        let d = DemographicModel::new(100.0, 50.0, vec![Piece::constant(0.0, 1.0), Piece::exponential(10.0, 1.0, 0.05)])
            .unwrap();
        let float = LineageOptions {
            max_sample_size: 100,
            exact_above: 100,
        };
        let exact = LineageOptions {
            max_sample_size: 100,
            exact_above: 0,
        };
        for n in [2, 7, 15, 20] {
            for &t in &[0.5, 5.0, 40.0, 200.0] {
                for m in 1..=n {
                    let a = lineage_count_prob_with(&d, n, m, 0.0, t, &float).unwrap();
                    let b = lineage_count_prob_with(&d, n, m, 0.0, t, &exact).unwrap();
                    let tol = if n <= 15 { 1e-12 } else { 5e-11 };
                    assert!((a - b).abs() < tol, "N={n} M={m} t={t}: {a} vs {b}");
                }
            }
        }
        let k = LineageKernel::new(40, LineageOptions::default()).unwrap();
        for m in 1..=40 {
            let a = k.prob_scaled(40, m, 0.01).unwrap();
            let b = lineage_count_prob_with(&d, 40, m, 0.0, d.inverse_intensity(0.01 * 400.0).unwrap(), &exact).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_sample_normalizes() {
        let d = DemographicModel::constant(1000.0, 100.0).unwrap();
        for n in [50, 100] {
            for &t in &[1.0, 50.0, 400.0, 4000.0] {
                let dist = lineage_count_distribution(&d, n, t).unwrap();
                assert!((dist.total() - 1.0).abs() < 1e-12, "N = {n}, t = {t}: {}", dist.total());
                assert!(dist.probs.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn instability_is_reported_not_clamped() {
        assert_eq!(finish(1.0 + 5e-10, 3, 1).unwrap(), 1.0);
        assert_eq!(finish(-5e-10, 3, 1).unwrap(), 0.0);
        assert!(matches!(finish(-2e-6, 3, 1), Err(Error::NumericalInstability { .. })));
        assert!(matches!(finish(f64::NAN, 3, 1), Err(Error::NumericalInstability { .. })));
    }
}
