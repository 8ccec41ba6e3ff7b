//! Coalescent interval lengths conditioned on the lineage count at divergence.
//!
//! `T_i` is the time the sample spends with exactly `i` ancestral lineages
//! inside `[0, t_d]`, so the intervals for `i = M..=N` partition `[0, t_d]`
//! when `P(t_d) = M`. Moments are computed from the death-process Markov
//! structure rather than from per-case density formulas:
//!
//! * `E[T_i | M] = ∫₀^{t_d} Pr[P(τ) = i | P(t_d) = M] dτ`
//! * `E[T_j T_k | M] = ∬ Pr[P(s) = j, P(t) = k | P(t_d) = M] ds dt`
//!
//! with `Pr[P(τ) = i | M] = P^{N,i}(0,τ) P^{i,M}(τ,t_d) / P^{N,M}(0,t_d)`.

use serde::{Deserialize, Serialize};

use crate::demography::DemographicModel;
use crate::error::{Error, Result};
use crate::lineage::{LineageKernel, LineageOptions};
use crate::quadrature::{integrate, integrate_vec, QuadratureOptions};

/// Below this, `P^{N,M}(0, t_d)` is treated as zero.
pub const CONDITIONING_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    /// Whole genealogy conditioned on `P(t_d) = M`.
    #[default]
    Conditional,
    /// Unconditional occupancy of each state within `[0, t_d]`.
    UnconditionalTruncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeOptions {
    pub mode: MomentMode,
    /// Relative tolerance for single integrals.
    pub rel_tol: f64,
    /// Relative tolerance for the double integrals behind `E[T_j T_k]`.
    pub joint_rel_tol: f64,
    pub lineage: LineageOptions,
}

impl Default for TimeOptions {
    fn default() -> Self {
        Self {
            mode: MomentMode::Conditional,
            rel_tol: 1e-6,
            joint_rel_tol: 1e-5,
            lineage: LineageOptions::default(),
        }
    }
}

/// Evaluation context for one `(demography, N, M)` triple.
pub struct PairConditioning<'a> {
    demog: &'a DemographicModel,
    kernel: LineageKernel,
    n: usize,
    m: usize,
    td: f64,
    scale: f64,
    norm: f64,
    opts: TimeOptions,
    breaks: Vec<f64>,
}

impl<'a> PairConditioning<'a> {
    pub fn new(demog: &'a DemographicModel, n: usize, m: usize, opts: &TimeOptions) -> Result<Self> {
        if !(1 <= m && m <= n) {
            return Err(Error::Argument(format!("need 1 <= M <= N, got N = {n}, M = {m}")));
        }
        let mut kernel = LineageKernel::new(n, opts.lineage)?;
        let td = demog.divergence_time();
        let scale = demog.coalescence_scale();
        let norm = match opts.mode {
            MomentMode::Conditional => {
                let x = demog.intensity(td)? / scale;
                let (mut p, err) = kernel.prob_with_error(n, m, &kernel.decays(x)?)?;
                if err > 1e-3 * opts.rel_tol * p {
                    // every quantity is divided by p, so rounding noise in
                    // the float series would be amplified; go exact instead
                    kernel = LineageKernel::new(
                        n,
                        LineageOptions {
                            exact_above: 0,
                            ..opts.lineage
                        },
                    )?;
                    p = kernel.prob_scaled(n, m, x)?;
                }
                if !(p >= CONDITIONING_FLOOR) {
                    return Err(Error::ConditioningImpossible { m, probability: p });
                }
                p
            }
            MomentMode::UnconditionalTruncated => 1.0,
        };
        Ok(Self {
            demog,
            kernel,
            n,
            m,
            td,
            scale,
            norm,
            opts: *opts,
            breaks: demog.breakpoints_in(0.0, td),
        })
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    pub fn divergence_count(&self) -> usize {
        self.m
    }

    /// `P^{N,M}(0, t_d)`, or 1 in unconditional mode.
    pub fn normalizer(&self) -> f64 {
        self.norm
    }

    fn check_state(&self, i: usize) -> Result<()> {
        if !(self.m <= i && i <= self.n) {
            return Err(Error::Argument(format!(
                "state {i} outside [{}, {}]",
                self.m, self.n
            )));
        }
        Ok(())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t >= 0.0 && t <= self.td) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.td)));
        }
        Ok(())
    }

    fn scaled(&self, s: f64, t: f64) -> Result<f64> {
        Ok(self.demog.intensity_between(s, t)? / self.scale)
    }

    fn rate(&self, i: usize, t: f64) -> Result<f64> {
        Ok((i * (i - 1)) as f64 * self.demog.ratio(t)? / self.scale)
    }

    /// `Pr[P(τ) = i | P(t_d) = M]`.
    pub fn occupancy_prob(&self, i: usize, tau: f64) -> Result<f64> {
        self.check_state(i)?;
        self.check_time(tau)?;
        let head = self.kernel.prob_scaled(self.n, i, self.scaled(0.0, tau)?)?;
        match self.opts.mode {
            MomentMode::Conditional => {
                let tail = self.kernel.prob_scaled(i, self.m, self.scaled(tau, self.td)?)?;
                Ok(head * tail / self.norm)
            }
            MomentMode::UnconditionalTruncated => Ok(head),
        }
    }

    // occupancy probabilities of every state M..=N at τ
    fn occupancy_all(&self, tau: f64, out: &mut [f64]) -> Result<()> {
        let head = self.kernel.decays(self.scaled(0.0, tau)?)?;
        let tail = match self.opts.mode {
            MomentMode::Conditional => Some(self.kernel.decays(self.scaled(tau, self.td)?)?),
            MomentMode::UnconditionalTruncated => None,
        };
        for (slot, i) in out.iter_mut().zip(self.m..=self.n) {
            let a = self.kernel.prob_from(self.n, i, &head)?;
            *slot = match &tail {
                Some(d) => a * self.kernel.prob_from(i, self.m, d)? / self.norm,
                None => a,
            };
        }
        Ok(())
    }

    /// `E[T_i | P(t_d) = M]` by the occupancy-time identity.
    pub fn expected_time(&self, i: usize) -> Result<f64> {
        self.check_state(i)?;
        if self.td == 0.0 {
            return Ok(0.0);
        }
        let q = QuadratureOptions::with_rel_tol(self.opts.rel_tol).abs_tol(1e-4 * self.opts.rel_tol * self.td);
        Ok(integrate(|tau| self.occupancy_prob(i, tau), 0.0, self.td, &self.breaks, &q)?.value)
    }

    /// Density of `T_i` given `P(t_d) = M`, built from arrival and departure
    /// times of state `i`:
    ///
    /// * `i = N`: first coalescence at `t`, then `N-1 → M` over `[t, t_d]`;
    /// * `i = M`: arrival in `M` at `t_d - t`, no further coalescence;
    /// * otherwise: arrival at `a`, departure at `a + t`, integrated over `a`.
    pub fn conditional_density(&self, i: usize, t: f64) -> Result<f64> {
        self.check_state(i)?;
        self.check_time(t)?;
        if self.opts.mode != MomentMode::Conditional {
            return Err(Error::Argument("interval densities are defined for the conditional mode only".into()));
        }
        if self.n == self.m || self.td == 0.0 {
            return Err(Error::Degenerate(format!(
                "T_{i} equals t_d = {} with probability one",
                self.td
            )));
        }
        let (n, m, td) = (self.n, self.m, self.td);
        let survive = |k: usize, a: f64, b: f64| -> Result<f64> {
            Ok((-((k * (k - 1)) as f64) * self.scaled(a, b)?).exp())
        };
        if i == n {
            let lead = self.rate(n, t)? * survive(n, 0.0, t)?;
            let rest = self.kernel.prob_scaled(n - 1, m, self.scaled(t, td)?)?;
            return Ok(lead * rest / self.norm);
        }
        if i == m {
            let arrival = td - t;
            let reach = self.kernel.prob_scaled(n, m + 1, self.scaled(0.0, arrival)?)?;
            return Ok(reach * self.rate(m + 1, arrival)? * survive(m, arrival, td)? / self.norm);
        }
        let upper = td - t;
        if upper == 0.0 {
            return Ok(0.0);
        }
        let integrand = |a: f64| -> Result<f64> {
            let reach = self.kernel.prob_scaled(n, i + 1, self.scaled(0.0, a)?)?;
            let enter = self.rate(i + 1, a)?;
            let leave = self.rate(i, a + t)? * survive(i, a, a + t)?;
            let rest = self.kernel.prob_scaled(i - 1, m, self.scaled(a + t, td)?)?;
            Ok(reach * enter * leave * rest)
        };
        let mut breaks = self.demog.breakpoints_in(0.0, upper);
        breaks.extend(self.demog.breakpoints_in(t, td).into_iter().map(|b| b - t));
        breaks.sort_by(f64::total_cmp);
        // densities live on the scale 1/t_d; anything far below that is round-off
        let q = QuadratureOptions::with_rel_tol(self.opts.rel_tol * 1e-2)
            .abs_tol(1e-4 * self.opts.rel_tol * self.norm / td);
        Ok(integrate(integrand, 0.0, upper, &breaks, &q)?.value / self.norm)
    }

    /// `Pr[P(s) = hi, P(t) = lo | P(t_d) = M]` for `s <= t`, `hi >= lo`.
    fn pair_occupancy(&self, hi: usize, lo: usize, s: f64, t: f64) -> Result<f64> {
        let a = self.kernel.prob_scaled(self.n, hi, self.scaled(0.0, s)?)?;
        let mid = self.kernel.prob_scaled(hi, lo, self.scaled(s, t)?)?;
        match self.opts.mode {
            MomentMode::Conditional => {
                let b = self.kernel.prob_scaled(lo, self.m, self.scaled(t, self.td)?)?;
                Ok(a * mid * b / self.norm)
            }
            MomentMode::UnconditionalTruncated => Ok(a * mid),
        }
    }

    /// `E[T_j T_k | P(t_d) = M]` by scalar double quadrature over `s < t`.
    pub fn joint_time_moment(&self, j: usize, k: usize) -> Result<f64> {
        self.check_state(j)?;
        self.check_state(k)?;
        if self.td == 0.0 {
            return Ok(0.0);
        }
        let (hi, lo) = (j.max(k), j.min(k));
        let rel = self.opts.joint_rel_tol;
        let outer_q = QuadratureOptions::with_rel_tol(rel).abs_tol(1e-4 * rel * self.td * self.td);
        let outer = |t: f64| -> Result<f64> {
            let breaks = self.demog.breakpoints_in(0.0, t);
            let inner_q = QuadratureOptions::with_rel_tol(rel * 1e-2).abs_tol(1e-5 * rel * t);
            let inner = integrate(|s| self.pair_occupancy(hi, lo, s, t), 0.0, t, &breaks, &inner_q)?;
            Ok(inner.value)
        };
        let v = integrate(outer, 0.0, self.td, &self.breaks, &outer_q)?.value;
        Ok(if hi == lo { 2.0 * v } else { v })
    }

    /// Full first- and second-moment tables, with every table entry integrated
    /// together over shared panels.
    pub fn moments(&self) -> Result<ConditionalTimeMoments> {
        let (n, m, td) = (self.n, self.m, self.td);
        let width = n - m + 1;
        let mut out = ConditionalTimeMoments::zeros(n, m, td, self.demog.reference_size(), self.opts.mode);
        if td == 0.0 || (n == m && self.opts.mode == MomentMode::Conditional) {
            return Ok(out);
        }

        // table entries far below the largest one are held to an absolute floor,
        // since the alternating lineage series carries round-off at that level
        let q = QuadratureOptions::with_rel_tol(self.opts.rel_tol).scale_floor(1e-4 * self.opts.rel_tol);
        let first = integrate_vec(|tau, buf: &mut [f64]| self.occupancy_all(tau, buf), width, 0.0, td, &self.breaks, &q)?;
        out.first.copy_from_slice(&first.values);

        // pairs (hi, lo) with M <= lo <= hi <= N
        let pairs: Vec<(usize, usize)> = (m..=n).flat_map(|hi| (m..=hi).map(move |lo| (hi, lo))).collect();
        let rel = self.opts.joint_rel_tol;
        let outer_q = QuadratureOptions::with_rel_tol(rel).scale_floor(1e-4 * rel);
        let inner_q = QuadratureOptions::with_rel_tol(rel * 1e-2).scale_floor(1e-5 * rel);
        let outer = |t: f64, buf: &mut [f64]| -> Result<()> {
            let tail = match self.opts.mode {
                MomentMode::Conditional => Some(self.kernel.decays(self.scaled(t, td)?)?),
                MomentMode::UnconditionalTruncated => None,
            };
            let mut tail_factor = Vec::with_capacity(pairs.len());
            for &(hi, lo) in &pairs {
                let factor = match &tail {
                    Some(d) => self.kernel.prob_from(lo, m, d)? / self.norm,
                    None => 1.0,
                };
                tail_factor.push(if hi == lo { 2.0 * factor } else { factor });
            }
            let breaks = self.demog.breakpoints_in(0.0, t);
            let inner = integrate_vec(
                |s, ibuf: &mut [f64]| {
                    let head = self.kernel.decays(self.scaled(0.0, s)?)?;
                    let mid = self.kernel.decays(self.scaled(s, t)?)?;
                    let mut reach = vec![0.0; width];
                    for (slot, hi) in reach.iter_mut().zip(m..=n) {
                        *slot = self.kernel.prob_from(n, hi, &head)?;
                    }
                    for ((slot, &(hi, lo)), w) in ibuf.iter_mut().zip(&pairs).zip(&tail_factor) {
                        *slot = w * reach[hi - m] * self.kernel.prob_from(hi, lo, &mid)?;
                    }
                    Ok(())
                },
                pairs.len(),
                0.0,
                t,
                &breaks,
                &inner_q,
            )?;
            buf.copy_from_slice(&inner.values);
            Ok(())
        };
        let second = integrate_vec(outer, pairs.len(), 0.0, td, &self.breaks, &outer_q)?;
        for (&(hi, lo), v) in pairs.iter().zip(&second.values) {
            out.set_second(hi, lo, *v);
        }
        Ok(out)
    }
}

/// First and second moments of the interval lengths for one pairwise model,
/// in generations and generations².
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalTimeMoments {
    pub sample_size: usize,
    pub divergence_count: usize,
    pub divergence_time: f64,
    pub reference_size: f64,
    pub mode: MomentMode,
    first: Vec<f64>,
    // symmetric (N-M+1)² matrix, row-major
    second: Vec<f64>,
}

impl ConditionalTimeMoments {
    fn zeros(n: usize, m: usize, td: f64, reference_size: f64, mode: MomentMode) -> Self {
        let w = n - m + 1;
        let mut out = Self {
            sample_size: n,
            divergence_count: m,
            divergence_time: td,
            reference_size,
            mode,
            first: vec![0.0; w],
            second: vec![0.0; w * w],
        };
        if n == m {
            out.first[0] = td;
            out.second[0] = td * td;
        }
        out
    }

    /// Build a table from explicit values (first moments for `i = M..=N`,
    /// second moments as a closure over `(j, k)`).
    pub fn from_tables(
        n: usize,
        m: usize,
        divergence_time: f64,
        reference_size: f64,
        first: Vec<f64>,
        second: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        if !(1 <= m && m <= n) || first.len() != n - m + 1 {
            return Err(Error::Argument("moment table dimensions do not match (N, M)".into()));
        }
        let mut out = Self::zeros(n, m, divergence_time, reference_size, MomentMode::Conditional);
        out.first = first;
        for j in m..=n {
            for k in m..=j {
                out.set_second(j, k, second(j, k));
            }
        }
        Ok(out)
    }

    fn width(&self) -> usize {
        self.sample_size - self.divergence_count + 1
    }

    fn set_second(&mut self, j: usize, k: usize, v: f64) {
        let w = self.width();
        let (a, b) = (j - self.divergence_count, k - self.divergence_count);
        self.second[a * w + b] = v;
        self.second[b * w + a] = v;
    }

    fn in_range(&self, i: usize) -> bool {
        self.divergence_count <= i && i <= self.sample_size
    }

    /// `E[T_i]`; zero outside `[M, N]`.
    pub fn first_moment(&self, i: usize) -> f64 {
        if self.in_range(i) {
            self.first[i - self.divergence_count]
        } else {
            0.0
        }
    }

    /// `E[T_j T_k]`; zero outside `[M, N]²`.
    pub fn second_moment(&self, j: usize, k: usize) -> f64 {
        if self.in_range(j) && self.in_range(k) {
            let w = self.width();
            self.second[(j - self.divergence_count) * w + (k - self.divergence_count)]
        } else {
            0.0
        }
    }

    /// `E[T_j T_k]` in coalescent units of `2N_ref` generations.
    pub fn scaled_second_moment(&self, j: usize, k: usize) -> f64 {
        let unit = 2.0 * self.reference_size;
        self.second_moment(j, k) / (unit * unit)
    }

    pub fn first_moments(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.divergence_count..=self.sample_size).map(move |i| (i, self.first_moment(i)))
    }

    /// `(j, k, E[T_j T_k])` for `M <= j <= k <= N`.
    pub fn second_moments(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let (m, n) = (self.divergence_count, self.sample_size);
        (m..=n).flat_map(move |j| (j..=n).map(move |k| (j, k, self.second_moment(j, k))))
    }
}

pub fn occupancy_prob(demog: &DemographicModel, n: usize, m: usize, i: usize, tau: f64) -> Result<f64> {
    PairConditioning::new(demog, n, m, &TimeOptions::default())?.occupancy_prob(i, tau)
}

pub fn expected_time(demog: &DemographicModel, n: usize, m: usize, i: usize) -> Result<f64> {
    PairConditioning::new(demog, n, m, &TimeOptions::default())?.expected_time(i)
}

pub fn conditional_density(demog: &DemographicModel, n: usize, m: usize, i: usize, t: f64) -> Result<f64> {
    PairConditioning::new(demog, n, m, &TimeOptions::default())?.conditional_density(i, t)
}

pub fn joint_time_moment(demog: &DemographicModel, n: usize, m: usize, j: usize, k: usize) -> Result<f64> {
    PairConditioning::new(demog, n, m, &TimeOptions::default())?.joint_time_moment(j, k)
}

/// Build the moment table for `(N, M)`.
pub fn conditional_moments(
    demog: &DemographicModel,
    n: usize,
    m: usize,
    opts: &TimeOptions,
) -> Result<ConditionalTimeMoments> {
    if demog.divergence_time() == 0.0 {
        if !(1 <= m && m <= n) {
            return Err(Error::Argument(format!("need 1 <= M <= N, got N = {n}, M = {m}")));
        }
        if m < n && opts.mode == MomentMode::Conditional {
            return Err(Error::ConditioningImpossible { m, probability: 0.0 });
        }
        return Ok(ConditionalTimeMoments::zeros(n, m, 0.0, demog.reference_size(), opts.mode));
    }
    PairConditioning::new(demog, n, m, opts)?.moments()
}
