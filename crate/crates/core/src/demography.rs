//! Population-size history and the cumulative coalescent intensity.
//!
//! The history is a piecewise ratio function `r(t)`: present size divided by
//! the size `t` generations ago. With `i` lineages the coalescence rate at time
//! `t` is `i(i-1) r(t) / (4N)`, so every lineage-count probability depends on
//! time only through `Λ(t) = ∫₀ᵗ r(s) ds`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadratureOptions};

/// A user-supplied ratio function, evaluated at absolute time.
pub type RatioFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum PieceKind {
    Constant { value: f64 },
    /// `r(t) = rate0 * exp(growth * (t - start))`.
    Exponential { rate0: f64, growth: f64 },
    /// Arbitrary positive ratio; integrated numerically and inverted by bisection.
    Custom(RatioFn),
}

impl fmt::Debug for PieceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PieceKind::Constant { value } => f.debug_struct("Constant").field("value", value).finish(),
            PieceKind::Exponential { rate0, growth } => f
                .debug_struct("Exponential")
                .field("rate0", rate0)
                .field("growth", growth)
                .finish(),
            PieceKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Piece {
    pub start: f64,
    pub kind: PieceKind,
}

impl Piece {
    pub fn constant(start: f64, value: f64) -> Self {
        Self {
            start,
            kind: PieceKind::Constant { value },
        }
    }

    pub fn exponential(start: f64, rate0: f64, growth: f64) -> Self {
        Self {
            start,
            kind: PieceKind::Exponential { rate0, growth },
        }
    }

    pub fn custom(start: f64, ratio: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            start,
            kind: PieceKind::Custom(Arc::new(ratio)),
        }
    }
}

const CUSTOM_QUADRATURE: QuadratureOptions = QuadratureOptions {
    rel_tol: 1e-13,
    abs_tol: 0.0,
    scale_floor: 1e-12,
    max_intervals: 20_000,
};

/// Reference size, ratio history and divergence time shared by all three
/// pairwise models. Immutable once built.
#[derive(Debug, Clone)]
pub struct DemographicModel {
    reference_size: f64,
    divergence_time: f64,
    pieces: Vec<Piece>,
    // Λ at the start of each piece
    cumulative: Vec<f64>,
    domain_end: f64,
}

impl DemographicModel {
    pub fn new(reference_size: f64, divergence_time: f64, pieces: Vec<Piece>) -> Result<Self> {
        Self::with_domain_end(reference_size, divergence_time, pieces, f64::INFINITY)
    }

    /// Constant size (`r ≡ 1`).
    pub fn constant(reference_size: f64, divergence_time: f64) -> Result<Self> {
        Self::new(reference_size, divergence_time, vec![Piece::constant(0.0, 1.0)])
    }

    pub fn with_domain_end(
        reference_size: f64,
        divergence_time: f64,
        pieces: Vec<Piece>,
        domain_end: f64,
    ) -> Result<Self> {
        if !(reference_size.is_finite() && reference_size > 0.0) {
            return Err(Error::Argument(format!("reference size must be positive and finite, got {reference_size}")));
        }
        if !(divergence_time.is_finite() && divergence_time >= 0.0) {
            return Err(Error::Argument(format!(
                "divergence time must be non-negative and finite, got {divergence_time}"
            )));
        }
        if !(domain_end > 0.0) || domain_end.is_nan() {
            return Err(Error::Argument(format!("domain end must be positive, got {domain_end}")));
        }
        if divergence_time > domain_end {
            return Err(Error::Argument("divergence time lies beyond the domain end".into()));
        }
        let first = pieces
            .first()
            .ok_or_else(|| Error::Argument("demography needs at least one piece".into()))?;
        if first.start != 0.0 {
            return Err(Error::Argument(format!("first piece must start at 0, got {}", first.start)));
        }
        for (idx, w) in pieces.windows(2).enumerate() {
            if !(w[1].start > w[0].start) || !w[1].start.is_finite() {
                return Err(Error::Argument(format!(
                    "piece starts must be strictly increasing (piece {} starts at {}, previous at {})",
                    idx + 1,
                    w[1].start,
                    w[0].start
                )));
            }
        }
        for (idx, p) in pieces.iter().enumerate() {
            match p.kind {
                PieceKind::Constant { value } if !(value.is_finite() && value > 0.0) => {
                    return Err(Error::Argument(format!("piece {idx}: constant ratio must be positive, got {value}")));
                }
                PieceKind::Exponential { rate0, growth } if !(rate0.is_finite() && rate0 > 0.0 && growth.is_finite()) => {
                    return Err(Error::Argument(format!(
                        "piece {idx}: exponential needs positive rate0 and finite growth, got ({rate0}, {growth})"
                    )));
                }
                _ => {}
            }
        }

        let mut model = Self {
            reference_size,
            divergence_time,
            pieces,
            cumulative: Vec::new(),
            domain_end,
        };
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(model.pieces.len());
        for idx in 0..model.pieces.len() {
            cumulative.push(acc);
            if let Some(next) = model.pieces.get(idx + 1) {
                acc += model.piece_integral(idx, model.pieces[idx].start, next.start.min(domain_end))?;
                if !acc.is_finite() {
                    return Err(Error::Domain(format!("cumulative intensity overflows before piece {}", idx + 1)));
                }
            }
        }
        model.cumulative = cumulative;
        Ok(model)
    }

    pub fn reference_size(&self) -> f64 {
        self.reference_size
    }

    pub fn divergence_time(&self) -> f64 {
        self.divergence_time
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn domain_end(&self) -> f64 {
        self.domain_end
    }

    /// Same history with a different divergence time.
    pub fn with_divergence_time(&self, divergence_time: f64) -> Result<Self> {
        if !(divergence_time.is_finite() && divergence_time >= 0.0) || divergence_time > self.domain_end {
            return Err(Error::Argument(format!("invalid divergence time {divergence_time}")));
        }
        let mut out = self.clone();
        out.divergence_time = divergence_time;
        Ok(out)
    }

    /// `4N`, the scale dividing `i(i-1) Λ` in every exponent.
    pub fn coalescence_scale(&self) -> f64 {
        4.0 * self.reference_size
    }

    /// Piece boundaries strictly inside `(a, b)`.
    pub fn breakpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        self.pieces.iter().map(|p| p.start).filter(|&s| s > a && s < b).collect()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Domain(format!("time must be finite and non-negative, got {t}")));
        }
        if t > self.domain_end {
            return Err(Error::Domain(format!("time {t} lies beyond the domain end {}", self.domain_end)));
        }
        Ok(())
    }

    fn piece_index(&self, t: f64) -> usize {
        self.pieces.partition_point(|p| p.start <= t).saturating_sub(1)
    }

    /// The ratio `r(t)`.
    pub fn ratio(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let p = &self.pieces[self.piece_index(t)];
        let r = match &p.kind {
            PieceKind::Constant { value } => *value,
            PieceKind::Exponential { rate0, growth } => rate0 * (growth * (t - p.start)).exp(),
            PieceKind::Custom(f) => f(t),
        };
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Domain(format!("ratio function is not positive at t = {t}: {r}")));
        }
        Ok(r)
    }

    // ∫ r over [a, b] within a single piece
    fn piece_integral(&self, idx: usize, a: f64, b: f64) -> Result<f64> {
        let p = &self.pieces[idx];
        match &p.kind {
            PieceKind::Constant { value } => Ok(value * (b - a)),
            PieceKind::Exponential { rate0, growth } => {
                if *growth == 0.0 {
                    Ok(rate0 * (b - a))
                } else {
                    let base = rate0 * (growth * (a - p.start)).exp();
                    Ok(base * (growth * (b - a)).exp_m1() / growth)
                }
            }
            PieceKind::Custom(f) => {
                let g = |t: f64| {
                    let r = f(t);
                    if r.is_finite() && r > 0.0 {
                        Ok(r)
                    } else {
                        Err(Error::Domain(format!("ratio function is not positive at t = {t}: {r}")))
                    }
                };
                Ok(integrate(g, a, b, &[], &CUSTOM_QUADRATURE)?.value)
            }
        }
    }

    /// `Λ(t) = ∫₀ᵗ r(s) ds`.
    pub fn intensity(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let idx = self.piece_index(t);
        let v = self.cumulative[idx] + self.piece_integral(idx, self.pieces[idx].start, t)?;
        if !v.is_finite() {
            return Err(Error::Domain(format!("cumulative intensity is not finite at t = {t}")));
        }
        Ok(v)
    }

    /// `Λ(t1) - Λ(t0)`, integrated piece by piece over `[t0, t1]`.
    pub fn intensity_between(&self, t0: f64, t1: f64) -> Result<f64> {
        self.check_time(t0)?;
        self.check_time(t1)?;
        if t0 > t1 {
            return Err(Error::Argument(format!("interval start {t0} exceeds end {t1}")));
        }
        let mut idx = self.piece_index(t0);
        let mut lo = t0;
        let mut total = 0.0;
        loop {
            let next = self.pieces.get(idx + 1).map(|p| p.start).unwrap_or(f64::INFINITY);
            let hi = next.min(t1);
            total += self.piece_integral(idx, lo, hi)?;
            if hi >= t1 {
                break;
            }
            lo = hi;
            idx += 1;
        }
        if !total.is_finite() {
            return Err(Error::Domain(format!("intensity over [{t0}, {t1}] is not finite")));
        }
        Ok(total)
    }

    /// Supremum of `Λ` over the domain (possibly infinite).
    pub fn intensity_limit(&self) -> f64 {
        if self.domain_end.is_finite() {
            return self.intensity(self.domain_end).unwrap_or(f64::INFINITY);
        }
        let idx = self.pieces.len() - 1;
        let p = &self.pieces[idx];
        match &p.kind {
            PieceKind::Exponential { rate0, growth } if *growth < 0.0 => self.cumulative[idx] + rate0 / -growth,
            _ => f64::INFINITY,
        }
    }

    /// The time `t` with `Λ(t) = y`.
    pub fn inverse_intensity(&self, y: f64) -> Result<f64> {
        if !y.is_finite() || y < 0.0 {
            return Err(Error::Domain(format!("intensity must be finite and non-negative, got {y}")));
        }
        if y == 0.0 {
            return Ok(0.0);
        }
        let limit = self.intensity_limit();
        if y > limit || (y == limit && self.domain_end.is_infinite()) {
            return Err(Error::Domain(format!("intensity {y} exceeds the attainable range {limit}")));
        }
        let idx = self.cumulative.partition_point(|&c| c <= y).saturating_sub(1);
        let p = &self.pieces[idx];
        let excess = y - self.cumulative[idx];
        let t = match &p.kind {
            PieceKind::Constant { value } => p.start + excess / value,
            PieceKind::Exponential { rate0, growth } => {
                if *growth == 0.0 {
                    p.start + excess / rate0
                } else {
                    let arg = growth * excess / rate0;
                    if arg <= -1.0 {
                        return Err(Error::Domain(format!("intensity {y} is not attained")));
                    }
                    p.start + arg.ln_1p() / growth
                }
            }
            PieceKind::Custom(_) => self.bisect_inverse(idx, y)?,
        };
        Ok(t.min(self.domain_end))
    }

    fn bisect_inverse(&self, idx: usize, y: f64) -> Result<f64> {
        let mut lo = self.pieces[idx].start;
        let mut hi = match self.pieces.get(idx + 1) {
            Some(next) => next.start,
            None => {
                // grow a bracket
                let mut h = lo + 1.0;
                while self.intensity(h.min(self.domain_end))? < y {
                    if h >= self.domain_end {
                        return Err(Error::Domain(format!("intensity {y} is not attained")));
                    }
                    h = lo + 2.0 * (h - lo);
                }
                h.min(self.domain_end)
            }
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.intensity(mid)? < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}
