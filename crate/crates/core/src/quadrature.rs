//! Globally adaptive Gauss–Kronrod (10/21 point) integration.
//!
//! Both a scalar and a vector-valued driver are provided. The vector driver
//! integrates every component over a shared set of panels, which is how the
//! moment tables are built without re-evaluating lineage probabilities once per
//! table entry. Integrands are fallible so that numerical errors raised deep in
//! the lineage process propagate unchanged.

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_957_155,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Components are never held to less than this fraction of the largest
    /// component's magnitude (vector integrals only).
    pub scale_floor: f64,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 0.0,
            scale_floor: 1e-12,
            max_intervals: 4000,
        }
    }
}

impl QuadratureOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn abs_tol(self, abs_tol: f64) -> Self {
        Self { abs_tol, ..self }
    }

    pub fn scale_floor(self, scale_floor: f64) -> Self {
        Self { scale_floor, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VecIntegral {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub evaluations: usize,
}

struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
}

/// Integrate a scalar function over `[a, b]`, splitting first at every
/// breakpoint strictly inside the interval.
pub fn integrate<F>(mut f: F, a: f64, b: f64, breakpoints: &[f64], opts: &QuadratureOptions) -> Result<Integral>
where
    F: FnMut(f64) -> Result<f64>,
{
    let res = integrate_vec(
        |x, out: &mut [f64]| {
            out[0] = f(x)?;
            Ok(())
        },
        1,
        a,
        b,
        breakpoints,
        opts,
    )?;
    Ok(Integral {
        value: res.values[0],
        error: res.errors[0],
        evaluations: res.evaluations,
    })
}

/// Integrate a `dim`-component function over `[a, b]`.
///
/// Convergence requires every component to meet
/// `max(abs_tol, rel_tol * |I_c|, scale_floor * max_c |I_c|)`.
pub fn integrate_vec<F>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: &QuadratureOptions,
) -> Result<VecIntegral>
where
    F: FnMut(f64, &mut [f64]) -> Result<()>,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("integration bounds must be finite, got [{a}, {b}]")));
    }
    if b < a {
        return Err(Error::Argument(format!("integration bounds reversed: [{a}, {b}]")));
    }
    if dim == 0 || b == a {
        return Ok(VecIntegral {
            values: vec![0.0; dim],
            errors: vec![0.0; dim],
            evaluations: 0,
        });
    }

    let mut cuts = vec![a];
    cuts.extend(breakpoints.iter().copied().filter(|&x| x > a && x < b));
    cuts.push(b);
    cuts.dedup();

    let mut scratch = Scratch::new(dim);
    let mut evaluations = 0;
    let mut panels = Vec::with_capacity(cuts.len() * 4);
    for w in cuts.windows(2) {
        panels.push(scratch.rule(&mut f, w[0], w[1])?);
        evaluations += 21;
    }

    let mut totals = vec![0.0; dim];
    let mut errs = vec![0.0; dim];
    loop {
        totals.iter_mut().for_each(|v| *v = 0.0);
        errs.iter_mut().for_each(|v| *v = 0.0);
        for p in &panels {
            for c in 0..dim {
                totals[c] += p.values[c];
                errs[c] += p.errors[c];
            }
        }
        let scale = totals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let tol: Vec<f64> = totals
            .iter()
            .map(|v| (opts.rel_tol * v.abs()).max(opts.abs_tol).max(opts.scale_floor * scale))
            .collect();
        let converged = errs.iter().zip(&tol).all(|(e, t)| *e <= *t || *e == 0.0);
        if converged {
            break;
        }
        if panels.len() >= opts.max_intervals {
            let achieved = errs
                .iter()
                .zip(&totals)
                .map(|(e, v)| if *v == 0.0 { *e } else { e / v.abs() })
                .fold(0.0_f64, f64::max);
            return Err(Error::Quadrature {
                achieved,
                requested: opts.rel_tol,
            });
        }

        // bisect the panel with the worst error relative to its component tolerance
        let (worst, _) = panels
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let score = p
                    .errors
                    .iter()
                    .zip(&tol)
                    .map(|(e, t)| if *t > 0.0 { e / t } else { *e })
                    .fold(0.0_f64, f64::max);
                (i, score)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            let achieved = errs.iter().zip(&totals).map(|(e, v)| e / v.abs().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
            return Err(Error::Quadrature {
                achieved,
                requested: opts.rel_tol,
            });
        }
        panels.push(scratch.rule(&mut f, p.a, mid)?);
        panels.push(scratch.rule(&mut f, mid, p.b)?);
        evaluations += 42;
    }

    // summation order is panel order, which is deterministic
    Ok(VecIntegral {
        values: totals,
        errors: errs,
        evaluations,
    })
}

struct Scratch {
    fc: Vec<f64>,
    f1: Vec<Vec<f64>>,
    f2: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        Self {
            fc: vec![0.0; dim],
            f1: vec![vec![0.0; dim]; 10],
            f2: vec![vec![0.0; dim]; 10],
        }
    }

    fn rule<F>(&mut self, f: &mut F, a: f64, b: f64) -> Result<Panel>
    where
        F: FnMut(f64, &mut [f64]) -> Result<()>,
    {
        let dim = self.fc.len();
        let center = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        f(center, &mut self.fc)?;
        for j in 0..10 {
            let dx = half * XGK[j];
            f(center - dx, &mut self.f1[j])?;
            f(center + dx, &mut self.f2[j])?;
        }

        let mut values = vec![0.0; dim];
        let mut errors = vec![0.0; dim];
        for c in 0..dim {
            let fc = self.fc[c];
            let mut kron = WGK[10] * fc;
            let mut gauss = 0.0;
            let mut resabs = WGK[10] * fc.abs();
            for j in 0..10 {
                let (lo, hi) = (self.f1[j][c], self.f2[j][c]);
                kron += WGK[j] * (lo + hi);
                resabs += WGK[j] * (lo.abs() + hi.abs());
                if j % 2 == 1 {
                    gauss += WG[j / 2] * (lo + hi);
                }
            }
            let mean = 0.5 * kron;
            let mut resasc = WGK[10] * (fc - mean).abs();
            for j in 0..10 {
                resasc += WGK[j] * ((self.f1[j][c] - mean).abs() + (self.f2[j][c] - mean).abs());
            }
            let result = kron * half;
            let resabs = resabs * half.abs();
            let resasc = resasc * half.abs();
            let mut err = ((kron - gauss) * half).abs();
            if resasc != 0.0 && err != 0.0 {
                err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
            }
            if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
                err = err.max(50.0 * f64::EPSILON * resabs);
            }
            values[c] = result;
            errors[c] = err;
        }
        Ok(Panel { a, b, values, errors })
    }
}
