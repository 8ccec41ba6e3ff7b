use std::collections::BTreeMap;

use serde::Serialize;

use super::sim::{drop_mutations, poisson, MutationEvent, TimePath, Tree};
use super::{
    model_demes, mutation_rate, population_sizes, run_blocks, Merge, OracleOptions, PairSampling, Purpose, Streams,
};
use crate::combiner::{indicators, weights};
use crate::conditional_times::ConditionalTimeMoments;
use crate::demography::DemographicModel;
use crate::error::{Error, Result};
use crate::lineage::lineage_count_distribution;
use crate::sample::{Allele, PairModel, SampleConfiguration};
use crate::triallelic::MutationModel;

/// Minimum analytic acceptance probability for rejection sampling.
pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub samples: u64,
    /// Smallest standard error used when forming z-scores. For a proportion
    /// observed as exactly 0 or 1 the plug-in SE vanishes; the floor is the SE
    /// of a proportion of one event in `samples`.
    #[serde(skip)]
    se_floor: f64,
}

impl Estimate {
    pub fn proportion(hits: u64, trials: u64) -> Self {
        if trials == 0 {
            return Self {
                value: f64::NAN,
                se: f64::NAN,
                samples: 0,
                se_floor: f64::NAN,
            };
        }
        let r = trials as f64;
        let p = hits as f64 / r;
        let one = 1.0 / r;
        Self {
            value: p,
            se: (p * (1.0 - p) / r).sqrt(),
            samples: trials,
            se_floor: (one * (1.0 - one) / r).sqrt(),
        }
    }

    /// Sample mean from running sums of `x` and `x²`.
    pub fn mean(sum: f64, sum_sq: f64, samples: u64) -> Self {
        if samples == 0 {
            return Self {
                value: f64::NAN,
                se: f64::NAN,
                samples: 0,
                se_floor: 0.0,
            };
        }
        let n = samples as f64;
        let mean = sum / n;
        let var = if samples > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            value: mean,
            se: (var / n).sqrt(),
            samples,
            se_floor: 0.0,
        }
    }

    /// `(analytic - estimate) / SE`, with the SE floor applied; zero when
    /// both agree exactly.
    pub fn z_score(&self, analytic: f64) -> f64 {
        let diff = analytic - self.value;
        let se = self.se.max(self.se_floor);
        if diff == 0.0 {
            0.0
        } else if se > 0.0 {
            diff / se
        } else {
            diff.signum() * f64::INFINITY
        }
    }
}

#[derive(Default)]
struct Work {
    path: TimePath,
    tree: Tree,
    events: Vec<MutationEvent>,
    alleles: Vec<Allele>,
    occupancy: Vec<f64>,
}

fn check_replicates(replicates: u64, minimum: u64) -> Result<()> {
    if replicates < minimum {
        return Err(Error::Argument(format!("need at least {minimum} replicates, got {replicates}")));
    }
    Ok(())
}

/// Demes simulated for a pairwise model under the chosen sampling scheme.
pub fn pair_deme_sizes(cfg: &SampleConfiguration, model: u8, sampling: PairSampling) -> Result<Vec<usize>> {
    let sizes = population_sizes(cfg);
    let demes = model_demes(model)?;
    Ok(match sampling {
        PairSampling::Pooled => vec![demes.iter().map(|&d| sizes[d]).sum()],
        PairSampling::Structured => demes.iter().map(|&d| sizes[d]).collect(),
    })
}

/// Distribution of the pooled lineage count at `t_d` for independent demes
/// of the given sizes; index `M - 1`.
pub fn deme_lineage_distribution(demog: &DemographicModel, deme_sizes: &[usize]) -> Result<Vec<f64>> {
    let td = demog.divergence_time();
    // dist[k] = P(k lineages so far)
    let mut dist = vec![1.0];
    for &n in deme_sizes {
        let d = lineage_count_distribution(demog, n, td)?;
        let mut next = vec![0.0; dist.len() + n];
        for (a, pa) in dist.iter().enumerate() {
            for (b, pb) in d.probs.iter().enumerate() {
                next[a + b + 1] += pa * pb;
            }
        }
        dist = next;
    }
    dist.remove(0);
    Ok(dist)
}

fn analytic_count_prob(demog: &DemographicModel, deme_sizes: &[usize], m: usize) -> Result<f64> {
    let dist = deme_lineage_distribution(demog, deme_sizes)?;
    Ok(m.checked_sub(1).and_then(|i| dist.get(i)).copied().unwrap_or(0.0))
}

// ---------------------------------------------------------------------------
// lineage counts

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineageEstimate {
    pub sample_size: usize,
    pub replicates: u64,
    /// Replicates ending with `M` lineages, index `M - 1`.
    pub counts: Vec<u64>,
    pub probs: Vec<Estimate>,
}

impl LineageEstimate {
    pub fn prob(&self, m: usize) -> &Estimate {
        &self.probs[m - 1]
    }
}

struct CountTally(Vec<u64>);

impl Merge for CountTally {
    fn merge(&mut self, other: Self) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }
}

/// Lineage-count frequencies at `t_d` for independent demes of the given sizes.
pub fn estimate_lineage_counts(
    demog: &DemographicModel,
    deme_sizes: &[usize],
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<LineageEstimate> {
    check_replicates(replicates, 1000)?;
    let n: usize = deme_sizes.iter().sum();
    if n == 0 {
        return Err(Error::Argument("empty sample".into()));
    }
    let streams = Streams::new(seed);
    let tally = run_blocks(
        replicates,
        opts.block_size,
        || CountTally(vec![0; n]),
        |acc, w: &mut Work, r| {
            let mut rng = streams.get(Purpose::Lineages as u64, r);
            w.path.simulate(demog, deme_sizes, false, &mut rng)?;
            acc.0[w.path.survivors_total() - 1] += 1;
            Ok(())
        },
    )?;
    let probs = tally.0.iter().map(|&c| Estimate::proportion(c, replicates)).collect();
    Ok(LineageEstimate {
        sample_size: n,
        replicates,
        counts: tally.0,
        probs,
    })
}

/// Lineage-count frequencies for one pairwise model of `cfg`.
pub fn estimate_lineage_distribution(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    model: u8,
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<LineageEstimate> {
    let sizes = pair_deme_sizes(cfg, model, opts.sampling)?;
    estimate_lineage_counts(demog, &sizes, replicates, seed, opts)
}

// ---------------------------------------------------------------------------
// conditional interval moments

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub sample_size: usize,
    pub divergence_count: usize,
    pub replicates: u64,
    pub accepted: u64,
    /// `E[T_i]` for `i = M..=N`.
    pub first: Vec<(usize, Estimate)>,
    /// `E[T_j T_k]` for `M <= j <= k <= N`.
    pub second: Vec<(usize, usize, Estimate)>,
}

impl MomentEstimate {
    pub fn first_moment(&self, i: usize) -> Option<&Estimate> {
        self.first.iter().find(|(k, _)| *k == i).map(|(_, e)| e)
    }

    pub fn second_moment(&self, j: usize, k: usize) -> Option<&Estimate> {
        let (a, b) = (j.min(k), j.max(k));
        self.second.iter().find(|(x, y, _)| *x == a && *y == b).map(|(_, _, e)| e)
    }

    /// Point estimates as a moment table (reference size taken from `demog`).
    pub fn means(&self, demog: &DemographicModel) -> Result<ConditionalTimeMoments> {
        let first = self.first.iter().map(|(_, e)| e.value).collect();
        ConditionalTimeMoments::from_tables(
            self.sample_size,
            self.divergence_count,
            demog.divergence_time(),
            demog.reference_size(),
            first,
            |j, k| self.second_moment(j, k).map_or(f64::NAN, |e| e.value),
        )
    }
}

struct MomentTally {
    accepted: u64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    pair_sum: Vec<f64>,
    pair_sum_sq: Vec<f64>,
}

impl Merge for MomentTally {
    fn merge(&mut self, other: Self) {
        self.accepted += other.accepted;
        for (a, b) in [
            (&mut self.sum, other.sum),
            (&mut self.sum_sq, other.sum_sq),
            (&mut self.pair_sum, other.pair_sum),
            (&mut self.pair_sum_sq, other.pair_sum_sq),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Rejection-sampled moments of the interval lengths given `M` pooled
/// lineages at `t_d`, for independent demes of the given sizes.
pub fn estimate_conditional_moments_for(
    demog: &DemographicModel,
    deme_sizes: &[usize],
    m: usize,
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<MomentEstimate> {
    check_replicates(replicates, 1)?;
    let n: usize = deme_sizes.iter().sum();
    if !(1 <= m && m <= n) {
        return Err(Error::Argument(format!("need 1 <= M <= N, got N = {n}, M = {m}")));
    }
    let p = analytic_count_prob(demog, deme_sizes, m)?;
    if p < MIN_ACCEPTANCE {
        return Err(Error::InfeasibleConditioning {
            m,
            acceptance: p,
            minimum: MIN_ACCEPTANCE,
        });
    }
    let td = demog.divergence_time();
    let width = n - m + 1;
    let pairs: Vec<(usize, usize)> = (m..=n).flat_map(|j| (j..=n).map(move |k| (j, k))).collect();
    let demes: Vec<usize> = (0..deme_sizes.len()).collect();
    let streams = Streams::new(seed);
    let tally = run_blocks(
        replicates,
        opts.block_size,
        || MomentTally {
            accepted: 0,
            sum: vec![0.0; width],
            sum_sq: vec![0.0; width],
            pair_sum: vec![0.0; pairs.len()],
            pair_sum_sq: vec![0.0; pairs.len()],
        },
        |acc, w: &mut Work, r| {
            let mut rng = streams.get(Purpose::Moments as u64, r);
            w.path.simulate(demog, deme_sizes, false, &mut rng)?;
            if w.path.occupancy(&demes, td, &mut w.occupancy) != m {
                return Ok(());
            }
            acc.accepted += 1;
            let t = &w.occupancy;
            for i in m..=n {
                acc.sum[i - m] += t[i];
                acc.sum_sq[i - m] += t[i] * t[i];
            }
            for (slot, &(j, k)) in pairs.iter().enumerate() {
                let v = t[j] * t[k];
                acc.pair_sum[slot] += v;
                acc.pair_sum_sq[slot] += v * v;
            }
            Ok(())
        },
    )?;
    if tally.accepted == 0 {
        return Err(Error::InfeasibleConditioning {
            m,
            acceptance: 0.0,
            minimum: MIN_ACCEPTANCE,
        });
    }
    let first = (m..=n)
        .map(|i| (i, Estimate::mean(tally.sum[i - m], tally.sum_sq[i - m], tally.accepted)))
        .collect();
    let second = pairs
        .iter()
        .enumerate()
        .map(|(s, &(j, k))| (j, k, Estimate::mean(tally.pair_sum[s], tally.pair_sum_sq[s], tally.accepted)))
        .collect();
    Ok(MomentEstimate {
        sample_size: n,
        divergence_count: m,
        replicates,
        accepted: tally.accepted,
        first,
        second,
    })
}

/// Rejection-sampled moments for pairwise model `model` of `cfg`.
pub fn estimate_conditional_moments(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    model: u8,
    m: usize,
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<MomentEstimate> {
    let sizes = pair_deme_sizes(cfg, model, opts.sampling)?;
    estimate_conditional_moments_for(demog, &sizes, m, replicates, seed, opts)
}

// ---------------------------------------------------------------------------
// two-mutation events

/// Frequencies of the ordered two-mutation event for one pairwise model,
/// overall and split by the realized lineage count at `t_d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairEventEstimate {
    pub model: u8,
    pub sample_size: usize,
    pub derived_pair: (Allele, Allele),
    pub target_counts: (usize, usize, usize),
    pub replicates: u64,
    pub event: Estimate,
    pub joint: Estimate,
    /// Index `M - 1`.
    pub strata: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratum {
    pub lineages: usize,
    pub replicates: u64,
    pub event: Estimate,
    pub joint: Estimate,
}

impl PairEventEstimate {
    pub fn stratum(&self, m: usize) -> Option<&Stratum> {
        self.strata.get(m.checked_sub(1)?)
    }
}

#[derive(Clone)]
struct PairTally {
    reps: Vec<u64>,
    events: Vec<u64>,
    joints: Vec<u64>,
}

impl Merge for PairTally {
    fn merge(&mut self, other: Self) {
        for (a, b) in [(&mut self.reps, other.reps), (&mut self.events, other.events), (&mut self.joints, other.joints)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Leaf counts `(a, x, y)` when the replicate shows the ordered event:
/// exactly two allele-changing mutations below `t_d`, both from `a`, the
/// older producing `x` and the younger `y`, with `a` still sampled.
fn classify(events: &[MutationEvent], leaf_alleles: &[Allele], td: f64, x: Allele, y: Allele) -> Option<(usize, usize, usize, bool)> {
    let mut hits = events.iter().filter(|e| e.from != e.to && e.time < td);
    let (first, second) = (hits.next()?, hits.next()?);
    if hits.next().is_some() || first.from != Allele::A || second.from != Allele::A {
        return None;
    }
    let (older, younger) = if first.time >= second.time { (first, second) } else { (second, first) };
    if older.to != x || younger.to != y {
        return None;
    }
    let (mut na, mut nx, mut ny) = (0, 0, 0);
    for &a in leaf_alleles {
        if a == Allele::A {
            na += 1;
        } else if a == x {
            nx += 1;
        } else if a == y {
            ny += 1;
        }
    }
    if na == 0 {
        return None;
    }
    Some((na, nx, ny, na + nx + ny == leaf_alleles.len()))
}

/// Simulate the pooled (or structured) sample of `pm` and count the ordered
/// two-mutation event and the joint event with `pm.counts`.
pub fn estimate_pair_events(
    pm: &PairModel,
    deme_sizes: &[usize],
    demog: &DemographicModel,
    mm: &MutationModel,
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<PairEventEstimate> {
    check_replicates(replicates, 1)?;
    let n: usize = deme_sizes.iter().sum();
    if n != pm.sample_size {
        return Err(Error::Argument(format!("demes hold {n} lineages but model {} has N = {}", pm.index, pm.sample_size)));
    }
    if mm.theta() > 0.1 {
        log::warn!("theta = {} is outside the rare-mutation regime", mm.theta());
    }
    let td = demog.divergence_time();
    let mu = mutation_rate(demog, mm);
    let (x, y) = pm.derived_pair;
    let cap = if opts.mutate_ancestral { f64::INFINITY } else { td };
    let streams = Streams::new(seed);
    let purpose = Purpose::Pair as u64 + pm.index as u64;
    let tally = run_blocks(
        replicates,
        opts.block_size,
        || PairTally {
            reps: vec![0; n],
            events: vec![0; n],
            joints: vec![0; n],
        },
        |acc, w: &mut Work, r| {
            let mut rng = streams.get(purpose, r);
            w.path.simulate(demog, deme_sizes, opts.mutate_ancestral, &mut rng)?;
            let slot = w.path.survivors_total() - 1;
            acc.reps[slot] += 1;
            let mut length = w.path.length_below(td);
            if opts.mutate_ancestral {
                length += w.path.length_above(td);
            }
            let count = poisson(mu * length, &mut rng)?;
            if count < 2 {
                return Ok(());
            }
            w.tree.build(&w.path, &mut rng);
            drop_mutations(&w.tree, mm, count, cap, &mut rng, &mut w.events, &mut w.alleles);
            let leaves = &w.alleles[..w.tree.leaves()];
            if let Some((na, nx, ny, complete)) = classify(&w.events, leaves, td, x, y) {
                acc.events[slot] += 1;
                if complete && (na, nx, ny) == pm.counts {
                    acc.joints[slot] += 1;
                }
            }
            Ok(())
        },
    )?;
    let strata = (0..n)
        .map(|s| Stratum {
            lineages: s + 1,
            replicates: tally.reps[s],
            event: Estimate::proportion(tally.events[s], tally.reps[s]),
            joint: Estimate::proportion(tally.joints[s], tally.reps[s]),
        })
        .collect();
    Ok(PairEventEstimate {
        model: pm.index,
        sample_size: n,
        derived_pair: pm.derived_pair,
        target_counts: pm.counts,
        replicates,
        event: Estimate::proportion(tally.events.iter().sum(), replicates),
        joint: Estimate::proportion(tally.joints.iter().sum(), replicates),
        strata,
    })
}

// ---------------------------------------------------------------------------
// full spectrum

/// Per-population allele counts, `[population][allele]`.
pub type AlleleTable = [[u32; 4]; 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigurationFrequency {
    pub counts: AlleleTable,
    pub hits: u64,
    pub frequency: Estimate,
}

/// The combined value rebuilt from simulated per-model frequencies, each
/// conditioned on the model's own lineage count at `t_d`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineEstimate {
    pub joints: [Estimate; 3],
    pub events: [Estimate; 3],
    pub weights: [f64; 3],
    pub indicators: [u8; 3],
    /// The SE ignores the (second-order) variability of the weights.
    pub combined: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    pub replicates: u64,
    /// Every configuration observed, in lexicographic order of counts.
    pub configurations: Vec<ConfigurationFrequency>,
    /// Frequency of the configuration described by the sample itself.
    pub target: Estimate,
    pub models: [PairEventEstimate; 3],
    pub pipeline: PipelineEstimate,
}

struct ConfigTally(BTreeMap<AlleleTable, u64>);

impl Merge for ConfigTally {
    fn merge(&mut self, other: Self) {
        for (k, v) in other.0 {
            *self.0.entry(k).or_insert(0) += v;
        }
    }
}

/// Outcome of one replicate of the three-population genealogy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReplicateRecord {
    pub index: u64,
    pub lineages: [usize; 3],
    pub counts: AlleleTable,
}

fn spectrum_replicate(
    demog: &DemographicModel,
    mm: &MutationModel,
    sizes: &[usize; 3],
    streams: &Streams,
    opts: &OracleOptions,
    w: &mut Work,
    r: u64,
) -> Result<ReplicateRecord> {
    let td = demog.divergence_time();
    let mut rng = streams.get(Purpose::Spectrum as u64, r);
    w.path.simulate(demog, sizes, opts.mutate_ancestral, &mut rng)?;
    let mut length = w.path.length_below(td);
    if opts.mutate_ancestral {
        length += w.path.length_above(td);
    }
    let count = poisson(mutation_rate(demog, mm) * length, &mut rng)?;
    let mut counts = [[0u32; 4]; 3];
    if count == 0 {
        for (d, &n) in sizes.iter().enumerate() {
            counts[d][0] = n as u32;
        }
    } else {
        let cap = if opts.mutate_ancestral { f64::INFINITY } else { td };
        w.tree.build(&w.path, &mut rng);
        drop_mutations(&w.tree, mm, count, cap, &mut rng, &mut w.events, &mut w.alleles);
        for (leaf, &d) in w.tree.leaf_deme.iter().enumerate() {
            counts[d][w.alleles[leaf].index()] += 1;
        }
    }
    let s = &w.path.survivors;
    Ok(ReplicateRecord {
        index: r,
        lineages: [s[0], s[1], s[2]],
        counts,
    })
}

/// Per-replicate records of the three-population simulation, in replicate
/// order. These are the same replicates [`estimate_spectrum`] tabulates.
pub fn simulate_replicates(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    mm: &MutationModel,
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<Vec<ReplicateRecord>> {
    cfg.validate()?;
    let sizes = population_sizes(cfg);
    let streams = Streams::new(seed);
    struct Records(Vec<ReplicateRecord>);
    impl Merge for Records {
        fn merge(&mut self, other: Self) {
            self.0.extend(other.0);
        }
    }
    let out = run_blocks(
        replicates,
        opts.block_size,
        || Records(Vec::new()),
        |acc, w: &mut Work, r| {
            acc.0.push(spectrum_replicate(demog, mm, &sizes, &streams, opts, w, r)?);
            Ok(())
        },
    )?;
    Ok(out.0)
}

/// Target configuration of the sample as an allele table.
pub fn allele_table(cfg: &SampleConfiguration) -> AlleleTable {
    let mut t = [[0u32; 4]; 3];
    for (d, p) in cfg.populations.iter().enumerate() {
        t[d][0] = p.ancestral as u32;
        t[d][Allele::derived_of(d + 1).index()] = p.derived as u32;
    }
    t
}

/// Simulated configuration frequencies and per-model event frequencies.
pub fn estimate_spectrum(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    mm: &MutationModel,
    thresholds: [f64; 3],
    replicates: u64,
    seed: u64,
    opts: &OracleOptions,
) -> Result<SpectrumEstimate> {
    check_replicates(replicates, 1)?;
    cfg.validate()?;
    let sizes = population_sizes(cfg);
    let streams = Streams::new(seed);
    let tally = run_blocks(
        replicates,
        opts.block_size,
        || ConfigTally(BTreeMap::new()),
        |acc, w: &mut Work, r| {
            let rec = spectrum_replicate(demog, mm, &sizes, &streams, opts, w, r)?;
            *acc.0.entry(rec.counts).or_insert(0) += 1;
            Ok(())
        },
    )?;
    let target_key = allele_table(cfg);
    let target = Estimate::proportion(tally.0.get(&target_key).copied().unwrap_or(0), replicates);
    let configurations = tally
        .0
        .into_iter()
        .map(|(counts, hits)| ConfigurationFrequency {
            counts,
            hits,
            frequency: Estimate::proportion(hits, replicates),
        })
        .collect();

    let mut models = Vec::with_capacity(3);
    for k in 1..=3u8 {
        let pm = PairModel::from_config(cfg, k)?;
        let demes = pair_deme_sizes(cfg, k, opts.sampling)?;
        models.push(estimate_pair_events(&pm, &demes, demog, mm, replicates, seed, opts).map_err(|e| e.in_model(k))?);
    }
    let models: [PairEventEstimate; 3] = models.try_into().map_err(|_| Error::Argument("three models".into()))?;
    let pipeline = pipeline_estimate(cfg, &models, thresholds)?;
    Ok(SpectrumEstimate {
        replicates,
        configurations,
        target,
        models,
        pipeline,
    })
}

/// Rebuild the combined value from simulated per-model frequencies.
pub fn pipeline_estimate(
    cfg: &SampleConfiguration,
    models: &[PairEventEstimate; 3],
    thresholds: [f64; 3],
) -> Result<PipelineEstimate> {
    let mut joints = [Estimate::proportion(0, 0); 3];
    let mut events = joints;
    for k in 0..3 {
        let m = PairModel::from_config(cfg, k as u8 + 1)?.divergence_count;
        let s = models[k].stratum(m).ok_or_else(|| Error::Argument(format!("model {}: no stratum M = {m}", k + 1)))?;
        joints[k] = s.joint;
        events[k] = s.event;
    }
    let nan_to_zero = |v: f64| if v.is_nan() { 0.0 } else { v };
    let w = weights(events.map(|e| nan_to_zero(e.value)))?;
    let ind = indicators(joints.map(|e| nan_to_zero(e.value)), thresholds)?;
    let mut value = 0.0;
    let mut var = 0.0;
    let mut se_floor: f64 = 0.0;
    for k in 0..3 {
        let c = f64::from(ind[k]) * w[k];
        value += c * nan_to_zero(joints[k].value);
        var += (c * joints[k].se).powi(2);
        se_floor = se_floor.max(w[k] * joints[k].se_floor);
    }
    let samples = joints.iter().map(|e| e.samples).min().unwrap_or(0);
    Ok(PipelineEstimate {
        joints,
        events,
        weights: w,
        indicators: ind,
        combined: Estimate {
            value,
            se: var.sqrt(),
            samples,
            se_floor,
        },
    })
}
