//! Monte Carlo coalescent simulator used as ground truth for the analytic
//! pipeline.
//!
//! Each population's sample coalesces on its own until the divergence time,
//! the survivors are pooled, and (when needed) the ancestral population is
//! run to the most recent common ancestor. Mutations fall on branches as a
//! Poisson process with rate `θ / (4N_ref)` per generation, i.e. `θ/2` per
//! `2N_ref` generations, and only below the divergence time unless
//! [`OracleOptions::mutate_ancestral`] is set.
//!
//! Replicate `r` of a computation draws from its own ChaCha8 stream keyed by
//! `(seed, purpose, r)`. Replicates are grouped into fixed-size blocks whose
//! partial results are reduced pairwise in block order, so every estimate is
//! bit-identical for any number of worker threads.

mod estimate;
pub(crate) mod sim;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demography::DemographicModel;
use crate::error::{Error, Result};
use crate::sample::{model_populations, Allele, SampleConfiguration};
use crate::triallelic::MutationModel;

pub use estimate::*;
pub use sim::MutationEvent;

use sim::{drop_mutations, poisson, TimePath, Tree};

/// How a pairwise model's sample is simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSampling {
    /// All `N_i` lineages in one population, the setting the analytic
    /// formulas describe.
    #[default]
    Pooled,
    /// The two populations coalesce separately until the divergence time.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub sampling: PairSampling,
    /// Allow mutations above the divergence time.
    pub mutate_ancestral: bool,
    /// Replicates per work unit. Part of the reproducibility key: changing it
    /// changes floating-point summation order.
    pub block_size: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            sampling: PairSampling::Pooled,
            mutate_ancestral: false,
            block_size: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Genealogy = 1,
    Lineages = 2,
    Moments = 3,
    Spectrum = 4,
    // one stream family per pairwise model
    Pair = 8,
}

struct Streams {
    base: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn get(&self, purpose: u64, index: u64) -> ChaCha8Rng {
        debug_assert!(index < 1 << 56);
        let mut rng = self.base.clone();
        rng.set_stream((purpose << 56) | index);
        rng.set_word_pos(0);
        rng
    }
}

/// Partial results that combine associatively.
pub(crate) trait Merge {
    fn merge(&mut self, other: Self);
}

/// Run `body` for replicates `0..replicates` in parallel blocks and reduce
/// the per-block accumulators pairwise in block order.
fn run_blocks<A, W, F>(replicates: u64, block: u64, init: impl Fn() -> A + Sync, body: F) -> Result<A>
where
    A: Merge + Send,
    W: Default,
    F: Fn(&mut A, &mut W, u64) -> Result<()> + Sync,
{
    let block = block.max(1);
    let blocks = replicates.div_ceil(block);
    let mut parts: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            let mut work = W::default();
            for r in b * block..((b + 1) * block).min(replicates) {
                body(&mut acc, &mut work, r)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Ok(init());
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(b);
            }
            next.push(a);
        }
        parts = next;
    }
    Ok(parts.pop().expect("one part left"))
}

/// Lineage counts at the divergence time for one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LineageCounts {
    pub per_population: [usize; 3],
    pub per_model: [usize; 3],
}

/// One simulated genealogy of the three-population sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenealogyReplicate {
    pub rng_seed: u64,
    /// For each pairwise model, `(i, T_i)` for every pooled lineage count
    /// visited within `[0, t_d]`, from `N_i` down.
    pub interval_lengths: [Vec<(usize, f64)>; 3],
    pub lineage_count_at_td: LineageCounts,
    pub mutation_events: Vec<MutationEvent>,
    pub leaf_alleles: [Vec<Allele>; 3],
    /// Age of the most recent common ancestor, when the genealogy was run
    /// that far.
    pub tree_height: Option<f64>,
}

fn population_sizes(cfg: &SampleConfiguration) -> [usize; 3] {
    cfg.populations.map(|p| p.size())
}

fn model_demes(index: u8) -> Result<[usize; 2]> {
    let (p, q) = model_populations(index)?;
    Ok([p - 1, q - 1])
}

fn mutation_rate(demog: &DemographicModel, mm: &MutationModel) -> f64 {
    mm.theta() / demog.coalescence_scale()
}

/// Simulate one genealogy with mutations, reproducibly from `seed`.
pub fn simulate_genealogy(
    cfg: &SampleConfiguration,
    demog: &DemographicModel,
    mm: &MutationModel,
    seed: u64,
    opts: &OracleOptions,
) -> Result<GenealogyReplicate> {
    cfg.validate()?;
    let td = demog.divergence_time();
    let reach_root = demog.intensity_limit().is_infinite();
    if opts.mutate_ancestral && !reach_root {
        return Err(Error::Domain("mutations above t_d need an unbounded cumulative intensity".into()));
    }
    let mut rng = Streams::new(seed).get(Purpose::Genealogy as u64, 0);
    let sizes = population_sizes(cfg);
    let mut path = TimePath::default();
    path.simulate(demog, &sizes, reach_root, &mut rng)?;

    let mu = mutation_rate(demog, mm);
    let mut length = path.length_below(td);
    let cap = if opts.mutate_ancestral {
        length += path.length_above(td);
        f64::INFINITY
    } else {
        td
    };
    let count = poisson(mu * length, &mut rng)?;
    let mut tree = Tree::default();
    tree.build(&path, &mut rng);
    let mut events = Vec::new();
    let mut alleles = Vec::new();
    drop_mutations(&tree, mm, count, cap, &mut rng, &mut events, &mut alleles);

    let mut leaf_alleles: [Vec<Allele>; 3] = Default::default();
    for (leaf, &d) in tree.leaf_deme.iter().enumerate() {
        leaf_alleles[d].push(alleles[leaf]);
    }
    let mut interval_lengths: [Vec<(usize, f64)>; 3] = Default::default();
    let mut per_model = [0; 3];
    let mut occ = Vec::new();
    for k in 1..=3u8 {
        let demes = model_demes(k)?;
        let left = path.occupancy(&demes, td, &mut occ);
        let n = demes.iter().map(|&d| sizes[d]).sum::<usize>();
        interval_lengths[k as usize - 1] = (left..=n).rev().map(|i| (i, occ[i])).collect();
        per_model[k as usize - 1] = left;
    }
    let per_population = [path.survivors[0], path.survivors[1], path.survivors[2]];
    let tree_height = if path.complete {
        tree.roots.first().map(|&r| tree.nodes[r].time)
    } else {
        None
    };
    Ok(GenealogyReplicate {
        rng_seed: seed,
        interval_lengths,
        lineage_count_at_td: LineageCounts {
            per_population,
            per_model,
        },
        mutation_events: events,
        leaf_alleles,
        tree_height,
    })
}
