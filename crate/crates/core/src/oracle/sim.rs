//! Per-replicate genealogy simulation.
//!
//! Coalescence times are drawn first for every deme by time rescaling; tree
//! topology and mutations are only materialized when a replicate needs them,
//! which for small `θ` is rare.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use serde::Serialize;

use crate::demography::DemographicModel;
use crate::error::{Error, Result};
use crate::sample::Allele;
use crate::triallelic::MutationModel;

pub(crate) const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Node {
    pub time: f64,
    pub parent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MutationEvent {
    /// Node at the bottom of the mutated branch (leaves are `0..n`).
    pub branch: usize,
    pub time: f64,
    pub from: Allele,
    pub to: Allele,
}

/// Draw coalescence times for `n` lineages in one deme over `[t0, t1)`,
/// appending them to `out`. Returns the number of lineages left at `t1`.
///
/// With `k` lineages the waiting time in intensity units is exponential with
/// mean `4N / (k(k-1))`; the event time is recovered through the inverse
/// cumulative intensity.
pub(crate) fn coalescence_times(
    demog: &DemographicModel,
    n: usize,
    t0: f64,
    t1: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<f64>,
) -> Result<usize> {
    let scale = demog.coalescence_scale();
    let mut y = demog.intensity(t0)?;
    let y_end = if t1.is_finite() { demog.intensity(t1)? } else { demog.intensity_limit() };
    let mut k = n;
    while k >= 2 {
        let e: f64 = Exp1.sample(rng);
        y += e * scale / (k * (k - 1)) as f64;
        if y >= y_end {
            break;
        }
        out.push(demog.inverse_intensity(y)?);
        k -= 1;
    }
    Ok(k)
}

/// Coalescence times of every deme below the divergence time, plus the
/// pooled ancestral times when the genealogy is continued upward.
#[derive(Debug, Default, Clone)]
pub(crate) struct TimePath {
    pub deme_sizes: Vec<usize>,
    pub deme_times: Vec<Vec<f64>>,
    pub survivors: Vec<usize>,
    pub ancestral_times: Vec<f64>,
    /// The ancestral process was run to a single lineage.
    pub complete: bool,
}

impl TimePath {
    pub fn simulate(
        &mut self,
        demog: &DemographicModel,
        deme_sizes: &[usize],
        continue_up: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let td = demog.divergence_time();
        self.deme_sizes.clear();
        self.deme_sizes.extend_from_slice(deme_sizes);
        self.deme_times.resize_with(deme_sizes.len(), Vec::new);
        self.survivors.clear();
        self.ancestral_times.clear();
        for (d, &n) in deme_sizes.iter().enumerate() {
            self.deme_times[d].clear();
            let left = coalescence_times(demog, n, 0.0, td, rng, &mut self.deme_times[d])?;
            self.survivors.push(left);
        }
        self.complete = false;
        if continue_up {
            let pooled: usize = self.survivors.iter().sum();
            let left = coalescence_times(demog, pooled, td, f64::INFINITY, rng, &mut self.ancestral_times)?;
            if left > 1 {
                return Err(Error::Domain(format!(
                    "cumulative intensity is bounded; {left} lineages never reach a common ancestor"
                )));
            }
            self.complete = true;
        }
        Ok(())
    }

    pub fn survivors_total(&self) -> usize {
        self.survivors.iter().sum()
    }

    /// Branch length below the divergence time (generations).
    pub fn length_below(&self, td: f64) -> f64 {
        let mut total = 0.0;
        for (d, times) in self.deme_times.iter().enumerate() {
            let mut k = self.deme_sizes[d];
            let mut last = 0.0;
            for &t in times {
                total += k as f64 * (t - last);
                last = t;
                k -= 1;
            }
            total += k as f64 * (td - last);
        }
        total
    }

    /// Branch length above the divergence time, up to the root.
    pub fn length_above(&self, td: f64) -> f64 {
        let mut k = self.survivors_total();
        let mut last = td;
        let mut total = 0.0;
        for &t in &self.ancestral_times {
            total += k as f64 * (t - last);
            last = t;
            k -= 1;
        }
        total
    }

    /// Time spent with each pooled lineage count of a subset of demes within
    /// `[0, t_d]`: `out[k]` is the duration with exactly `k` lineages. Returns
    /// the count left at `t_d`.
    pub fn occupancy(&self, demes: &[usize], td: f64, out: &mut Vec<f64>) -> usize {
        let n: usize = demes.iter().map(|&d| self.deme_sizes[d]).sum();
        out.clear();
        out.resize(n + 1, 0.0);
        // merge the sorted event lists of the chosen demes
        let mut idx = vec![0usize; demes.len()];
        let mut k = n;
        let mut last = 0.0;
        loop {
            let mut best = None;
            for (s, &d) in demes.iter().enumerate() {
                if let Some(&t) = self.deme_times[d].get(idx[s]) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, s));
                    }
                }
            }
            match best {
                Some((t, s)) => {
                    out[k] += t - last;
                    last = t;
                    k -= 1;
                    idx[s] += 1;
                }
                None => break,
            }
        }
        out[k] += td - last;
        k
    }
}

/// A realized genealogy with topology.
#[derive(Debug, Default, Clone)]
pub(crate) struct Tree {
    pub nodes: Vec<Node>,
    /// Population (deme index) of each leaf.
    pub leaf_deme: Vec<usize>,
    pub roots: Vec<usize>,
    active: Vec<usize>,
    scratch: Vec<usize>,
}

impl Tree {
    fn merge(&mut self, t: f64, rng: &mut ChaCha8Rng) {
        let k = self.scratch.len();
        let i = rng.random_range(0..k);
        let mut j = rng.random_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (self.scratch[i], self.scratch[j]);
        let id = self.nodes.len();
        self.nodes.push(Node { time: t, parent: NONE });
        self.nodes[a].parent = id;
        self.nodes[b].parent = id;
        let (hi, lo) = (i.max(j), i.min(j));
        self.scratch.swap_remove(hi);
        self.scratch.swap_remove(lo);
        self.scratch.push(id);
    }

    /// Attach a random topology to the coalescence times of `path`.
    pub fn build(&mut self, path: &TimePath, rng: &mut ChaCha8Rng) {
        self.nodes.clear();
        self.leaf_deme.clear();
        self.active.clear();
        for (d, &n) in path.deme_sizes.iter().enumerate() {
            for _ in 0..n {
                self.nodes.push(Node { time: 0.0, parent: NONE });
                self.leaf_deme.push(d);
            }
        }
        let mut first = 0;
        for (d, &n) in path.deme_sizes.iter().enumerate() {
            self.scratch.clear();
            self.scratch.extend(first..first + n);
            for &t in &path.deme_times[d] {
                self.merge(t, rng);
            }
            self.active.extend_from_slice(&self.scratch);
            first += n;
        }
        self.scratch.clear();
        self.scratch.extend_from_slice(&self.active);
        for &t in &path.ancestral_times {
            self.merge(t, rng);
        }
        self.roots.clear();
        self.roots.extend_from_slice(&self.scratch);
    }

    pub fn leaves(&self) -> usize {
        self.leaf_deme.len()
    }
}

/// Poisson mutations on the branches of `tree` below `cap`, with alleles
/// resolved from the root down. Returns the allele of every node.
pub(crate) fn drop_mutations(
    tree: &Tree,
    mm: &MutationModel,
    count: usize,
    cap: f64,
    rng: &mut ChaCha8Rng,
    events: &mut Vec<MutationEvent>,
    alleles: &mut Vec<Allele>,
) {
    events.clear();
    alleles.clear();
    alleles.resize(tree.nodes.len(), Allele::A);
    if count == 0 {
        return;
    }
    // mutable segment of every branch
    let mut cum = Vec::with_capacity(tree.nodes.len());
    let mut total = 0.0;
    for node in &tree.nodes {
        // a lineage without a parent is cut at the cap (or is the root when uncapped)
        let top = match node.parent {
            NONE if cap.is_finite() => cap,
            NONE => node.time,
            p => tree.nodes[p].time.min(cap),
        };
        total += (top - node.time).max(0.0);
        cum.push(total);
    }
    let mut placed: Vec<(usize, f64)> = Vec::with_capacity(count);
    for _ in 0..count {
        let u = rng.random::<f64>() * total;
        let b = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        let start = if b == 0 { 0.0 } else { cum[b - 1] };
        placed.push((b, tree.nodes[b].time + (u - start)));
    }
    // oldest first along each branch; branches top-down by node index
    placed.sort_by(|x, y| y.0.cmp(&x.0).then(y.1.total_cmp(&x.1)));
    let mut next = 0;
    for v in (0..tree.nodes.len()).rev() {
        let parent = tree.nodes[v].parent;
        let mut current = if parent == NONE { Allele::A } else { alleles[parent] };
        while next < placed.len() && placed[next].0 == v {
            let to = sample_target(mm, current, rng);
            events.push(MutationEvent {
                branch: v,
                time: placed[next].1,
                from: current,
                to,
            });
            current = to;
            next += 1;
        }
        alleles[v] = current;
    }
}

fn sample_target(mm: &MutationModel, from: Allele, rng: &mut ChaCha8Rng) -> Allele {
    let row = mm.transition()[from.index()];
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (j, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return Allele::ALL[j];
        }
    }
    // rounding left a sliver above the last cumulative sum
    let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(from.index());
    Allele::ALL[last]
}

pub(crate) fn poisson(mean: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| Error::Argument(format!("Poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}
