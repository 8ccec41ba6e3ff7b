//! Sample configuration across the three populations and the pairwise models
//! derived from it.
//!
//! Population `p` carries the ancestral allele `a` and one derived allele:
//! `b` in population 1, `c` in population 2, `d` in population 3. Pairwise
//! model `k` pools populations `(k, k+1)` cyclically, so model 1 is (1, 2),
//! model 2 is (2, 3) and model 3 is (3, 1); its first derived allele comes from
//! the first population of the pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Allele {
    A,
    B,
    C,
    D,
}

impl Allele {
    pub const ALL: [Allele; 4] = [Allele::A, Allele::B, Allele::C, Allele::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Derived allele carried by population `pop` (1-based).
    pub fn derived_of(pop: usize) -> Self {
        match pop {
            1 => Allele::B,
            2 => Allele::C,
            3 => Allele::D,
            _ => panic!("population index {pop} outside 1..=3"),
        }
    }

    pub fn symbol(self) -> char {
        ['a', 'b', 'c', 'd'][self.index()]
    }
}

/// One population's sample: ancestral and derived allele counts and the
/// number of its lineages alive at the divergence time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub ancestral: usize,
    pub derived: usize,
    pub lineages_at_divergence: usize,
}

impl PopulationSample {
    pub fn new(ancestral: usize, derived: usize, lineages_at_divergence: usize) -> Self {
        Self {
            ancestral,
            derived,
            lineages_at_divergence,
        }
    }

    pub fn size(&self) -> usize {
        self.ancestral + self.derived
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleConfiguration {
    pub populations: [PopulationSample; 3],
}

impl SampleConfiguration {
    pub fn new(populations: [PopulationSample; 3]) -> Result<Self> {
        let cfg = Self { populations };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Same sample in every population.
    pub fn symmetric(ancestral: usize, derived: usize, lineages_at_divergence: usize) -> Result<Self> {
        Self::new([PopulationSample::new(ancestral, derived, lineages_at_divergence); 3])
    }

    pub fn validate(&self) -> Result<()> {
        for (k, p) in self.populations.iter().enumerate() {
            let m = p.lineages_at_divergence;
            if m < 1 || m > p.size() {
                return Err(Error::Argument(format!(
                    "population {}: need 1 <= m <= n, got m = {m}, n = {}",
                    k + 1,
                    p.size()
                )));
            }
        }
        Ok(())
    }

    pub fn population(&self, pop: usize) -> &PopulationSample {
        &self.populations[pop - 1]
    }

    pub fn total_size(&self) -> usize {
        self.populations.iter().map(PopulationSample::size).sum()
    }

    pub fn total_lineages_at_divergence(&self) -> usize {
        self.populations.iter().map(|p| p.lineages_at_divergence).sum()
    }

    /// Total allele counts `(n^a, n^b, n^c, n^d)`.
    pub fn allele_counts(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (k, p) in self.populations.iter().enumerate() {
            out[0] += p.ancestral;
            out[Allele::derived_of(k + 1).index()] += p.derived;
        }
        out
    }

    /// Rotate population roles: population `p` becomes population `p + 1`
    /// (cyclically), carrying the next derived allele.
    pub fn rotated(&self) -> Self {
        let [p1, p2, p3] = self.populations;
        Self {
            populations: [p3, p1, p2],
        }
    }
}

/// Populations pooled by pairwise model `index`, in (first, second) order.
pub fn model_populations(index: u8) -> Result<(usize, usize)> {
    match index {
        1 => Ok((1, 2)),
        2 => Ok((2, 3)),
        3 => Ok((3, 1)),
        _ => Err(Error::Argument(format!("pairwise model index {index} outside 1..=3"))),
    }
}

/// One pairwise model: the pooled sample of two populations with its
/// ancestral/derived split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairModel {
    pub index: u8,
    pub derived_pair: (Allele, Allele),
    pub sample_size: usize,
    pub divergence_count: usize,
    /// `(N^a, N^x, N^y)`.
    pub counts: (usize, usize, usize),
}

impl PairModel {
    pub fn new(index: u8, divergence_count: usize, counts: (usize, usize, usize)) -> Result<Self> {
        let (p, q) = model_populations(index)?;
        let n = counts.0 + counts.1 + counts.2;
        if divergence_count < 1 || divergence_count > n {
            return Err(Error::Argument(format!(
                "model {index}: need 1 <= M <= N, got M = {divergence_count}, N = {n}"
            )));
        }
        Ok(Self {
            index,
            derived_pair: (Allele::derived_of(p), Allele::derived_of(q)),
            sample_size: n,
            divergence_count,
            counts,
        })
    }

    pub fn from_config(cfg: &SampleConfiguration, index: u8) -> Result<Self> {
        let (p, q) = model_populations(index)?;
        let (sp, sq) = (cfg.population(p), cfg.population(q));
        Self::new(
            index,
            sp.lineages_at_divergence + sq.lineages_at_divergence,
            (sp.ancestral + sq.ancestral, sp.derived, sq.derived),
        )
    }

    /// All three alleles of the pair are present in the sample.
    pub fn is_triallelic(&self) -> bool {
        self.counts.0 >= 1 && self.counts.1 >= 1 && self.counts.2 >= 1
    }
}
