//! Subcommand bodies. Each returns the files it wants written; nothing
//! touches the filesystem until every computation has succeeded.

use serde::Serialize;

use quadri_core::combiner::{evaluate_models, SpectrumResult};
use quadri_core::conditional_times::conditional_moments;
use quadri_core::lineage::lineage_count_distribution_with;
use quadri_core::oracle::{
    deme_lineage_distribution, estimate_conditional_moments, estimate_lineage_distribution, estimate_pair_events,
    estimate_spectrum, pair_deme_sizes, pipeline_estimate, simulate_replicates, Estimate, PairEventEstimate,
    SpectrumEstimate,
};
use quadri_core::sample::{Allele, PairModel, SampleConfiguration};
use quadri_core::triallelic::OuterRange;
use quadri_core::Result;

use crate::config::Setup;
use crate::output::{float, json, Csv};

pub type Files = Vec<(String, Vec<u8>)>;

fn models(cfg: &SampleConfiguration) -> Result<[PairModel; 3]> {
    Ok([PairModel::from_config(cfg, 1)?, PairModel::from_config(cfg, 2)?, PairModel::from_config(cfg, 3)?])
}

pub fn lineage_prob(s: &Setup) -> Result<Files> {
    let td = s.demography.divergence_time();
    let mut csv = Csv::new(&["model", "N", "M", "probability"]);
    for pm in models(&s.sample)? {
        let dist = lineage_count_distribution_with(&s.demography, pm.sample_size, td, &s.spectrum.time.lineage)?;
        for m in 1..=pm.sample_size {
            csv.row([pm.index.to_string(), pm.sample_size.to_string(), m.to_string(), float(dist.prob(m))]);
        }
    }
    Ok(vec![("lineage_prob.csv".into(), csv.into_bytes())])
}

pub fn times(s: &Setup) -> Result<Files> {
    let mut files = Vec::new();
    for pm in models(&s.sample)? {
        let t = conditional_moments(&s.demography, pm.sample_size, pm.divergence_count, &s.spectrum.time)
            .map_err(|e| e.in_model(pm.index))?;
        let mut first = Csv::new(&["i", "E_Ti"]);
        for (i, v) in t.first_moments() {
            first.row([i.to_string(), float(v)]);
        }
        let mut second = Csv::new(&["j", "k", "E_TjTk"]);
        for (j, k, v) in t.second_moments() {
            second.row([j.to_string(), k.to_string(), float(v)]);
        }
        files.push((format!("times_model{}_first.csv", pm.index), first.into_bytes()));
        files.push((format!("times_model{}_second.csv", pm.index), second.into_bytes()));
    }
    Ok(files)
}

#[derive(Serialize)]
struct ModelReport {
    index: u8,
    derived_pair: (Allele, Allele),
    sample_size: usize,
    divergence_count: usize,
    counts: (usize, usize, usize),
    joint: f64,
    event: f64,
}

#[derive(Serialize)]
struct SpectrumReport<'a> {
    note: &'static str,
    sample: &'a SampleConfiguration,
    theta: f64,
    outer_range: OuterRange,
    models: Vec<ModelReport>,
    result: SpectrumResult,
}

const SPECTRUM_NOTE: &str = "combined is a weighted score over the three pairwise models, not a probability \
normalized over all configurations; `normalized` is present only when a reference set was configured";

fn spectrum_result(s: &Setup, cfg: &SampleConfiguration) -> Result<(SpectrumResult, Vec<ModelReport>)> {
    let evals = evaluate_models(cfg, &s.demography, &s.mutation, &s.spectrum)?;
    let result = SpectrumResult::assemble(evals.each_ref().map(|e| e.joint), evals.each_ref().map(|e| e.event), s.thresholds)?;
    let reports = evals
        .iter()
        .map(|e| ModelReport {
            index: e.model.index,
            derived_pair: e.model.derived_pair,
            sample_size: e.model.sample_size,
            divergence_count: e.model.divergence_count,
            counts: e.model.counts,
            joint: e.joint,
            event: e.event,
        })
        .collect();
    Ok((result, reports))
}

pub fn spectrum(s: &Setup) -> Result<Files> {
    let (mut result, models) = spectrum_result(s, &s.sample)?;
    if !s.normalization.is_empty() {
        let mut total = 0.0;
        for cfg in &s.normalization {
            total += spectrum_result(s, cfg)?.0.combined;
        }
        if !(total > 0.0) {
            return Err(quadri_core::Error::Degenerate("combined values over the normalization set sum to zero".into()));
        }
        result.normalized = Some(result.combined / total);
    }
    result.validate()?;
    let report = SpectrumReport {
        note: SPECTRUM_NOTE,
        sample: &s.sample,
        theta: s.mutation.theta(),
        outer_range: s.spectrum.outer_range,
        models,
        result,
    };
    Ok(vec![("spectrum.json".into(), json(&report))])
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    seed: u64,
    replicates: u64,
    mutate_ancestral: bool,
    estimate: &'a SpectrumEstimate,
}

pub fn simulate(s: &Setup, replicate_rows: bool) -> Result<Files> {
    let est = estimate_spectrum(&s.sample, &s.demography, &s.mutation, s.thresholds, s.replicates, s.seed, &s.oracle)?;
    let report = SimulationReport {
        seed: s.seed,
        replicates: s.replicates,
        mutate_ancestral: s.oracle.mutate_ancestral,
        estimate: &est,
    };
    let mut files = vec![("simulate.json".to_string(), json(&report))];
    if replicate_rows {
        let records = simulate_replicates(&s.sample, &s.demography, &s.mutation, s.replicates, s.seed, &s.oracle)?;
        let mut header = vec!["replicate".to_string(), "m1".into(), "m2".into(), "m3".into()];
        for p in 1..=3 {
            for a in Allele::ALL {
                header.push(format!("p{p}_{}", a.symbol()));
            }
        }
        let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
        for r in records {
            let mut row = vec![r.index.to_string()];
            row.extend(r.lineages.iter().map(|m| m.to_string()));
            row.extend(r.counts.iter().flatten().map(|c| c.to_string()));
            csv.row(row);
        }
        files.push(("replicates.csv".into(), csv.into_bytes()));
    }
    Ok(files)
}

struct Comparison {
    csv: Csv,
}

impl Comparison {
    fn add(&mut self, quantity: &str, model: &str, analytic: f64, e: &Estimate) {
        self.csv.row([
            quantity.to_string(),
            model.to_string(),
            float(analytic),
            float(e.value),
            float(e.se),
            float(e.z_score(analytic)),
        ]);
    }
}

/// Analytic values next to oracle estimates for every quantity the pipeline
/// uses: lineage-count probabilities, conditional interval moments,
/// per-model event and joint probabilities at each model's own `M`, and the
/// combined value.
pub fn compare(s: &Setup) -> Result<Files> {
    let mut out = Comparison {
        csv: Csv::new(&["quantity", "model", "analytic", "empirical", "se", "z"]),
    };
    let evals = evaluate_models(&s.sample, &s.demography, &s.mutation, &s.spectrum)?;
    let analytic =
        SpectrumResult::assemble(evals.each_ref().map(|e| e.joint), evals.each_ref().map(|e| e.event), s.thresholds)?;
    let mut pair_estimates: Vec<PairEventEstimate> = Vec::with_capacity(3);
    for eval in &evals {
        let pm = &eval.model;
        let label = pm.index.to_string();
        let demes = pair_deme_sizes(&s.sample, pm.index, s.oracle.sampling)?;
        let probs = deme_lineage_distribution(&s.demography, &demes)?;
        let lin = estimate_lineage_distribution(&s.sample, &s.demography, pm.index, s.replicates, s.seed, &s.oracle)?;
        for m in 1..=pm.sample_size {
            out.add(&format!("P[M={m}]"), &label, probs[m - 1], lin.prob(m));
        }

        let m = pm.divergence_count;
        let exact = &eval.moments;
        let est = estimate_conditional_moments(&s.sample, &s.demography, pm.index, m, s.replicates, s.seed, &s.oracle)
            .map_err(|e| e.in_model(pm.index))?;
        for (i, e) in &est.first {
            out.add(&format!("E_T[{i}]"), &label, exact.first_moment(*i), e);
        }
        for (j, k, e) in &est.second {
            out.add(&format!("E_T[{j}]T[{k}]"), &label, exact.second_moment(*j, *k), e);
        }

        let events = estimate_pair_events(pm, &demes, &s.demography, &s.mutation, s.replicates, s.seed, &s.oracle)?;
        let k = pm.index as usize - 1;
        let stratum = events
            .stratum(m)
            .ok_or_else(|| quadri_core::Error::Argument(format!("model {}: no stratum for M = {m}", pm.index)))?;
        out.add("event", &label, analytic.per_model_event[k], &stratum.event);
        out.add("joint", &label, analytic.per_model_joint[k], &stratum.joint);
        pair_estimates.push(events);
    }
    let pair_estimates: [PairEventEstimate; 3] = pair_estimates.try_into().expect("three models");
    let pipeline = pipeline_estimate(&s.sample, &pair_estimates, s.thresholds)?;
    out.add("combined", "all", analytic.combined, &pipeline.combined);
    Ok(vec![("compare.csv".into(), out.csv.into_bytes())])
}
