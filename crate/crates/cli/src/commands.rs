//! Subcommand bodies: each computes its results in memory, then writes tables.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use esdfm_core::datagen::records::write_events;
use esdfm_core::methods::MethodName;
use esdfm_core::protocol::{mean_sd, StreamReport};
use esdfm_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::pipeline::{
    load_events, method_spec, prepare, pretrain_model, run_method, seed_context, synthetic_truth, train_estimators,
};

/// Reports of every configured method for one seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub reports: Vec<StreamReport>,
}

impl SeedRun {
    pub fn report(&self, name: MethodName) -> Option<&StreamReport> {
        self.reports.iter().find(|r| r.method == name.as_str())
    }
}

/// All configured methods, every seed, at one disturbance strength.
pub fn run_seeds(config: &ExperimentConfig, disturbance: f64) -> Result<Vec<SeedRun>> {
    config.validate()?;
    config
        .seeds
        .par_iter()
        .map(|&seed| {
            let ctx = seed_context(config, seed, disturbance)?;
            let reports = config
                .methods
                .par_iter()
                .map(|&name| {
                    run_method(
                        config,
                        &ctx.prepared,
                        &ctx.pretrained,
                        Arc::clone(&ctx.estimators),
                        method_spec(config, name),
                        config.elapsed,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SeedRun { seed, reports })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub method: String,
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
    /// Relative to vanilla (0) and oracle (1); empty when either is missing or they coincide.
    pub r_auc: Option<f64>,
    pub r_pr_auc: Option<f64>,
    pub r_nll: Option<f64>,
}

pub fn comparison(runs: &[SeedRun]) -> Vec<ComparisonRow> {
    let mut rows = Vec::new();
    for run in runs {
        let anchors = run.report(MethodName::Vanilla).zip(run.report(MethodName::Oracle));
        for r in &run.reports {
            let rel = anchors.and_then(|(v, o)| r.relative(v, o).ok());
            rows.push(ComparisonRow {
                seed: run.seed,
                method: r.method.clone(),
                auc: r.pooled.auc,
                pr_auc: r.pooled.pr_auc,
                nll: r.pooled.nll,
                r_auc: rel.map(|m| m.r_auc),
                r_pr_auc: rel.map(|m| m.r_pr_auc),
                r_nll: rel.map(|m| m.r_nll),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub n_seeds: usize,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub pr_auc_mean: f64,
    pub pr_auc_sd: f64,
    pub nll_mean: f64,
    pub nll_sd: f64,
}

/// Mean and standard deviation over seeds, per method, in first-seen order.
pub fn summarize(rows: &[ComparisonRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let of = |f: fn(&ComparisonRow) -> f64| -> Vec<f64> { rows.iter().filter(|r| r.method == m).map(f).collect() };
            let auc = mean_sd(&of(|r| r.auc));
            let pr = mean_sd(&of(|r| r.pr_auc));
            let nll = mean_sd(&of(|r| r.nll));
            SummaryRow {
                method: m.to_string(),
                n_seeds: rows.iter().filter(|r| r.method == m).count(),
                auc_mean: auc.0,
                auc_sd: auc.1,
                pr_auc_mean: pr.0,
                pr_auc_sd: pr.1,
                nll_mean: nll.0,
                nll_sd: nll.1,
            }
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn write_table<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_reports(dir: &Path, run: &SeedRun) -> Result<()> {
    let dir = dir.join(format!("seed_{}", run.seed));
    fs::create_dir_all(&dir)?;
    for r in &run.reports {
        r.write_csv(BufWriter::new(File::create(dir.join(format!("{}.csv", r.method)))?))?;
        r.write_jsonl(BufWriter::new(File::create(dir.join(format!("{}.jsonl", r.method)))?))?;
    }
    Ok(())
}

/// `run`: per-seed reports, `comparison.csv` and `summary.csv`.
pub fn cmd_run(config: &ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    let runs = run_seeds(config, config.disturbance)?;
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    for run in &runs {
        write_reports(out, run)?;
    }
    let rows = comparison(&runs);
    write_table(&out.join("comparison.csv"), &rows)?;
    write_table(&out.join("summary.csv"), &summarize(&rows))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Elapsed time, seconds.
    pub c: f64,
    pub seed: u64,
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
    /// Share of streaming conversions with delay `<= c`.
    pub observable_fraction: f64,
}

/// ES-DFM at each elapsed time, with its estimators retrained per value.
pub fn sweep_elapsed(config: &ExperimentConfig, c_values: &[f64]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    if c_values.len() < 2 {
        return Err(Error::config("c_values", "a sweep needs at least two elapsed times"));
    }
    if let Some(c) = c_values.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
        return Err(Error::config("c_values", format!("elapsed times must be finite and >= 0, got {c}")));
    }
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let prepared = prepare(config, seed, config.disturbance)?;
            let pretrained = pretrain_model(config, &prepared)?;
            c_values
                .par_iter()
                .map(|&c| {
                    let est = train_estimators(config, &prepared, &[MethodName::EsDfm], c)?;
                    let spec = method_spec(config, MethodName::EsDfm);
                    let r = run_method(config, &prepared, &pretrained, Arc::new(est), spec, c)?;
                    Ok(SweepRow {
                        c,
                        seed,
                        auc: r.pooled.auc,
                        pr_auc: r.pooled.pr_auc,
                        nll: r.pooled.nll,
                        observable_fraction: prepared.observable_fraction(c),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummaryRow {
    pub c: f64,
    pub observable_fraction: f64,
    pub auc_mean: f64,
    pub pr_auc_mean: f64,
    pub nll_mean: f64,
    pub nll_sd: f64,
}

pub fn summarize_sweep(rows: &[SweepRow], c_values: &[f64]) -> Vec<SweepSummaryRow> {
    c_values
        .iter()
        .map(|&c| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.c == c).collect();
            let of = |f: fn(&SweepRow) -> f64| mean_sd(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
            let nll = of(|r| r.nll);
            SweepSummaryRow {
                c,
                observable_fraction: of(|r| r.observable_fraction).0,
                auc_mean: of(|r| r.auc).0,
                pr_auc_mean: of(|r| r.pr_auc).0,
                nll_mean: nll.0,
                nll_sd: nll.1,
            }
        })
        .collect()
}

/// `sweep-elapsed`: `sweep.csv` (per seed) and `sweep_summary.csv`.
pub fn cmd_sweep_elapsed(config: &ExperimentConfig, c_values: &[f64]) -> Result<Vec<SweepRow>> {
    let rows = sweep_elapsed(config, c_values)?;
    fs::create_dir_all(&config.output_dir)?;
    write_table(&config.output_dir.join("sweep.csv"), &rows)?;
    write_table(&config.output_dir.join("sweep_summary.csv"), &summarize_sweep(&rows, c_values))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub d: f64,
    pub seed: u64,
    pub method: String,
    pub auc: f64,
    pub pr_auc: f64,
    pub nll: f64,
}

/// Configured methods at each disturbance strength, applied to the streaming half.
pub fn robustness(config: &ExperimentConfig, d_values: &[f64]) -> Result<Vec<RobustnessRow>> {
    config.validate()?;
    if let Some(d) = d_values.iter().find(|d| !(0.0..=1.0).contains(*d)) {
        return Err(Error::config("d_values", format!("disturbance must lie in [0, 1], got {d}")));
    }
    let per_d = d_values
        .par_iter()
        .map(|&d| {
            let runs = run_seeds(config, d)?;
            Ok(runs
                .iter()
                .flat_map(|run| {
                    run.reports.iter().map(move |r| RobustnessRow {
                        d,
                        seed: run.seed,
                        method: r.method.clone(),
                        auc: r.pooled.auc,
                        pr_auc: r.pooled.pr_auc,
                        nll: r.pooled.nll,
                    })
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_d.into_iter().flatten().collect())
}

/// `robustness`: `robustness.csv`, one row per (d, seed, method).
pub fn cmd_robustness(config: &ExperimentConfig, d_values: &[f64]) -> Result<Vec<RobustnessRow>> {
    let rows = robustness(config, d_values)?;
    fs::create_dir_all(&config.output_dir)?;
    write_table(&config.output_dir.join("robustness.csv"), &rows)?;
    Ok(rows)
}

/// `gen-data`: one event file per seed, plus the truth as JSON for synthetic data.
pub fn cmd_gen_data(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let truth = synthetic_truth(config)?;
    fs::create_dir_all(&config.output_dir)?;
    for &seed in &config.seeds {
        let events = load_events(config, seed, truth.as_ref())?;
        let path = config.output_dir.join(format!("events_seed_{seed}.tsv"));
        write_events(BufWriter::new(File::create(&path)?), &events)?;
        log::info!("wrote {} events to {}", events.len(), path.display());
    }
    if let Some(truth) = &truth {
        let file = BufWriter::new(File::create(config.output_dir.join("truth.json"))?);
        serde_json::to_writer_pretty(file, truth).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(())
}

/// `pretrain`: the pre-trained CVR model and configured estimators, per seed.
pub fn cmd_pretrain(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    config.seeds.par_iter().try_for_each(|&seed| {
        let prepared = prepare(config, seed, 0.0)?;
        let model = pretrain_model(config, &prepared)?;
        let est = train_estimators(config, &prepared, &config.methods, config.elapsed)?;
        let dir = config.output_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir)?;
        model.save(dir.join("pretrained.ckpt"))?;
        if let Some(m) = &est.dual_head {
            m.save(dir.join("dual_head.ckpt"))?;
        }
        if let Some(m) = &est.fsiw {
            m.save(dir.join("fsiw.ckpt"))?;
        }
        if let Some(m) = &est.dfm {
            m.save(dir.join("dfm.ckpt"))?;
        }
        Ok(())
    })
}
