use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use kmc_core::diagnostics::{acceptance_rate, mean_norm, min_ess, mmd_poly3, EssReport};
use kmc_core::experiments::abc::{AbcStudy, AbcStudyConfig};
use kmc_core::experiments::acceptance::{summarize, write_rows_csv};
use kmc_core::experiments::banana::write_csv;
use kmc_core::experiments::{
    fit_surrogate, run_abc_study, run_acceptance_benchmark, run_banana_study, run_trajectory_study,
    AcceptanceBenchmarkConfig, BananaStudyConfig, FitConfig, TrajectoryStudyConfig,
};
use kmc_core::io::{read_csv_file, read_points_file, write_json, LiteRecord, ModelFile, SUMMARY_SCHEMA};
use kmc_core::samplers::{run_sampler, ChainResult, FittedModel, IterationFlags, SamplerConfig};
use kmc_core::targets::TargetSpec;
use kmc_core::KmcError;

/// An output directory plus the wall-clock log kept beside the
/// deterministic files.
pub struct OutDir {
    root: PathBuf,
    timings: Vec<(String, f64)>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf(), timings: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        Ok(BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        Ok(write_json(&self.path(name), value)?)
    }

    pub fn time(&mut self, label: impl Into<String>, secs: f64) {
        self.timings.push((label.into(), secs));
    }

    pub fn finish(self) -> Result<()> {
        let text: String = self.timings.iter().map(|(l, s)| format!("{l}\t{s:.3}\n")).collect();
        std::fs::write(self.path("timings.log"), text)?;
        Ok(())
    }
}

/// What gets written to `config.json`: the command, its file inputs and
/// the fully resolved parameter block.
pub fn write_resolved<T: Serialize>(out: &OutDir, command: &str, inputs: Value, config: &T) -> Result<()> {
    out.json("config.json", &json!({ "command": command, "inputs": inputs, "config": config }))
}

fn summary(command: &str, body: Value) -> Value {
    let mut v = json!({ "schema_version": SUMMARY_SCHEMA, "command": command });
    if let (Some(m), Value::Object(b)) = (v.as_object_mut(), body) {
        m.extend(b);
    }
    v
}

pub fn fit(data: &Path, config: &FitConfig, out: &mut OutDir) -> Result<()> {
    let points = read_points_file(data)?;
    let start = Instant::now();
    let outcome = fit_surrogate(&points, config)?;
    out.time("fit", start.elapsed().as_secs_f64());
    out.json("model.json", &outcome.model_file())?;
    out.json("fit_report.json", &outcome.report)?;
    Ok(())
}

/// `sample` parameters: a target by name and a sampler block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub target: TargetSpec,
    pub sampler: SamplerConfig,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { target: TargetSpec::Gaussian { d: 2, variance: 1.0 }, sampler: SamplerConfig::default() }
    }
}

#[derive(Serialize)]
struct FlagCounts {
    proposal_failed: usize,
    diverged: usize,
    refit_failed: usize,
    refactorized: usize,
}

fn flag_counts(chain: &ChainResult) -> FlagCounts {
    let count = |bit| chain.flags.iter().filter(|f| f.has(bit)).count();
    FlagCounts {
        proposal_failed: count(IterationFlags::PROPOSAL_FAILED),
        diverged: count(IterationFlags::DIVERGED),
        refit_failed: count(IterationFlags::REFIT_FAILED),
        refactorized: count(IterationFlags::REFACTORIZED),
    }
}

fn model_file(model: &FittedModel) -> ModelFile {
    match model {
        FittedModel::Lite(m) => ModelFile::Lite(LiteRecord::from_model(m)),
        FittedModel::Finite(m) => ModelFile::Finite(m.to_record()),
    }
}

fn chain_metrics(chain: &ChainResult) -> Result<Value> {
    let kept = chain.kept_samples();
    Ok(json!({
        "iterations": chain.len(),
        "burn_in": chain.burn_in,
        "acceptance": chain.acceptance_rate(),
        "mean_norm": mean_norm(&kept)?,
        "ess": ess_or_null(min_ess(&kept)),
        "adaptations": chain.adapted.iter().filter(|&&a| a).count(),
        "step_scale": chain.step_scale,
        "kernel_params": chain.kernel_params.map(|(s, l)| json!({ "sigma": s, "lambda": l })),
        "flags": flag_counts(chain),
    }))
}

/// Too-short chains get `null` instead of an ESS report.
fn ess_or_null(report: kmc_core::Result<EssReport>) -> Value {
    report.ok().map_or(Value::Null, |r| serde_json::to_value(r).unwrap_or(Value::Null))
}

pub fn sample(config: &SampleConfig, out: &mut OutDir) -> Result<()> {
    let target = config.target.build()?;
    let chain = run_sampler(target.as_ref(), &config.sampler)?;
    out.time("sample", chain.elapsed_secs);
    chain.write_csv(out.file("chain.csv")?)?;
    if let Some(model) = &chain.final_model {
        out.json("model.json", &model_file(model))?;
    }
    let mut body = chain_metrics(&chain)?;
    body["algorithm"] = serde_json::to_value(config.sampler.algorithm)?;
    out.json("summary.json", &summary("sample", body))?;
    Ok(())
}

pub fn trajectories(config: &TrajectoryStudyConfig, out: &mut OutDir) -> Result<()> {
    let start = Instant::now();
    let study = run_trajectory_study(config)?;
    out.time("trajectories", start.elapsed().as_secs_f64());
    study.write_csv(out.file("trajectories.csv")?)?;
    let mut w = csv::Writer::from_writer(out.file("endpoints.csv")?);
    w.write_record(["start", "exact", "surrogate"])?;
    for (i, (e, s)) in study.exact_acceptance.iter().zip(&study.surrogate_acceptance).enumerate() {
        w.write_record([i.to_string(), e.to_string(), s.to_string()])?;
    }
    w.flush()?;
    let body = json!({
        "sigma": study.sigma,
        "starts": study.exact.len(),
        "mean_exact_acceptance": study.mean_exact(),
        "mean_surrogate_acceptance": study.mean_surrogate(),
    });
    out.json("summary.json", &summary("trajectories", body))?;
    Ok(())
}

pub fn acceptance_benchmark(config: &AcceptanceBenchmarkConfig, out: &mut OutDir) -> Result<()> {
    let start = Instant::now();
    let rows = run_acceptance_benchmark(config)?;
    out.time("acceptance-benchmark", start.elapsed().as_secs_f64());
    write_rows_csv(out.file("trials.csv")?, &rows)?;
    let cells = summarize(&rows);
    write_csv(out.file("heatmap.csv")?, &cells)?;
    out.json("summary.json", &summary("acceptance-benchmark", json!({ "cells": cells })))?;
    Ok(())
}

pub fn banana(config: &BananaStudyConfig, out: &mut OutDir) -> Result<()> {
    let start = Instant::now();
    let study = run_banana_study(config)?;
    out.time("banana", start.elapsed().as_secs_f64());
    for (sampler, n, run, secs) in &study.timings {
        let n = n.map_or_else(String::new, |n| format!(" n={n}"));
        out.time(format!("banana {sampler}{n} run={run}"), *secs);
    }
    write_csv(out.file("runs.csv")?, &study.rows)?;
    let rows = study.summary();
    write_csv(out.file("summary.csv")?, &rows)?;
    out.json("summary.json", &summary("banana", json!({ "rows": rows })))?;
    Ok(())
}

/// Equal-width histogram of `θ₁` for both chains on their joint range.
fn write_marginal_csv(study: &AbcStudy, bins: usize, out: &OutDir) -> Result<()> {
    let k: Vec<f64> = study.kmc.kept_samples().column(0).iter().copied().collect();
    let r: Vec<f64> = study.rw.kept_samples().column(0).iter().copied().collect();
    let lo = k.iter().chain(&r).copied().fold(f64::INFINITY, f64::min);
    let hi = k.iter().chain(&r).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let density = |xs: &[f64]| {
        let mut counts = vec![0usize; bins];
        for &x in xs {
            counts[(((x - lo) / width) as usize).min(bins - 1)] += 1;
        }
        counts.into_iter().map(|c| c as f64 / (xs.len() as f64 * width)).collect::<Vec<f64>>()
    };
    let (dk, dr) = (density(&k), density(&r));
    let mut w = csv::Writer::from_writer(out.file("marginal.csv")?);
    w.write_record(["bin_lo", "bin_hi", "kmc_density", "rw_density"])?;
    for b in 0..bins {
        let a = lo + b as f64 * width;
        w.write_record([a, a + width, dk[b], dr[b]].map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn abc(config: &AbcStudyConfig, out: &mut OutDir) -> Result<()> {
    let study = run_abc_study(config)?;
    out.time("abc kmc_lite", study.kmc.elapsed_secs);
    out.time("abc rw", study.rw.elapsed_secs);
    study.kmc.write_csv(out.file("kmc_chain.csv")?)?;
    study.rw.write_csv(out.file("rw_chain.csv")?)?;
    study.write_acf_csv(out.file("acf.csv")?)?;
    study.write_trace_csv(out.file("mmd_trace.csv")?)?;
    write_marginal_csv(&study, 50, out)?;
    study.lognormal.write_csv(out.file("lognormal.csv")?)?;
    let body = json!({
        "kmc": chain_metrics(&study.kmc)?,
        "rw": chain_metrics(&study.rw)?,
        "marginal_contrast": study.contrast,
        "lognormal": {
            "true_mean": study.lognormal.true_mean,
            "synthetic_mean": study.lognormal.synthetic_mean,
            "upward_bias": study.lognormal.synthetic_mean > study.lognormal.true_mean,
        },
    });
    out.json("summary.json", &summary("abc", body))?;
    Ok(())
}

/// Metrics of a chain file. Acceptance comes from an `accepted` column
/// when there is one, otherwise from rows that differ from their
/// predecessor.
pub fn diagnose(chain: &Path, reference: Option<&Path>, burn_in: usize) -> Result<Value> {
    let table = read_csv_file(chain)?;
    let points = table.points()?;
    let t = points.nrows();
    if burn_in >= t {
        bail!(KmcError::invalid(format!("burn-in {burn_in} leaves no rows out of {t}")));
    }
    let flags: Vec<bool> = match table.column("accepted") {
        Some(j) => table.rows.iter().map(|r| r[j] != 0.0).collect(),
        None => (0..t).map(|i| i > 0 && points.row(i) != points.row(i - 1)).collect(),
    };
    let kept = points.rows(burn_in, t - burn_in).into_owned();
    let mmd = match reference {
        Some(path) => {
            if !path.exists() {
                bail!(KmcError::invalid(format!("reference file {} does not exist", path.display())));
            }
            Some(mmd_poly3(&kept, &read_points_file(path)?)?)
        }
        None => None,
    };
    Ok(summary(
        "diagnose",
        json!({
            "rows": t,
            "burn_in": burn_in,
            "acceptance": acceptance_rate(&flags, burn_in)?,
            "ess": ess_or_null(min_ess(&kept)),
            "mean_norm": mean_norm(&kept)?,
            "mmd": mmd,
        }),
    ))
}
