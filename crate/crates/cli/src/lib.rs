//! Experiment plumbing behind the `sharc` binary: run directories, grids,
//! theta sweeps, memory comparisons and summary tables.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sharc_core::math::{mean, sample_std};
use sharc_core::trainer::output::{is_complete, read_run_result, write_run_outputs};
use sharc_core::{
    run_experiment, AmKind, Budget, ExperimentConfig, RunResult, Scenario, SharcError, Strategy,
};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const THETA_CSV: &str = "theta_sweep.csv";
pub const COMPARE_CSV: &str = "am_comparison.csv";
pub const GRID_MANIFEST: &str = "grid.json";

pub const SUMMARY_HEADER: &str =
    "strategy,buffer,am_kind,mu,scenario,seeds,acc_mean,acc_std,bwt_mean,bwt_std,std_flag";
pub const THETA_HEADER: &str = "theta,mu,seeds,acc_mean,acc_std,bwt_mean,bwt_std,std_flag";
pub const THETA_NOTE: &str =
    "# theta is mu, the fraction of channels dropped: keep_count = max(1, round((1 - theta) * K))";
pub const COMPARE_HEADER: &str =
    "am_kind,scenario,seeds,acc_mean,acc_std,bwt_mean,bwt_std,std_flag";

/// Error raised for invalid configs; the binary maps it to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_error(e: impl std::fmt::Display) -> anyhow::Error {
    ConfigError(e.to_string()).into()
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).map_err(config_error)
}

/// First 12 hex digits of the SHA-256 of the config JSON with the seed zeroed,
/// so every seed of one configuration shares a prefix.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut unseeded = cfg.clone();
    unseeded.seed = 0;
    let json = serde_json::to_string(&unseeded).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
}

pub fn run_dir(out: &Path, cfg: &ExperimentConfig) -> PathBuf {
    out.join(format!("{}-seed{}", config_hash(cfg), cfg.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Ran,
    Skipped,
}

/// Run one config into its directory under `out`. A directory that already
/// holds a complete result is left alone unless `force`. A failed run leaves
/// its partial result in `partial.json` and returns the error.
pub fn execute_run(
    cfg: &ExperimentConfig,
    out: &Path,
    force: bool,
) -> anyhow::Result<(RunStatus, PathBuf)> {
    cfg.validate().map_err(config_error)?;
    let dir = run_dir(out, cfg);
    if !force && is_complete(&dir) {
        return Ok((RunStatus::Skipped, dir));
    }
    match run_experiment(cfg) {
        Ok(result) => {
            write_run_outputs(&dir, &result)?;
            let _ = fs::remove_file(dir.join("partial.json"));
            Ok((RunStatus::Ran, dir))
        }
        Err(failure) => {
            fs::create_dir_all(&dir)?;
            fs::write(
                dir.join("partial.json"),
                serde_json::to_string_pretty(&failure.partial)?,
            )?;
            Err(anyhow::Error::new(failure).context(format!("run in {}", dir.display())))
        }
    }
}

pub fn with_seeds(base: &ExperimentConfig, seeds: &[u64]) -> Vec<ExperimentConfig> {
    seeds
        .iter()
        .map(|&seed| ExperimentConfig {
            seed,
            ..base.clone()
        })
        .collect()
}

/// Base config plus axes; an omitted axis takes the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub base: ExperimentConfig,
    pub strategies: Option<Vec<Strategy>>,
    pub budgets: Option<Vec<Budget>>,
    pub mus: Option<Vec<f64>>,
    pub am_kinds: Option<Vec<AmKind>>,
    pub scenarios: Option<Vec<Scenario>>,
    pub seeds: Option<Vec<u64>>,
}

impl GridSpec {
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| config_error(format!("{}: {}", e.path(), e.inner())))?;
        spec.base.validate().map_err(config_error)?;
        Ok(spec)
    }

    /// Cartesian product in a fixed order: strategy, budget, mu, kind,
    /// scenario, seed.
    pub fn expand(&self) -> anyhow::Result<Vec<ExperimentConfig>> {
        fn axis<T: Clone>(name: &str, given: &Option<Vec<T>>, base: T) -> anyhow::Result<Vec<T>> {
            match given {
                None => Ok(vec![base]),
                Some(v) if v.is_empty() => {
                    Err(config_error(format!("{name}: axis must not be empty")))
                }
                Some(v) => Ok(v.clone()),
            }
        }
        let b = &self.base;
        let strategies = axis("strategies", &self.strategies, b.strategy)?;
        let budgets = axis("budgets", &self.budgets, b.budget)?;
        let mus = axis("mus", &self.mus, b.mu)?;
        let kinds = axis("am_kinds", &self.am_kinds, b.am_kind)?;
        let scenarios = axis("scenarios", &self.scenarios, b.scenario)?;
        let seeds = axis("seeds", &self.seeds, b.seed)?;
        let mut out = Vec::new();
        for &strategy in &strategies {
            for &budget in &budgets {
                for &mu in &mus {
                    for &am_kind in &kinds {
                        for &scenario in &scenarios {
                            for &seed in &seeds {
                                let cfg = ExperimentConfig {
                                    strategy,
                                    budget,
                                    mu,
                                    am_kind,
                                    scenario,
                                    seed,
                                    ..b.clone()
                                };
                                cfg.validate().map_err(config_error)?;
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridManifest {
    pub runs: Vec<String>,
}

pub struct GridReport {
    pub ran: usize,
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Run every config in parallel. Writes a manifest of the expected run
/// directories so the summarizer can tell a complete grid from a partial one.
pub fn run_grid(
    configs: &[ExperimentConfig],
    out: &Path,
    force: bool,
) -> anyhow::Result<GridReport> {
    fs::create_dir_all(out)?;
    let manifest = GridManifest {
        runs: configs
            .iter()
            .map(|c| run_dir(Path::new(""), c).to_string_lossy().into_owned())
            .collect(),
    };
    fs::write(
        out.join(GRID_MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    let outcomes: Vec<anyhow::Result<RunStatus>> = configs
        .par_iter()
        .map(|cfg| execute_run(cfg, out, force).map(|(s, _)| s))
        .collect();
    let mut report = GridReport {
        ran: 0,
        skipped: 0,
        failures: Vec::new(),
    };
    for o in outcomes {
        match o {
            Ok(RunStatus::Ran) => report.ran += 1,
            Ok(RunStatus::Skipped) => report.skipped += 1,
            Err(e) => report.failures.push(format!("{e:#}")),
        }
    }
    Ok(report)
}

/// Mean and spread of one metric over seeds; spread is 0 and flagged with
/// fewer than two seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Stat {
    Stat {
        mean: mean(values),
        std: if values.len() >= 2 {
            sample_std(values)
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub buffer: String,
    pub am_kind: AmKind,
    pub mu: f64,
    pub scenario: Scenario,
    pub seeds: usize,
    pub acc: Stat,
    pub bwt: Stat,
}

impl SummaryRow {
    pub fn std_flagged(&self) -> bool {
        self.seeds < 2
    }
}

pub fn budget_label(b: Budget) -> String {
    format!("{}:{}", b.unit(), b.total())
}

/// Group results by everything except the seed.
pub fn summarize_results(results: &[RunResult]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Strategy, String, AmKind, u64, Scenario), Vec<&RunResult>> =
        BTreeMap::new();
    for r in results {
        let c = &r.config;
        groups
            .entry((
                c.strategy,
                budget_label(c.budget),
                c.am_kind,
                c.mu.to_bits(),
                c.scenario,
            ))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((strategy, buffer, am_kind, mu, scenario), rs)| {
            let accs: Vec<f64> = rs.iter().map(|r| r.acc).collect();
            let bwts: Vec<f64> = rs.iter().map(|r| r.bwt).collect();
            SummaryRow {
                strategy,
                buffer,
                am_kind,
                mu: f64::from_bits(mu),
                scenario,
                seeds: rs.len(),
                acc: stat(&accs),
                bwt: stat(&bwts),
            }
        })
        .collect()
}

fn stat_fields(seeds: usize, acc: Stat, bwt: Stat) -> Vec<String> {
    vec![
        seeds.to_string(),
        acc.mean.to_string(),
        acc.std.to_string(),
        bwt.mean.to_string(),
        bwt.std.to_string(),
        u8::from(seeds < 2).to_string(),
    ]
}

fn csv_text(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(&row)?;
    }
    let body = String::from_utf8(w.into_inner()?)?;
    Ok(format!("{header}\n{body}"))
}

pub fn summary_csv(rows: &[SummaryRow]) -> anyhow::Result<String> {
    csv_text(
        SUMMARY_HEADER,
        rows.iter().map(|r| {
            let mut rec = vec![
                r.strategy.to_string(),
                r.buffer.clone(),
                r.am_kind.to_string(),
                r.mu.to_string(),
                r.scenario.to_string(),
            ];
            rec.extend(stat_fields(r.seeds, r.acc, r.bwt));
            rec
        }),
    )
}

/// Collect the grid under `out` into `summary.csv`. Refuses when runs are
/// missing unless `allow_partial`.
pub fn summarize_grid(out: &Path, allow_partial: bool) -> anyhow::Result<(Vec<SummaryRow>, usize)> {
    let manifest: GridManifest = serde_json::from_str(
        &fs::read_to_string(out.join(GRID_MANIFEST))
            .with_context(|| format!("no grid manifest in {}", out.display()))?,
    )?;
    let mut results = Vec::new();
    let mut missing = 0;
    for rel in &manifest.runs {
        let dir = out.join(rel);
        if is_complete(&dir) {
            results.push(read_run_result(&dir)?);
        } else {
            missing += 1;
        }
    }
    if missing > 0 && !allow_partial {
        bail!(
            "grid incomplete: {missing} of {} runs missing (pass --allow-partial to summarize anyway)",
            manifest.runs.len()
        );
    }
    let rows = summarize_results(&results);
    fs::write(out.join(SUMMARY_CSV), summary_csv(&rows)?)?;
    Ok((rows, missing))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaRow {
    pub theta: f64,
    pub seeds: usize,
    pub acc: Stat,
    pub bwt: Stat,
}

pub fn default_thetas() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// One row per theta, with theta applied as `mu`. Theta must lie in (0, 1];
/// theta = 1 runs at the largest mu below 1 so a single channel survives.
pub fn sweep_theta(
    base: &ExperimentConfig,
    thetas: &[f64],
    seeds: &[u64],
    out: &Path,
    force: bool,
) -> anyhow::Result<Vec<ThetaRow>> {
    if let Some(bad) = thetas.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(config_error(format!("theta {bad} outside (0, 1]")));
    }
    let mu_for = |theta: f64| {
        if theta >= 1.0 {
            1.0 - f64::EPSILON
        } else {
            theta
        }
    };
    let configs: Vec<ExperimentConfig> = thetas
        .iter()
        .flat_map(|&theta| {
            with_seeds(
                &ExperimentConfig {
                    mu: mu_for(theta),
                    ..base.clone()
                },
                seeds,
            )
        })
        .collect();
    let results = run_all(&configs, out, force)?;
    let rows: Vec<ThetaRow> = thetas
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let rs = &results[i * seeds.len()..(i + 1) * seeds.len()];
            ThetaRow {
                theta,
                seeds: rs.len(),
                acc: stat(&rs.iter().map(|r| r.acc).collect::<Vec<_>>()),
                bwt: stat(&rs.iter().map(|r| r.bwt).collect::<Vec<_>>()),
            }
        })
        .collect();
    let text = csv_text(
        THETA_HEADER,
        rows.iter().map(|r| {
            let mut rec = vec![r.theta.to_string(), mu_for(r.theta).to_string()];
            rec.extend(stat_fields(r.seeds, r.acc, r.bwt));
            rec
        }),
    )?;
    fs::write(out.join(THETA_CSV), format!("{THETA_NOTE}\n{text}"))?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub am_kind: AmKind,
    pub scenario: Scenario,
    pub seeds: usize,
    pub acc: Stat,
    pub bwt: Stat,
}

/// Drop repeated kinds, keeping first occurrences; returns the warnings.
pub fn dedupe_kinds(kinds: &[AmKind]) -> (Vec<AmKind>, Vec<String>) {
    let mut seen = Vec::new();
    let mut warnings = Vec::new();
    for &k in kinds {
        if seen.contains(&k) {
            warnings.push(format!("warning: duplicate memory kind {k} ignored"));
        } else {
            seen.push(k);
        }
    }
    (seen, warnings)
}

/// Same streams and seeds for every memory kind and scenario.
pub fn compare_am(
    base: &ExperimentConfig,
    kinds: &[AmKind],
    scenarios: &[Scenario],
    seeds: &[u64],
    out: &Path,
    force: bool,
) -> anyhow::Result<(Vec<CompareRow>, Vec<String>)> {
    let (kinds, warnings) = dedupe_kinds(kinds);
    let scenarios = if scenarios.is_empty() {
        vec![base.scenario]
    } else {
        scenarios.to_vec()
    };
    let mut cells = Vec::new();
    for &scenario in &scenarios {
        for &am_kind in &kinds {
            cells.push((am_kind, scenario));
        }
    }
    let configs: Vec<ExperimentConfig> = cells
        .iter()
        .flat_map(|&(am_kind, scenario)| {
            with_seeds(
                &ExperimentConfig {
                    am_kind,
                    scenario,
                    ..base.clone()
                },
                seeds,
            )
        })
        .collect();
    let results = run_all(&configs, out, force)?;
    let rows: Vec<CompareRow> = cells
        .iter()
        .enumerate()
        .map(|(i, &(am_kind, scenario))| {
            let rs = &results[i * seeds.len()..(i + 1) * seeds.len()];
            CompareRow {
                am_kind,
                scenario,
                seeds: rs.len(),
                acc: stat(&rs.iter().map(|r| r.acc).collect::<Vec<_>>()),
                bwt: stat(&rs.iter().map(|r| r.bwt).collect::<Vec<_>>()),
            }
        })
        .collect();
    let text = csv_text(
        COMPARE_HEADER,
        rows.iter().map(|r| {
            let mut rec = vec![r.am_kind.to_string(), r.scenario.to_string()];
            rec.extend(stat_fields(r.seeds, r.acc, r.bwt));
            rec
        }),
    )?;
    fs::write(out.join(COMPARE_CSV), text)?;
    Ok((rows, warnings))
}

/// Run (or reuse) every config in parallel and load the results in order.
fn run_all(
    configs: &[ExperimentConfig],
    out: &Path,
    force: bool,
) -> anyhow::Result<Vec<RunResult>> {
    if configs.is_empty() {
        return Err(config_error("nothing to run: empty seed or axis list"));
    }
    fs::create_dir_all(out)?;
    configs
        .par_iter()
        .map(|cfg| {
            let (_, dir) = execute_run(cfg, out, force)?;
            Ok(read_run_result(&dir)?)
        })
        .collect()
}

/// Whether an error should map to the schema-error exit code.
pub fn is_config_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<ConfigError>().is_some()
            || matches!(c.downcast_ref::<SharcError>(), Some(SharcError::Config(_)))
    })
}
