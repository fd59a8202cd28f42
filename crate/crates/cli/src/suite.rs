//! Grid execution: run the configured suites over
//! `alpha × epsilon × d × seed` cells, write per-cell fragments, a merged
//! CSV per suite, seed-aggregated bands, a JSON summary, and a SCHEMA file.
//!
//! Reruns with the same config are byte-identical: cells are generated in
//! sorted grid order, every cell derives its own substreams from
//! `(seed, cell indices)`, parallel results are collected in cell order, and
//! no timestamps are written.

use misspec_core::bounds::{self, BoundInputs, BoundReport};
use misspec_core::channel::ChannelSpec;
use misspec_core::config::ConfigDoc;
use misspec_core::diagnostics::{diagnostic_d1, diagnostic_d2_shift, collect_transcript};
use misspec_core::env::{EnvironmentSpec, PolicySpec, WorldSign};
use misspec_core::error::{Error, Result};
use misspec_core::fit::{fit_preference_score, FitOptions};
use misspec_core::protocols::{
    majority_batch, simulate_minimax_test, FlaggerSpec, QueryPolicy, DEFAULT_DRAW_CAP,
};
use misspec_core::rng::{hash64, RngStream};
use misspec_core::stats::percentile_sorted;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SuiteKind {
    Bounds,
    Minimax,
    Route,
    D1,
    D2,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::Bounds => "bounds",
            SuiteKind::Minimax => "minimax",
            SuiteKind::Route => "route",
            SuiteKind::D1 => "d1",
            SuiteKind::D2 => "d2",
        }
    }

    fn from_name(name: &str) -> Result<SuiteKind> {
        Ok(match name {
            "bounds" => SuiteKind::Bounds,
            "minimax" => SuiteKind::Minimax,
            "route" => SuiteKind::Route,
            "d1" => SuiteKind::D1,
            "d2" => SuiteKind::D2,
            other => return Err(Error::invalid(format!("unknown suite `{other}`"))),
        })
    }

    /// Key columns beyond (alpha, epsilon, d, seed) and the value columns.
    fn schema(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            SuiteKind::Bounds => (
                &["n", "eta"],
                &["gamma", "kappa", "kl_budget", "lower_gap", "Q_majority", "Q_noisy", "sprt_hits"],
            ),
            SuiteKind::Minimax => (
                &["n"],
                &["trials", "error", "error_se", "mean_kl", "bh_floor"],
            ),
            SuiteKind::Route => (
                &["eta"],
                &["gamma", "T", "trials", "mean_queries", "se_queries", "error", "q_overlay", "q_expected"],
            ),
            SuiteKind::D1 => (
                &["lambda"],
                &["true_value", "true_se", "proxy_value", "proxy_se", "hard_mass", "true_gap", "proxy_gap"],
            ),
            SuiteKind::D2 => (
                &["shift"],
                &["value", "value_se", "decomposition", "decomposition_se", "hard_mass", "slope"],
            ),
        }
    }
}

const ALL_SUITES: [SuiteKind; 5] = [
    SuiteKind::Bounds,
    SuiteKind::Minimax,
    SuiteKind::Route,
    SuiteKind::D1,
    SuiteKind::D2,
];

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub alpha_grid: Vec<f64>,
    pub epsilon_grid: Vec<f64>,
    pub d_grid: Vec<u64>,
    pub n_grid: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    pub shift_grid: Vec<f64>,
    /// Gamma-to-target ratios for the routing suite.
    pub eta_ratio_grid: Vec<f64>,
    pub trials: u64,
    pub route_trials: u64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub suites: Vec<SuiteKind>,
    /// Norm of the hard-component center (spread over all coordinates).
    pub center_norm: f64,
    /// Seed of the shared orthonormal direction pair.
    pub direction_seed: u64,
    /// Raw config text, echoed into the summary.
    pub echo: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha_grid: vec![0.01, 0.05, 0.1],
            epsilon_grid: vec![0.05, 0.1],
            d_grid: vec![10, 50],
            n_grid: vec![100, 400, 1600],
            lambda_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            shift_grid: vec![0.0, 0.5, 1.0],
            eta_ratio_grid: vec![2.0, 5.0, 10.0],
            trials: 200,
            route_trials: 60,
            seeds: (0..10).collect(),
            output_dir: PathBuf::from("out"),
            suites: ALL_SUITES.to_vec(),
            center_norm: 2.0,
            direction_seed: 1,
            echo: String::from("(defaults)"),
        }
    }
}

impl ExperimentConfig {
    /// Read the `[suite]` section of a config file; absent keys keep their
    /// defaults. `--out` / MISSPEC_LAB_OUT override the configured
    /// output_dir.
    pub fn load(path: Option<&Path>, out_override: &Option<PathBuf>) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            let doc = ConfigDoc::parse(&text)?;
            config.echo = text;
            let s = "suite";
            if let Some(v) = doc.get_f64_list(s, "alpha_grid")? {
                config.alpha_grid = v;
            }
            if let Some(v) = doc.get_f64_list(s, "epsilon_grid")? {
                config.epsilon_grid = v;
            }
            if let Some(v) = doc.get_u64_list(s, "d_grid")? {
                config.d_grid = v;
            }
            if let Some(v) = doc.get_u64_list(s, "n_grid")? {
                config.n_grid = v;
            }
            if let Some(v) = doc.get_f64_list(s, "lambda_grid")? {
                config.lambda_grid = v;
            }
            if let Some(v) = doc.get_f64_list(s, "shift_grid")? {
                config.shift_grid = v;
            }
            if let Some(v) = doc.get_f64_list(s, "eta_ratio_grid")? {
                config.eta_ratio_grid = v;
            }
            if let Some(v) = doc.get_u64(s, "trials")? {
                config.trials = v;
            }
            if let Some(v) = doc.get_u64(s, "route_trials")? {
                config.route_trials = v;
            }
            if let Some(v) = doc.get_u64_list(s, "seeds")? {
                config.seeds = v;
            }
            if let Some(v) = doc.get(s, "output_dir") {
                config.output_dir = PathBuf::from(v);
            }
            if let Some(v) = doc.get_str_list(s, "suites") {
                config.suites = v
                    .iter()
                    .map(|name| SuiteKind::from_name(name))
                    .collect::<Result<_>>()?;
            }
            if let Some(v) = doc.get_f64(s, "center_norm")? {
                config.center_norm = v;
            }
            if let Some(v) = doc.get_u64(s, "direction_seed")? {
                config.direction_seed = v;
            }
        }
        if let Some(dir) = out_override {
            config.output_dir = dir.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("alpha_grid", self.alpha_grid.len()),
            ("epsilon_grid", self.epsilon_grid.len()),
            ("d_grid", self.d_grid.len()),
            ("n_grid", self.n_grid.len()),
            ("lambda_grid", self.lambda_grid.len()),
            ("shift_grid", self.shift_grid.len()),
            ("eta_ratio_grid", self.eta_ratio_grid.len()),
            ("seeds", self.seeds.len()),
        ] {
            if len == 0 {
                return Err(Error::parse("[suite]", format!("{name} must be nonempty")));
            }
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::parse("[suite]", "seeds must be distinct"));
        }
        if self.trials == 0 || self.route_trials == 0 {
            return Err(Error::parse("[suite]", "trials must be >= 1"));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> u64 {
        (self.alpha_grid.len() * self.epsilon_grid.len() * self.d_grid.len() * self.seeds.len())
            as u64
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    alpha_idx: usize,
    epsilon_idx: usize,
    d_idx: usize,
    seed: u64,
}

impl Cell {
    fn key(&self, config: &ExperimentConfig) -> String {
        format!(
            "a{}_e{}_d{}_s{}",
            config.alpha_grid[self.alpha_idx],
            config.epsilon_grid[self.epsilon_idx],
            config.d_grid[self.d_idx],
            self.seed
        )
    }
}

#[derive(Debug, Default)]
struct CellOutput {
    /// Numeric rows per suite, in schema order (without the cell prefix).
    tables: BTreeMap<SuiteKind, Vec<Vec<f64>>>,
    failures: Vec<(SuiteKind, String)>,
}

fn cell_env(config: &ExperimentConfig, cell: &Cell) -> Result<EnvironmentSpec> {
    let d = config.d_grid[cell.d_idx] as usize;
    let alpha = config.alpha_grid[cell.alpha_idx];
    let coord = config.center_norm / (d as f64).sqrt();
    let (theta, upsilon) = EnvironmentSpec::auto_orthonormal(d, config.direction_seed)?;
    EnvironmentSpec::new(alpha, vec![coord; d], theta, upsilon)
}

fn cell_stream(cell: &Cell, suite: SuiteKind) -> RngStream {
    let tag = suite as u64 + 1;
    RngStream::seed(hash64(
        cell.seed,
        &[cell.alpha_idx as u64, cell.epsilon_idx as u64, cell.d_idx as u64, tag],
    ))
}

fn run_cell(config: &ExperimentConfig, cell: &Cell) -> CellOutput {
    let mut out = CellOutput::default();
    let alpha = config.alpha_grid[cell.alpha_idx];
    let epsilon = config.epsilon_grid[cell.epsilon_idx];
    let gamma = alpha; // synthetic identity

    for &suite in &config.suites {
        let result: Result<Vec<Vec<f64>>> = (|| {
            let env = cell_env(config, cell)?;
            let ch = ChannelSpec::constant(epsilon)?;
            let mut rng = cell_stream(cell, suite);
            match suite {
                SuiteKind::Bounds => {
                    let mut rows = Vec::new();
                    for &n in &config.n_grid {
                        for &ratio in &config.eta_ratio_grid {
                            let eta = gamma / ratio;
                            let report = BoundReport::compute(BoundInputs {
                                n,
                                alpha,
                                epsilon,
                                gamma,
                                eta,
                                tau: 1.0,
                                phi: 0.0,
                                delta: 0.05,
                            })?;
                            rows.push(vec![
                                n as f64,
                                eta,
                                gamma,
                                report.kappa,
                                report.kl_budget,
                                report.lower_gap,
                                report.query_budget,
                                report.q_noisy,
                                report.sprt_hits,
                            ]);
                        }
                    }
                    Ok(rows)
                }
                SuiteKind::Minimax => {
                    let mut rows = Vec::new();
                    for &n in &config.n_grid {
                        let report = simulate_minimax_test(
                            &env,
                            &ch,
                            n,
                            &QueryPolicy::Always,
                            config.trials,
                            &mut rng,
                        )?;
                        let floor = bounds::bh_bayes_error(
                            n as f64 * alpha * bounds::kappa(epsilon)?,
                        )?;
                        rows.push(vec![
                            n as f64,
                            report.trials as f64,
                            report.error.mean,
                            report.error.se,
                            report.mean_kl,
                            floor,
                        ]);
                    }
                    Ok(rows)
                }
                SuiteKind::Route => {
                    let mut rows = Vec::new();
                    for &ratio in &config.eta_ratio_grid {
                        let eta = gamma / ratio;
                        let (t_real, q_overlay) =
                            bounds::majority_query_budget(alpha, epsilon, gamma, eta)?;
                        let t_kept = t_real.ceil().max(1.0) as u64;
                        let report = majority_batch(
                            &env,
                            None,
                            &ch,
                            &FlaggerSpec::Oracle,
                            t_kept,
                            DEFAULT_DRAW_CAP,
                            config.route_trials,
                            &mut rng,
                        )?;
                        rows.push(vec![
                            eta,
                            gamma,
                            t_kept as f64,
                            report.trials as f64,
                            report.draws.mean,
                            report.draws.se,
                            report.error.mean,
                            q_overlay,
                            t_kept as f64 / alpha,
                        ]);
                    }
                    Ok(rows)
                }
                SuiteKind::D1 => {
                    let n = *config.n_grid.iter().max().expect("n_grid nonempty");
                    let w = WorldSign::Minus;
                    let transcript =
                        collect_transcript(&env, w, &ch, n, &QueryPolicy::Always, &mut rng)?;
                    let score = fit_preference_score(&env, w, &transcript, FitOptions::default())?;
                    let curve = diagnostic_d1(
                        &env,
                        w,
                        &score,
                        &config.lambda_grid,
                        config.trials,
                        &mut rng,
                    )?;
                    Ok((0..curve.len())
                        .map(|i| {
                            vec![
                                curve.grid[i],
                                curve.true_value[i].mean,
                                curve.true_value[i].se,
                                curve.proxy_value[i].mean,
                                curve.proxy_value[i].se,
                                curve.hard_mass[i],
                                curve.true_gap(i),
                                curve.proxy_gap(i),
                            ]
                        })
                        .collect())
                }
                SuiteKind::D2 => {
                    let report = diagnostic_d2_shift(
                        &env,
                        WorldSign::Plus,
                        &PolicySpec::Optimal(WorldSign::Minus),
                        &config.shift_grid,
                        config.trials,
                        &mut rng,
                    )?;
                    let curve = &report.curve;
                    Ok((0..curve.len())
                        .map(|i| {
                            vec![
                                curve.grid[i],
                                curve.true_value[i].mean,
                                curve.true_value[i].se,
                                curve.proxy_value[i].mean,
                                curve.proxy_value[i].se,
                                curve.hard_mass[i],
                                report.slope,
                            ]
                        })
                        .collect())
                }
            }
        })();
        match result {
            Ok(rows) => {
                out.tables.insert(suite, rows);
            }
            Err(err) => out.failures.push((suite, err.to_string())),
        }
    }
    out
}

fn format_row(prefix: &[f64], row: &[f64]) -> String {
    let mut line = String::new();
    for (i, v) in prefix.iter().chain(row).enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{v}");
    }
    line
}

fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn suite_header(suite: SuiteKind) -> String {
    let (keys, values) = suite.schema();
    let mut header = String::from("alpha,epsilon,d,seed");
    for k in keys.iter().chain(values) {
        header.push(',');
        header.push_str(k);
    }
    header
}

/// Execute the whole grid and write all result files.
pub fn run_suite(config: &ExperimentConfig) -> Result<()> {
    let mut cells = Vec::new();
    for alpha_idx in 0..config.alpha_grid.len() {
        for epsilon_idx in 0..config.epsilon_grid.len() {
            for d_idx in 0..config.d_grid.len() {
                for &seed in &config.seeds {
                    cells.push(Cell {
                        alpha_idx,
                        epsilon_idx,
                        d_idx,
                        seed,
                    });
                }
            }
        }
    }

    let outputs: Vec<CellOutput> = cells.par_iter().map(|c| run_cell(config, c)).collect();

    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir)?;

    if !config.suites.is_empty() {
        let cells_dir = out_dir.join("cells");
        std::fs::create_dir_all(&cells_dir)?;

        // per-cell fragments, written atomically
        for (cell, output) in cells.iter().zip(&outputs) {
            let prefix = vec![
                config.alpha_grid[cell.alpha_idx],
                config.epsilon_grid[cell.epsilon_idx],
                config.d_grid[cell.d_idx] as f64,
                cell.seed as f64,
            ];
            for (&suite, rows) in &output.tables {
                let mut text = suite_header(suite);
                text.push('\n');
                for row in rows {
                    text.push_str(&format_row(&prefix, row));
                    text.push('\n');
                }
                let path = cells_dir.join(format!("{}_{}.csv", cell.key(config), suite.name()));
                atomic_write(&path, &text)?;
            }
        }
    }

    // merged per-suite files (cells are already in sorted grid order)
    let mut row_counts: BTreeMap<&'static str, u64> = BTreeMap::new();
    for &suite in &config.suites {
        let mut text = suite_header(suite);
        text.push('\n');
        let mut count = 0u64;
        let mut merged: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for (cell, output) in cells.iter().zip(&outputs) {
            if let Some(rows) = output.tables.get(&suite) {
                let prefix = vec![
                    config.alpha_grid[cell.alpha_idx],
                    config.epsilon_grid[cell.epsilon_idx],
                    config.d_grid[cell.d_idx] as f64,
                    cell.seed as f64,
                ];
                for row in rows {
                    text.push_str(&format_row(&prefix, row));
                    text.push('\n');
                    count += 1;
                    merged.push((prefix.clone(), row.clone()));
                }
            }
        }
        atomic_write(&out_dir.join(format!("{}.csv", suite.name())), &text)?;
        row_counts.insert(suite.name(), count);

        write_aggregate(out_dir, suite, &merged)?;
    }

    // summary: stable key order (serde_json maps sort alphabetically)
    let mut failures = Vec::new();
    for (cell, output) in cells.iter().zip(&outputs) {
        for (suite, message) in &output.failures {
            failures.push(serde_json::json!({
                "cell": cell.key(config),
                "suite": suite.name(),
                "error": message,
            }));
        }
    }
    let summary = serde_json::json!({
        "version": crate::VERSION_STRING,
        "cells": config.cell_count(),
        "suites": config.suites.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "rows": row_counts,
        "failures": failures,
        "config": config.echo,
    });
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;

    std::fs::write(out_dir.join("SCHEMA.md"), schema_doc(config))?;
    Ok(())
}

/// Seed-aggregated bands: group rows by every key except `seed`, emit
/// median and the 5th/95th percentiles of each value column.
fn write_aggregate(
    out_dir: &Path,
    suite: SuiteKind,
    merged: &[(Vec<f64>, Vec<f64>)],
) -> Result<()> {
    let (keys, values) = suite.schema();
    let n_keys = keys.len();

    // group key: (alpha, epsilon, d) + suite key columns, as bit patterns so
    // the map ordering is total
    let mut groups: BTreeMap<Vec<u64>, Vec<&Vec<f64>>> = BTreeMap::new();
    for (prefix, row) in merged {
        let mut key: Vec<u64> = Vec::with_capacity(3 + n_keys);
        key.extend(prefix[..3].iter().map(|v| v.to_bits()));
        key.extend(row[..n_keys].iter().map(|v| v.to_bits()));
        groups.entry(key).or_default().push(row);
    }

    let mut header = String::from("alpha,epsilon,d");
    for k in keys {
        header.push(',');
        header.push_str(k);
    }
    for v in values {
        let _ = write!(header, ",{v}_p05,{v}_median,{v}_p95");
    }
    header.push('\n');

    let mut text = header;
    for (key, rows) in &groups {
        let mut line = String::new();
        for (i, bits) in key.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{}", f64::from_bits(*bits));
        }
        for v_idx in 0..values.len() {
            let mut samples: Vec<f64> = rows.iter().map(|r| r[n_keys + v_idx]).collect();
            samples.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in results"));
            let _ = write!(
                line,
                ",{},{},{}",
                percentile_sorted(&samples, 0.05),
                percentile_sorted(&samples, 0.5),
                percentile_sorted(&samples, 0.95)
            );
        }
        line.push('\n');
        text.push_str(&line);
    }
    atomic_write(&out_dir.join(format!("{}_agg.csv", suite.name())), &text)?;
    Ok(())
}

fn schema_doc(config: &ExperimentConfig) -> String {
    let mut doc = String::from(
        "# Result file schema\n\n\
         All CSVs begin with a header row. Every data row carries the full\n\
         parameter tuple `(alpha, epsilon, d, seed)` of its cell. Seed\n\
         substreams derive from splitmix64 over the packed tuple\n\
         `(seed, alpha index, epsilon index, d index, suite tag)`, so reruns\n\
         and different `--jobs` settings are byte-identical.\n\n\
         The environment of a cell uses `hard_center = c·(1,...,1)` with\n\
         `c = center_norm/sqrt(d)` and a shared seeded orthonormal direction\n\
         pair; the separation parameter equals the hard mass\n\
         (`gamma = alpha`).\n\n",
    );
    for &suite in &config.suites {
        let _ = write!(doc, "## {}.csv\n\nColumns: `{}`\n\n", suite.name(), suite_header(suite));
        let (keys, values) = suite.schema();
        let _ = write!(
            doc,
            "## {}_agg.csv\n\nGrouped over seeds by `alpha,epsilon,d{}{}`; for each value\n\
             column `v` of {}.csv the file carries `v_p05,v_median,v_p95`\n\
             (percentiles by linear interpolation between closest ranks).\n\
             Value columns: `{}`.\n\n",
            suite.name(),
            if keys.is_empty() { "" } else { "," },
            keys.join(","),
            suite.name(),
            values.join(",")
        );
    }
    doc.push_str(
        "## summary.json\n\nVersion string, planned cell count, selected suites, per-suite row\n\
         counts, per-cell failures (the suite keeps running when a cell\n\
         fails), and an echo of the config file.\n",
    );
    doc
}
