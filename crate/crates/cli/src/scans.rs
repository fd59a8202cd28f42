//! Measure scans: tilting curves and shaped-score drift curves over a
//! lambda grid.

use crate::deliver;
use clap::Args;
use misspec_core::error::{Error, Result};
use misspec_core::maps::{drift_limit_report, shaped_score, ShapedScoreSpec};
use misspec_core::measure::DiscreteMeasure;
use misspec_core::tilting::{hard_mass_curve, kl_tilt, tilt_state};
use std::path::{Path, PathBuf};

/// Parse a grid spec: either a comma list `0,0.5,1` or `lin:<a>:<b>:<count>`.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    if let Some(rest) = spec.strip_prefix("lin:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::invalid(format!(
                "expected lin:<start>:<end>:<count>, found `{spec}`"
            )));
        }
        let a: f64 = parts[0].parse().map_err(|e| Error::invalid(format!("bad start: {e}")))?;
        let b: f64 = parts[1].parse().map_err(|e| Error::invalid(format!("bad end: {e}")))?;
        let count: usize = parts[2].parse().map_err(|e| Error::invalid(format!("bad count: {e}")))?;
        if count < 2 {
            return Err(Error::invalid("grid needs at least two points"));
        }
        let step = (b - a) / (count - 1) as f64;
        return Ok((0..count).map(|i| a + step * i as f64).collect());
    }
    spec.split(',')
        .map(|item| {
            item.trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad grid value `{item}`: {e}")))
        })
        .collect()
}

#[derive(Args)]
pub struct TiltScanArgs {
    /// Measure CSV (weight column plus named attributes).
    #[arg(long)]
    pub measure: PathBuf,
    #[arg(long, default_value = "s")]
    pub score_attr: String,
    #[arg(long, default_value = "H")]
    pub hard_attr: String,
    #[arg(long, default_value = "lin:0:2:21")]
    pub lambda_grid: String,
}

pub fn run_tilt_scan(args: &TiltScanArgs, out_dir: &Option<PathBuf>) -> Result<()> {
    let mu = DiscreteMeasure::load_csv(&args.measure)?;
    let grid = parse_grid(&args.lambda_grid)?;
    let curve = hard_mass_curve(&mu, &args.score_attr, &args.hard_attr, &grid)?;
    let mut rows = Vec::with_capacity(grid.len());
    for point in curve {
        let state = tilt_state(&mu, &args.score_attr, point.lambda)?;
        let kl = kl_tilt(&mu, &args.score_attr, point.lambda)?;
        rows.push(format!(
            "{},{},{},{},{},{}",
            point.lambda, state.log_z, state.mean_s, point.rho, point.drho, kl.forward
        ));
    }
    deliver(out_dir, "tilt_scan", "lambda,A,Aprime,rho,drho,kl_fwd", &rows)
}

#[derive(Args)]
pub struct MapsScanArgs {
    /// Measure CSV (weight column plus named attributes).
    #[arg(long)]
    pub measure: PathBuf,
    /// Shaping spec file: key = value lines (w0, s0, aux_i, beta_j).
    #[arg(long)]
    pub shaping: PathBuf,
    #[arg(long, default_value = "H")]
    pub hard_attr: String,
    #[arg(long, default_value = "lin:0:2:21")]
    pub lambda_grid: String,
}

/// Shaped-score spec file:
///
/// ```text
/// w0 = 1.0
/// s0 = s            # base attribute
/// aux_1 = 0.5,s1    # weight,attribute
/// beta_1 = 0.3,g    # penalty weight,attribute
/// ```
pub fn parse_shaping_spec(text: &str) -> Result<ShapedScoreSpec> {
    let mut base_weight = 1.0;
    let mut base: Option<String> = None;
    let mut aux: Vec<(usize, f64, String)> = Vec::new();
    let mut penalties: Vec<(usize, f64, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(format!("line {line_no}"), format!("expected key = value, found `{line}`"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let weighted_term = |what: &str| -> Result<(f64, String)> {
            let (w, attr) = value.split_once(',').ok_or_else(|| {
                Error::parse(
                    format!("line {line_no}"),
                    format!("{what} needs <weight>,<attribute>"),
                )
            })?;
            let w: f64 = w.trim().parse().map_err(|e| {
                Error::parse(format!("line {line_no}"), format!("bad weight: {e}"))
            })?;
            Ok((w, attr.trim().to_string()))
        };
        if key == "w0" {
            base_weight = value
                .parse()
                .map_err(|e| Error::parse(format!("line {line_no}"), format!("bad w0: {e}")))?;
        } else if key == "s0" {
            base = Some(value.to_string());
        } else if let Some(n) = key.strip_prefix("aux_") {
            let n: usize = n.parse().map_err(|e| {
                Error::parse(format!("line {line_no}"), format!("bad aux index: {e}"))
            })?;
            let (w, attr) = weighted_term("aux")?;
            aux.push((n, w, attr));
        } else if let Some(n) = key.strip_prefix("beta_") {
            let n: usize = n.parse().map_err(|e| {
                Error::parse(format!("line {line_no}"), format!("bad beta index: {e}"))
            })?;
            let (w, attr) = weighted_term("beta")?;
            penalties.push((n, w, attr));
        } else {
            return Err(Error::parse(
                format!("line {line_no}"),
                format!("unknown key `{key}`"),
            ));
        }
    }
    let base = base.ok_or_else(|| Error::parse("shaping spec", "missing key `s0`"))?;
    aux.sort_by_key(|(n, _, _)| *n);
    penalties.sort_by_key(|(n, _, _)| *n);
    Ok(ShapedScoreSpec {
        base_weight,
        base,
        aux: aux.into_iter().map(|(_, w, a)| (w, a)).collect(),
        penalties: penalties.into_iter().map(|(_, b, g)| (b, g)).collect(),
    })
}

pub fn load_shaping_spec(path: &Path) -> Result<ShapedScoreSpec> {
    parse_shaping_spec(&std::fs::read_to_string(path)?)
}

pub fn run_maps_scan(args: &MapsScanArgs, out_dir: &Option<PathBuf>) -> Result<()> {
    let mu = DiscreteMeasure::load_csv(&args.measure)?;
    let spec = load_shaping_spec(&args.shaping)?;
    let grid = parse_grid(&args.lambda_grid)?;
    let t = shaped_score(&spec, &mu)?;
    let mu = mu.with_attr("__shaped", t)?;
    let report = drift_limit_report(&mu, "__shaped", &args.hard_attr, &grid)?;
    let rows: Vec<String> = report
        .points
        .iter()
        .map(|p| format!("{},{},{},{}", p.lambda, p.rho, p.drift, p.kl_forward))
        .collect();
    deliver(out_dir, "maps_scan", "lambda,rho_t,drift,kl_fwd", &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid("0,0.5,1").unwrap(), vec![0.0, 0.5, 1.0]);
        let lin = parse_grid("lin:0:1:5").unwrap();
        assert_eq!(lin, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("lin:0:1").is_err());
        assert!(parse_grid("a,b").is_err());
    }

    #[test]
    fn shaping_spec_parses_in_index_order() {
        let spec = parse_shaping_spec(
            "w0 = 2.0\ns0 = s\nbeta_2 = 0.3,g2\naux_1 = 0.5,s1\nbeta_1 = 0.7,g1\n",
        )
        .unwrap();
        assert_eq!(spec.base_weight, 2.0);
        assert_eq!(spec.base, "s");
        assert_eq!(spec.aux, vec![(0.5, "s1".to_string())]);
        assert_eq!(
            spec.penalties,
            vec![(0.7, "g1".to_string()), (0.3, "g2".to_string())]
        );
        assert!(parse_shaping_spec("w0 = 1.0\n").is_err()); // no s0
        assert!(parse_shaping_spec("s0 = s\nmystery = 3\n").is_err());
    }
}
