//! Theoretical overlays for empirical result files: one overlay row per
//! empirical row, aligned for plotting.

use clap::Args;
use misspec_core::bounds;
use misspec_core::error::{Error, Result};
use std::path::PathBuf;

#[derive(Args)]
pub struct OverlayArgs {
    /// Empirical results CSV.
    #[arg(long)]
    pub results: PathBuf,
    /// `lower_bound` (needs n,alpha,epsilon,gamma) or `routing_Q`
    /// (needs alpha,epsilon,gamma,eta).
    #[arg(long)]
    pub kind: String,
    /// Output path; defaults to `<results stem>_overlay.csv`.
    #[arg(long)]
    pub overlay_out: Option<PathBuf>,
}

struct Columns<'a> {
    header: &'a csv::StringRecord,
}

impl<'a> Columns<'a> {
    fn index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("results file has no `{name}` column")))
    }
}

pub fn run(args: &OverlayArgs, out_dir: &Option<PathBuf>) -> Result<()> {
    let mut rdr = csv::Reader::from_path(&args.results)?;
    let header = rdr.headers()?.clone();
    let cols = Columns { header: &header };

    enum Kind {
        LowerBound { n: usize, alpha: usize, epsilon: usize, gamma: usize },
        RoutingQ { alpha: usize, epsilon: usize, gamma: usize, eta: usize },
    }
    let kind = match args.kind.as_str() {
        "lower_bound" => Kind::LowerBound {
            n: cols.index("n")?,
            alpha: cols.index("alpha")?,
            epsilon: cols.index("epsilon")?,
            gamma: cols.index("gamma")?,
        },
        "routing_Q" => Kind::RoutingQ {
            alpha: cols.index("alpha")?,
            epsilon: cols.index("epsilon")?,
            gamma: cols.index("gamma")?,
            eta: cols.index("eta")?,
        },
        other => return Err(Error::invalid(format!("unknown overlay kind `{other}`"))),
    };

    let field = |record: &csv::StringRecord, idx: usize, line: usize| -> Result<f64> {
        record[idx].trim().parse::<f64>().map_err(|e| {
            Error::parse(format!("row {line}"), format!("bad number `{}`: {e}", &record[idx]))
        })
    };

    let mut out = String::new();
    match kind {
        Kind::LowerBound { .. } => out.push_str("n,alpha,epsilon,gamma,lower_bound\n"),
        Kind::RoutingQ { .. } => out.push_str("alpha,epsilon,gamma,eta,Q_theory\n"),
    }
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        match kind {
            Kind::LowerBound { n, alpha, epsilon, gamma } => {
                let (nv, av, ev, gv) = (
                    field(&record, n, line)?,
                    field(&record, alpha, line)?,
                    field(&record, epsilon, line)?,
                    field(&record, gamma, line)?,
                );
                let bound = bounds::lower_bound_gap(gv, nv as u64, av, ev)?;
                out.push_str(&format!("{nv},{av},{ev},{gv},{bound}\n"));
            }
            Kind::RoutingQ { alpha, epsilon, gamma, eta } => {
                let (av, ev, gv, tv) = (
                    field(&record, alpha, line)?,
                    field(&record, epsilon, line)?,
                    field(&record, gamma, line)?,
                    field(&record, eta, line)?,
                );
                let (_, q) = bounds::majority_query_budget(av, ev, gv, tv)?;
                out.push_str(&format!("{av},{ev},{gv},{tv},{q}\n"));
            }
        }
    }

    let path = match (&args.overlay_out, out_dir) {
        (Some(path), _) => path.clone(),
        (None, Some(dir)) => {
            std::fs::create_dir_all(dir)?;
            let stem = args
                .results
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".to_string());
            dir.join(format!("{stem}_overlay.csv"))
        }
        (None, None) => {
            let stem = args
                .results
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "results".to_string());
            args.results.with_file_name(format!("{stem}_overlay.csv"))
        }
    };
    std::fs::write(&path, &out)?;
    print!("{out}");
    Ok(())
}
