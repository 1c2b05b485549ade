//! Summary tables and fit plots from persisted records: one CSV per
//! experiment plus a decay plot with confidence band where the rows carry a
//! distance-like parameter.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gfflab::percolation::{decay_scan, DecayRow};

use crate::records::ResultRecord;
use crate::render::render_decay_plot;

/// Parameter keys treated as plot abscissae per experiment.
fn distance_key(experiment: &str) -> Option<&'static str> {
    match experiment {
        "connectivity-decay" => Some("r"),
        "gm-suite" => Some("d"),
        _ => None,
    }
}

pub fn write_report(records: &[ResultRecord], out_dir: &Path) -> Result<Vec<String>> {
    if records.is_empty() {
        bail!("no records to report");
    }
    std::fs::create_dir_all(out_dir)?;
    let mut by_exp: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        by_exp.entry(r.experiment.as_str()).or_default().push(r);
    }
    let mut written = Vec::new();
    for (exp, rows) in &by_exp {
        // collect the union of parameter keys for the header
        let mut keys: Vec<String> = Vec::new();
        for r in rows {
            for k in r.params.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys.sort();
        let table = out_dir.join(format!("{exp}.csv"));
        let mut f = std::fs::File::create(&table)
            .with_context(|| format!("creating {}", table.display()))?;
        write!(f, "experiment")?;
        for k in &keys {
            write!(f, ",{k}")?;
        }
        writeln!(f, ",estimate,stderr,replicas,seed,code_version")?;
        for r in rows {
            write!(f, "{exp}")?;
            for k in &keys {
                match r.params.get(k) {
                    Some(v) => write!(f, ",{v}")?,
                    None => write!(f, ",")?,
                }
            }
            writeln!(
                f,
                ",{:.17e},{:.17e},{},{},{}",
                r.estimate, r.stderr, r.replicas, r.seed, r.code_version
            )?;
        }
        written.push(table.display().to_string());
        if let Some(key) = distance_key(exp) {
            let mut decay: Vec<DecayRow> = rows
                .iter()
                .filter_map(|r| {
                    r.params.get(key).map(|&d| DecayRow {
                        distance: d,
                        probability: r.estimate,
                        stderr: r.stderr,
                    })
                })
                .collect();
            decay.sort_by(|a, b| a.distance.partial_cmp(&b.distance).unwrap());
            decay.dedup_by(|a, b| a.distance == b.distance);
            if decay.iter().filter(|r| r.probability > 0.0).count() >= 2 {
                let fit = decay_scan(&decay).ok();
                let plot = render_decay_plot(&decay, fit.as_ref())?;
                let png = out_dir.join(format!("{exp}_decay.ppm"));
                plot.save_ppm(&png)?;
                written.push(png.display().to_string());
            }
        }
    }
    Ok(written)
}
