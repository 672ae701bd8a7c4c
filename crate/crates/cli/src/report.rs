use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qslaw::analysis::{line_chart, read_metrics_csv, MetricsRecord};
use qslaw::harness::{write_atomic, METRICS_FILE};

use crate::{CliResult, Failure};

fn collect(path: &Path) -> CliResult<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(Failure::Runtime(format!("file error: {} does not exist", path.display())));
    }
    let direct = path.join(METRICS_FILE);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(qslaw::Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path().join(METRICS_FILE)))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Failure::Runtime(format!("file error: no {METRICS_FILE} under {}", path.display())));
    }
    Ok(found)
}

pub fn run(inputs: &[PathBuf], output: &Path) -> CliResult<()> {
    let mut by_arm: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    for input in inputs {
        for path in collect(input)? {
            let file = std::fs::File::open(&path).map_err(qslaw::Error::from)?;
            for r in read_metrics_csv(file)? {
                by_arm.entry(r.arm.clone()).or_default().push(r);
            }
        }
    }
    let charts: [(&str, &str, fn(&MetricsRecord) -> f64); 3] = [
        ("loss", "multimodal train loss", |r| r.train_loss),
        ("accuracy", "held-out accuracy", |r| r.eval_accuracy),
        ("perplexity", "linguistic perplexity", |r| r.lm_perplexity),
    ];
    for (name, label, value) in charts {
        let series: Vec<(&str, Vec<(f64, f64)>)> = by_arm
            .iter()
            .map(|(arm, rs)| {
                let points = rs.iter().map(|r| (r.step as f64, value(r))).filter(|p| p.1.is_finite()).collect();
                (arm.as_str(), points)
            })
            .collect();
        let svg = line_chart(label, "step", name, &series);
        write_atomic(&output.join(format!("{name}.svg")), svg.as_bytes())?;
    }
    eprintln!("wrote loss, accuracy and perplexity charts for {} arm(s) to {}", by_arm.len(), output.display());
    Ok(())
}
