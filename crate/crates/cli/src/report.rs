use anyhow::{bail, Context, Result};
use pdistill::curriculum::EvalMetrics;
use pdistill::metrics::mean_std;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const RESULT_FILE: &str = "result.json";

/// Summary written by `distill` and `ablate` at the end of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub stages: Vec<String>,
    pub dev: EvalMetrics,
    pub ood: Option<EvalMetrics>,
    /// Schedule violations tolerated in advisory mode.
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunResult {
    /// Flat `name -> value` view used for aggregation.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let splits = [("dev", Some(&self.dev)), ("ood", self.ood.as_ref())];
        for (split, m) in splits {
            let Some(m) = m else { continue };
            out.insert(format!("{split}_accuracy"), m.accuracy);
            out.insert(format!("{split}_f1"), m.f1);
            out.insert(format!("{split}_mcc"), m.mcc);
            if let Some(p) = m.pearson {
                out.insert(format!("{split}_pearson"), p);
            }
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESULT_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Reads `dir/result.json`, or `dir` itself when it names a file.
    pub fn read(dir: &Path) -> Result<Self> {
        let path: PathBuf = if dir.is_dir() {
            dir.join(RESULT_FILE)
        } else {
            dir.to_path_buf()
        };
        let text = std::fs::read_to_string(&path)
            .with_context(|| format!("{} is not a finished run", dir.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// One row of the aggregate table.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation of every metric present in all runs.
pub fn aggregate(runs: &[RunResult]) -> Result<Vec<Aggregate>> {
    if runs.is_empty() {
        bail!("no runs to aggregate");
    }
    let tables: Vec<BTreeMap<String, f64>> = runs.iter().map(RunResult::metrics).collect();
    let mut rows = Vec::new();
    for metric in tables[0].keys() {
        let values: Option<Vec<f64>> = tables.iter().map(|t| t.get(metric).copied()).collect();
        let Some(values) = values else { continue };
        let (mean, std) = mean_std(&values);
        rows.push(Aggregate {
            metric: metric.clone(),
            mean,
            std,
            n: values.len(),
        });
    }
    Ok(rows)
}

pub fn format_table(rows: &[Aggregate]) -> String {
    let mut out = String::from("metric\tmean\tstd\tn\n");
    for r in rows {
        out.push_str(&format!("{}\t{:.4}\t{:.4}\t{}\n", r.metric, r.mean, r.std, r.n));
    }
    out
}
