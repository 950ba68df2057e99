use crate::curriculum::TrainReport;
use crate::error::{Error, Result};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const METRICS_HEADER: &str =
    "step\tstage\tloss_total\tloss_latent\tloss_soft\tloss_hard\tdev_metric\ttimestamp";

/// One line of a metrics file.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub stage: String,
    pub loss_total: f64,
    pub loss_latent: f64,
    pub loss_soft: f64,
    pub loss_hard: f64,
    pub dev_metric: Option<f64>,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl MetricsRow {
    fn to_line(&self) -> String {
        let dev = self.dev_metric.map_or_else(String::new, |d| d.to_string());
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.step,
            self.stage,
            self.loss_total,
            self.loss_latent,
            self.loss_soft,
            self.loss_hard,
            dev,
            self.timestamp
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return None;
        }
        Some(MetricsRow {
            step: f[0].parse().ok()?,
            stage: f[1].to_string(),
            loss_total: f[2].parse().ok()?,
            loss_latent: f[3].parse().ok()?,
            loss_soft: f[4].parse().ok()?,
            loss_hard: f[5].parse().ok()?,
            dev_metric: if f[6].is_empty() {
                None
            } else {
                Some(f[6].parse().ok()?)
            },
            timestamp: f[7].parse().ok()?,
        })
    }
}

/// Rows for steps `from..` of `report`. Components absent from the stage's
/// objective are written as zero; the total is recomputed as their sum.
pub fn report_rows(report: &TrainReport, from: usize) -> Vec<MetricsRow> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    (from..report.loss.len())
        .map(|i| {
            let pick = |v: &[f64]| v.get(i).copied().unwrap_or(0.0);
            let latent = pick(&report.latent);
            let soft = pick(&report.soft);
            // Reports without components (teacher training) carry the whole
            // loss as the hard term.
            let hard = if report.latent.is_empty() && report.hard.is_empty() {
                report.loss[i]
            } else {
                pick(&report.hard)
            };
            let step = i + 1;
            MetricsRow {
                step,
                stage: report.stage.clone(),
                loss_total: latent + soft + hard,
                loss_latent: latent,
                loss_soft: soft,
                loss_hard: hard,
                dev_metric: report.evals.iter().find(|e| e.step == step).map(|e| e.metric),
                timestamp: now,
            }
        })
        .collect()
}

/// Append-only TSV writer. The header is written only when the file is new
/// or empty, so several runs can share one file.
pub struct MetricsWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let mut w = MetricsWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        if empty {
            w.write_line(METRICS_HEADER)?;
            w.flush()?;
        }
        Ok(w)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.write_line(&row.to_line())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Appends every step of `report` to `path` and flushes.
pub fn write_metrics(report: &TrainReport, path: &Path) -> Result<()> {
    let mut w = MetricsWriter::open(path)?;
    for row in report_rows(report, 0) {
        w.append(&row)?;
    }
    w.flush()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Data(format!("{}: missing metrics header", path.display())));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && *l != METRICS_HEADER)
        .map(|(i, l)| {
            MetricsRow::parse(l)
                .ok_or_else(|| Error::Data(format!("{}:{}: malformed metrics row", path.display(), i + 2)))
        })
        .collect()
}
