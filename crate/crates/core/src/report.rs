//! Aggregation of training runs into a per-mode summary table.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::save_dataset;
use crate::error::{Error, Result};
use crate::trainer::{write_metrics, EpochMetrics, Mode, TrainConfig, TrainOutcome};

/// Contents of `run.json` in a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
    pub config: TrainConfig,
}

/// Writes a run directory: `metrics.csv`, `run.json`, `model.json`,
/// `pruned.jsonl` (the pre-images each sample last trained on) and
/// `audit.jsonl` (one line per batch).
pub fn save_run(dir: &Path, config: &TrainConfig, outcome: &TrainOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e| Error::io(p, e)
    };

    let path = dir.join("metrics.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    write_metrics(&outcome.metrics, &mut w)
        .and_then(|_| w.flush())
        .map_err(io(&path))?;

    let info = RunInfo {
        mode: config.mode,
        seed: config.seed,
        epochs: config.epochs,
        final_accuracy: outcome.metrics.last().map_or(f64::NAN, |m| m.accuracy),
        config: config.clone(),
    };
    let path = dir.join("run.json");
    let json = serde_json::to_string_pretty(&info).expect("run info serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;

    let path = dir.join("model.json");
    let json = serde_json::to_string(&outcome.model).expect("model serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;

    save_dataset(&outcome.pruned, dir.join("pruned.jsonl"))?;

    let path = dir.join("audit.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(io(&path))?);
    for entry in &outcome.audit {
        serde_json::to_writer(&mut w, entry).expect("audit serializes");
        writeln!(w).map_err(io(&path))?;
    }
    w.flush().map_err(io(&path))
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    rdr.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-run figures derived from `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub mode: Mode,
    pub seed: u64,
    pub epochs: usize,
    pub final_accuracy: f64,
    pub retained_pct: f64,
    pub gold_retained_pct: Option<f64>,
    /// Mean pruning seconds per epoch.
    pub prune_seconds: f64,
    /// `100 * total prune seconds / total epoch seconds`.
    pub overhead_pct: f64,
}

impl RunSummary {
    pub fn from_metrics(dir: PathBuf, info: &RunInfo, rows: &[EpochMetrics]) -> Self {
        let n = rows.len() as f64;
        let mean = |f: fn(&EpochMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let golds: Vec<f64> = rows.iter().filter_map(|r| r.gold_retained_pct).collect();
        let prune_total: f64 = rows.iter().map(|r| r.prune_seconds).sum();
        let epoch_total: f64 = rows.iter().map(|r| r.epoch_seconds).sum();
        RunSummary {
            dir,
            mode: info.mode,
            seed: info.seed,
            epochs: rows.len(),
            final_accuracy: rows.last().map_or(f64::NAN, |r| r.accuracy),
            retained_pct: mean(|r| r.retained_pct),
            gold_retained_pct: (!golds.is_empty()).then(|| golds.iter().sum::<f64>() / golds.len() as f64),
            prune_seconds: prune_total / n,
            overhead_pct: if epoch_total > 0.0 { 100.0 * prune_total / epoch_total } else { 0.0 },
        }
    }
}

pub fn summarize_run(dir: &Path) -> Result<RunSummary> {
    let info_path = dir.join("run.json");
    let text = fs::read_to_string(&info_path).map_err(|e| Error::io(&info_path, e))?;
    let info: RunInfo = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: info_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let rows = read_metrics(&dir.join("metrics.csv"))?;
    if rows.is_empty() || rows.len() < info.epochs {
        return Err(Error::Invalid(format!(
            "short run: {} of {} epochs recorded",
            rows.len(),
            info.epochs
        )));
    }
    Ok(RunSummary::from_metrics(dir.to_path_buf(), &info, &rows))
}

/// Aggregate over the runs of one mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub runs: usize,
    pub accuracy_mean: f64,
    /// Sample standard deviation; absent with fewer than two runs.
    pub accuracy_std: Option<f64>,
    pub retained_pct: f64,
    pub gold_retained_pct: Option<f64>,
    pub prune_seconds: f64,
    pub overhead_pct: f64,
    /// Accuracy difference to the baseline mode, in percentage points.
    pub baseline_delta_pp: Option<f64>,
    /// `|baseline_delta_pp| > 1`.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedRun {
    pub dir: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ModeRow>,
    pub runs: Vec<RunSummary>,
    pub skipped: Vec<SkippedRun>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    Some((xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt())
}

/// Groups runs by mode. Unreadable or short runs are listed, not fatal.
pub fn report(dirs: &[PathBuf]) -> RunReport {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        match summarize_run(dir) {
            Ok(s) => runs.push(s),
            Err(e) => skipped.push(SkippedRun {
                dir: dir.clone(),
                reason: e.to_string(),
            }),
        }
    }
    RunReport::from_runs(runs, skipped)
}

impl RunReport {
    pub fn from_runs(runs: Vec<RunSummary>, skipped: Vec<SkippedRun>) -> Self {
        let mut rows: Vec<ModeRow> = [Mode::Baseline, Mode::Frozen, Mode::Trainable]
            .into_iter()
            .filter_map(|mode| {
                let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.mode == mode).collect();
                if mine.is_empty() {
                    return None;
                }
                let acc: Vec<f64> = mine.iter().map(|r| r.final_accuracy).collect();
                let golds: Vec<f64> = mine.iter().filter_map(|r| r.gold_retained_pct).collect();
                let col = |f: fn(&RunSummary) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
                Some(ModeRow {
                    mode,
                    runs: mine.len(),
                    accuracy_mean: mean(&acc),
                    accuracy_std: sample_std(&acc),
                    retained_pct: col(|r| r.retained_pct),
                    gold_retained_pct: (!golds.is_empty()).then(|| mean(&golds)),
                    prune_seconds: col(|r| r.prune_seconds),
                    overhead_pct: col(|r| r.overhead_pct),
                    baseline_delta_pp: None,
                    flagged: false,
                })
            })
            .collect();
        if let Some(base) = rows.iter().find(|r| r.mode == Mode::Baseline).map(|r| r.accuracy_mean) {
            for row in &mut rows {
                let delta = 100.0 * (row.accuracy_mean - base);
                row.baseline_delta_pp = Some(delta);
                row.flagged = delta.abs() > 1.0;
            }
        }
        RunReport { rows, runs, skipped }
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        let opt = |x: Option<f64>| x.map_or_else(|| "n/a".to_string(), |v| v.to_string());
        writeln!(
            w,
            "mode,runs,accuracy_mean,accuracy_std,retained_pct,gold_retained_pct,prune_seconds,overhead_pct,baseline_delta_pp,flagged"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.mode,
                r.runs,
                r.accuracy_mean,
                opt(r.accuracy_std),
                r.retained_pct,
                opt(r.gold_retained_pct),
                r.prune_seconds,
                r.overhead_pct,
                opt(r.baseline_delta_pp),
                r.flagged
            )?;
        }
        Ok(())
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("report.csv");
        let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join("report.json");
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(mode: Mode, acc: f64, prune: f64) -> RunSummary {
        RunSummary {
            dir: PathBuf::from("x"),
            mode,
            seed: 0,
            epochs: 1,
            final_accuracy: acc,
            retained_pct: 50.0,
            gold_retained_pct: Some(90.0),
            prune_seconds: prune,
            overhead_pct: 10.0,
        }
    }

    #[test]
    fn single_run_has_no_std() {
        let r = RunReport::from_runs(vec![summary(Mode::Frozen, 0.5, 0.1)], vec![]);
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].accuracy_mean, 0.5);
        assert_eq!(r.rows[0].accuracy_std, None);
        assert_eq!(r.rows[0].baseline_delta_pp, None);
    }

    #[test]
    fn identical_runs_have_zero_std() {
        let r = RunReport::from_runs(
            vec![summary(Mode::Baseline, 0.4, 0.0), summary(Mode::Baseline, 0.4, 0.0)],
            vec![],
        );
        assert_eq!(r.rows[0].accuracy_std, Some(0.0));
        assert_eq!(r.rows[0].baseline_delta_pp, Some(0.0));
        assert!(!r.rows[0].flagged);
    }

    #[test]
    fn delta_and_flag() {
        let r = RunReport::from_runs(
            vec![
                summary(Mode::Baseline, 0.40, 0.0),
                summary(Mode::Frozen, 0.405, 0.1),
                summary(Mode::Trainable, 0.52, 0.1),
            ],
            vec![],
        );
        assert!((r.rows[1].baseline_delta_pp.unwrap() - 0.5).abs() < 1e-9);
        assert!(!r.rows[1].flagged);
        assert!((r.rows[2].baseline_delta_pp.unwrap() - 12.0).abs() < 1e-9);
        assert!(r.rows[2].flagged);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().contains("n/a"));
    }

    #[test]
    fn unreadable_runs_are_listed() {
        let r = report(&[PathBuf::from("/definitely/not/a/run")]);
        assert!(r.rows.is_empty());
        assert_eq!(r.skipped.len(), 1);
    }
}
