use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// One `step,split,metric,value` record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricLine {
    pub step: u64,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

impl MetricLine {
    pub fn parse(line: &str) -> Option<MetricLine> {
        let mut it = line.split(',');
        let step = it.next()?.parse().ok()?;
        let split = it.next()?;
        let metric = it.next()?;
        let value = it.next()?.parse().ok()?;
        let valid = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c));
        if it.next().is_some() || !valid(split) || !valid(metric) {
            return None;
        }
        Some(MetricLine { step, split: split.into(), metric: metric.into(), value })
    }

    pub fn render(&self) -> String {
        format!("{},{},{},{:e}", self.step, self.split, self.metric, self.value)
    }
}

/// Append-only metric log.
pub struct MetricLog {
    path: PathBuf,
    file: File,
}

impl MetricLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricLog { path: path.to_path_buf(), file })
    }

    /// Reopens an existing log, dropping records past `step` so a resumed
    /// run rewrites exactly what an unbroken run would have written.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        let kept: Vec<String> = match File::open(path) {
            Ok(f) => BufReader::new(f)
                .lines()
                .map_while(|l| l.ok())
                .filter(|l| MetricLine::parse(l).is_some_and(|m| m.step <= step))
                .collect(),
            Err(_) => Vec::new(),
        };
        let mut log = MetricLog::create(path)?;
        for l in kept {
            writeln!(log.file, "{l}").map_err(|e| Error::io(path, e))?;
        }
        Ok(log)
    }

    pub fn log(&mut self, step: u64, split: &str, metric: &str, value: f64) -> Result<()> {
        let line = MetricLine { step, split: split.into(), metric: metric.into(), value };
        writeln!(self.file, "{}", line.render()).map_err(|e| Error::io(&self.path, e))?;
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metric_log(path: &Path) -> Result<Vec<MetricLine>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            MetricLine::parse(l).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("line {}: expected step,split,metric,value", i + 1),
            })
        })
        .collect()
}
