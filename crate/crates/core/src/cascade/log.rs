//! Line-delimited training logs: `epoch <tab> split <tab> loss <tab> accuracy`.

use std::fmt::Write;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// Fraction in [0, 1]; NaN for regression logs.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn push(&mut self, epoch: usize, split: &str, loss: f64, accuracy: f64) {
        self.entries.push(LogEntry {
            epoch,
            split: split.to_string(),
            loss,
            accuracy,
        });
    }

    pub fn series(&self, split: &str) -> Vec<&LogEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn first(&self, split: &str) -> Option<&LogEntry> {
        self.entries.iter().find(|e| e.split == split)
    }

    pub fn last(&self, split: &str) -> Option<&LogEntry> {
        self.entries.iter().rev().find(|e| e.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# epoch\tsplit\tloss\taccuracy\n");
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{:.6}\t{:.6}", e.epoch, e.split, e.loss, e.accuracy).expect("string write");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut log = TrainingLog::default();
        for line in text.lines().filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Format(format!("bad log line {line:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            log.push(
                f[0].parse().map_err(|_| bad())?,
                f[1],
                f[2].parse().map_err(|_| bad())?,
                f[3].parse().map_err(|_| bad())?,
            );
        }
        Ok(log)
    }
}
