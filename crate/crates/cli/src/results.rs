//! Line-delimited result files shared by the evaluation subcommands and `report`.
//!
//! Every file starts with `# config_hash=<hex> version=<v>`, then a
//! tab-separated header row, then one record per line.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Stamp {
    pub config_hash: String,
    pub version: String,
}

impl Stamp {
    pub fn line(&self) -> String {
        format!("# config_hash={} version={}", self.config_hash, self.version)
    }

    pub fn parse(line: &str) -> Result<Self> {
        let rest = line.strip_prefix("# ").ok_or_else(|| anyhow!("missing stamp line"))?;
        let (head, version) = rest
            .split_once(" version=")
            .ok_or_else(|| anyhow!("stamp lacks version"))?;
        let hash = head.strip_prefix("config_hash=");
        Ok(Stamp {
            config_hash: hash.ok_or_else(|| anyhow!("stamp lacks config_hash"))?.to_string(),
            version: version.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SreRow {
    pub system: String,
    pub condition: String,
    pub n_trials: usize,
    pub n_correct: usize,
    pub idr_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AerRow {
    pub conditioning: String,
    pub split: String,
    pub level: String,
    pub acc_percent: f64,
    pub map_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconSummary {
    pub val_loss_epoch0: f64,
    pub val_loss_final: f64,
    pub eval_loss: f64,
    pub baseline_eval_loss: f64,
    pub eval_utterances: usize,
    pub utterances_beating_baseline: usize,
}

impl ReconSummary {
    pub fn val_drop_ratio(&self) -> f64 {
        self.val_loss_epoch0 / self.val_loss_final
    }

    pub fn eval_over_val(&self) -> f64 {
        self.eval_loss / self.val_loss_final
    }
}

pub const SRE_HEADER: &str = "system\tcondition\tn_trials\tn_correct\tidr_percent";
pub const AER_HEADER: &str = "conditioning\tsplit\tlevel\tacc_percent\tmap_percent";

pub fn sre_text(stamp: &Stamp, rows: &[SreRow]) -> String {
    let mut out = format!("{}\n{SRE_HEADER}\n", stamp.line());
    for r in rows {
        out += &format!(
            "{}\t{}\t{}\t{}\t{:.4}\n",
            r.system, r.condition, r.n_trials, r.n_correct, r.idr_percent
        );
    }
    out
}

pub fn aer_text(stamp: &Stamp, rows: &[AerRow]) -> String {
    let mut out = format!("{}\n{AER_HEADER}\n", stamp.line());
    for r in rows {
        out += &format!(
            "{}\t{}\t{}\t{:.4}\t{:.4}\n",
            r.conditioning, r.split, r.level, r.acc_percent, r.map_percent
        );
    }
    out
}

pub fn recon_text(stamp: &Stamp, s: &ReconSummary) -> String {
    format!(
        "{}\nkey\tvalue\nval_loss_epoch0\t{:.6}\nval_loss_final\t{:.6}\nval_drop_ratio\t{:.6}\neval_loss\t{:.6}\n\
         eval_over_val\t{:.6}\nbaseline_eval_loss\t{:.6}\neval_utterances\t{}\nutterances_beating_baseline\t{}\n",
        stamp.line(),
        s.val_loss_epoch0,
        s.val_loss_final,
        s.val_drop_ratio(),
        s.eval_loss,
        s.eval_over_val(),
        s.baseline_eval_loss,
        s.eval_utterances,
        s.utterances_beating_baseline
    )
}

/// Stamp and data rows (header row dropped), split on tabs.
fn read_table(path: &Path, header: Option<&str>) -> Result<(Stamp, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let stamp = Stamp::parse(lines.next().unwrap_or(""))?;
    let head = lines.next().unwrap_or("");
    if let Some(h) = header {
        if head != h {
            bail!("{}: unexpected header {head:?}", path.display());
        }
    }
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split('\t').map(str::to_string).collect())
        .collect();
    Ok((stamp, rows))
}

fn field<T: std::str::FromStr>(row: &[String], i: usize) -> Result<T> {
    row.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| anyhow!("malformed result row {row:?}"))
}

pub fn read_sre(path: &Path) -> Result<(Stamp, Vec<SreRow>)> {
    let (stamp, rows) = read_table(path, Some(SRE_HEADER))?;
    let rows = rows
        .iter()
        .map(|r| {
            Ok(SreRow {
                system: field(r, 0)?,
                condition: field(r, 1)?,
                n_trials: field(r, 2)?,
                n_correct: field(r, 3)?,
                idr_percent: field(r, 4)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((stamp, rows))
}

pub fn read_aer(path: &Path) -> Result<(Stamp, Vec<AerRow>)> {
    let (stamp, rows) = read_table(path, Some(AER_HEADER))?;
    let rows = rows
        .iter()
        .map(|r| {
            Ok(AerRow {
                conditioning: field(r, 0)?,
                split: field(r, 1)?,
                level: field(r, 2)?,
                acc_percent: field(r, 3)?,
                map_percent: field(r, 4)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((stamp, rows))
}

pub fn read_recon(path: &Path) -> Result<(Stamp, ReconSummary)> {
    let (stamp, rows) = read_table(path, Some("key\tvalue"))?;
    let get = |key: &str| -> Result<&Vec<String>> {
        rows.iter()
            .find(|r| r.first().map(String::as_str) == Some(key))
            .ok_or_else(|| anyhow!("{}: missing {key}", path.display()))
    };
    Ok((
        stamp,
        ReconSummary {
            val_loss_epoch0: field(get("val_loss_epoch0")?, 1)?,
            val_loss_final: field(get("val_loss_final")?, 1)?,
            eval_loss: field(get("eval_loss")?, 1)?,
            baseline_eval_loss: field(get("baseline_eval_loss")?, 1)?,
            eval_utterances: field(get("eval_utterances")?, 1)?,
            utterances_beating_baseline: field(get("utterances_beating_baseline")?, 1)?,
        },
    ))
}
