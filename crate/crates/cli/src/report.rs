//! `report.txt`: the identification and emotion tables plus the
//! reconstruction summary, rendered from the stamped result files.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;

use cdf_core::eval::{format_sre_table, TrialResult};
use cdf_core::Error as CoreError;

use crate::results::{read_aer, read_recon, read_sre, AerRow, SreRow, Stamp};

fn require(ws: &Path, rel: &str, producer: &str) -> Result<std::path::PathBuf> {
    let p = ws.join(rel);
    if !p.exists() {
        return Err(CoreError::CascadeOrder(format!("{} is missing; run `cdf {producer}` first", p.display())).into());
    }
    Ok(p)
}

fn system_title(system: &str) -> String {
    match system {
        "idf" => "IDF d-vector".to_string(),
        "cdf" => "CDF d-vector".to_string(),
        other => other.to_string(),
    }
}

fn sre_section(rows: &[SreRow]) -> Result<String> {
    let mut systems: Vec<&str> = Vec::new();
    for r in rows {
        if !systems.contains(&r.system.as_str()) {
            systems.push(&r.system);
        }
    }
    let table: Vec<(String, String, Vec<TrialResult>)> = systems
        .iter()
        .map(|s| {
            let results = rows
                .iter()
                .filter(|r| r.system == *s)
                .map(|r| TrialResult::new(&r.condition, r.n_trials, r.n_correct))
                .collect();
            (system_title(s), "Cosine".to_string(), results)
        })
        .collect();
    let mut out = String::from("Table 1. Speaker identification\n");
    out += &format_sre_table(&table);
    let find = |sys: &str, cond: &str| rows.iter().find(|r| r.system == sys && r.condition == cond);
    out += "\nCDF - IDF (IDR points)\n";
    for r in rows.iter().filter(|r| r.system == "cdf") {
        if let Some(idf) = find("idf", &r.condition) {
            writeln!(out, "  {:<12} {:+.2}", r.condition, r.idr_percent - idf.idr_percent)?;
        }
    }
    Ok(out)
}

fn aer_section(rows: &[AerRow]) -> Result<String> {
    let mut out = String::from("Table 2. Emotion recognition\n");
    for split in ["train", "eval"] {
        let mut conds: Vec<&str> = Vec::new();
        for r in rows.iter().filter(|r| r.split == split) {
            if !conds.contains(&r.conditioning.as_str()) {
                conds.push(&r.conditioning);
            }
        }
        if conds.is_empty() {
            continue;
        }
        writeln!(out, "{split} set")?;
        writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>13} {:>13}",
            "", "ACC% (fr.)", "MAP% (fr.)", "ACC% (utt.)", "MAP% (utt.)"
        )?;
        let get = |c: &str, level: &str| rows.iter().find(|r| r.split == split && r.conditioning == c && r.level == level);
        for c in &conds {
            let cell = |level: &str| get(c, level).map(|r| (r.acc_percent, r.map_percent)).unwrap_or((f64::NAN, f64::NAN));
            let (fa, fm) = cell("frame");
            let (ua, um) = cell("utterance");
            writeln!(out, "{c:<12} {fa:>12.2} {fm:>12.2} {ua:>13.2} {um:>13.2}")?;
        }
        if let Some(base) = get("baseline", "frame") {
            writeln!(out, "gain over baseline, frame level (ACC, MAP points)")?;
            for c in conds.iter().filter(|c| **c != "baseline") {
                if let Some(r) = get(c, "frame") {
                    writeln!(
                        out,
                        "  {c:<12} {:+.2} {:+.2}",
                        r.acc_percent - base.acc_percent,
                        r.map_percent - base.map_percent
                    )?;
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn render(ws: &Path, stamp: &Stamp) -> Result<String> {
    let (_, sre) = read_sre(&require(ws, "results/sre.tsv", "eval-sre")?)?;
    let (_, aer) = read_aer(&require(ws, "results/aer.tsv", "eval-aer")?)?;
    let (_, recon) = read_recon(&require(ws, "results/recon.tsv", "reconstruct")?)?;
    let mut out = format!("{}\n\n", stamp.line());
    out += &sre_section(&sre)?;
    out.push('\n');
    out += &aer_section(&aer)?;
    out += "Spectrum reconstruction (mean squared error per frame)\n";
    writeln!(out, "  validation, before training  {:.4}", recon.val_loss_epoch0)?;
    writeln!(out, "  validation, after training   {:.4}", recon.val_loss_final)?;
    writeln!(out, "  eval                         {:.4}", recon.eval_loss)?;
    writeln!(out, "  eval, mean-spectrum baseline {:.4}", recon.baseline_eval_loss)?;
    writeln!(
        out,
        "  eval utterances beating the baseline: {}/{}",
        recon.utterances_beating_baseline, recon.eval_utterances
    )?;
    Ok(out)
}
