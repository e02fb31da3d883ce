//! Human-readable result tables.

use std::fmt::Write;

use super::{EmotionReport, TrialResult};

/// One row per system: `(system, metric, results per condition)`.
pub fn format_sre_table(rows: &[(String, String, Vec<TrialResult>)]) -> String {
    let mut out = String::from("Top-1 IDR(%)\n");
    let conditions: Vec<&str> = rows
        .first()
        .map(|r| r.2.iter().map(|t| t.condition.as_str()).collect())
        .unwrap_or_default();
    write!(out, "{:<16} {:<8}", "System", "Metric").expect("string write");
    for c in &conditions {
        write!(out, " {c:>11}").expect("string write");
    }
    out.push('\n');
    for (system, metric, results) in rows {
        write!(out, "{system:<16} {metric:<8}").expect("string write");
        for r in results {
            write!(out, " {:>11.2}", r.idr_percent).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// Frame and utterance reports of one emotion system on one split.
#[derive(Debug, Clone)]
pub struct AerRow {
    pub system: String,
    pub frame: EmotionReport,
    pub utterance: EmotionReport,
}

/// `sections` pairs a split title with its rows.
pub fn format_aer_table(sections: &[(&str, Vec<AerRow>)]) -> String {
    let mut out = String::new();
    for (title, rows) in sections {
        writeln!(out, "{title}").expect("string write");
        writeln!(
            out,
            "{:<12} {:>12} {:>12} {:>13} {:>13}",
            "", "ACC% (fr.)", "MAP% (fr.)", "ACC% (utt.)", "MAP% (utt.)"
        )
        .expect("string write");
        for r in rows {
            writeln!(
                out,
                "{:<12} {:>12.2} {:>12.2} {:>13.2} {:>13.2}",
                r.system, r.frame.acc_percent, r.frame.map_percent, r.utterance.acc_percent, r.utterance.map_percent
            )
            .expect("string write");
        }
    }
    out
}
