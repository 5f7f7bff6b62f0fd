//! Human-readable markdown summaries of evaluation and ERP reports.

use std::fmt::Write;

use crate::erp::ErpReport;
use crate::learn::{EvalReport, SplitMetrics};
use crate::pipeline::EvalSummary;

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn recall(m: &SplitMetrics, class: usize) -> String {
    m.recall[class].map_or("n/a".to_string(), pct)
}

fn eval_row(out: &mut String, label: &str, r: &EvalReport) {
    let _ = writeln!(
        out,
        "| {label} | {} | {} | {} | {} | {} |",
        pct(r.train.balanced_accuracy),
        pct(r.test.balanced_accuracy),
        recall(&r.test, 0),
        recall(&r.test, 1),
        r.test.n
    );
}

fn p_cell(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.1e}")
    } else {
        format!("{p:.4}")
    }
}

/// Accuracy table, then per comparison the significant channels and a
/// channel × band p-value table.
pub fn markdown_summary(eval: Option<&EvalSummary>, erp: Option<&ErpReport>) -> String {
    let mut out = String::from("# Run summary\n");
    if let Some(e) = eval {
        out.push_str("\n## Classification (balanced accuracy)\n\n");
        out.push_str("| Model | Train | Test | Test recall (control) | Test recall (confusion) | Test trials |\n");
        out.push_str("|---|---|---|---|---|---|\n");
        eval_row(&mut out, "EEG (boosted trees)", &e.eeg);
        eval_row(&mut out, "Eye tracking (CNN)", &e.gaze);
        eval_row(&mut out, "EEG + eye tracking (ensemble)", &e.ensemble);
        if !e.ensemble.fallback_trials.is_empty() {
            let _ = writeln!(
                out,
                "\n{} test/train trial(s) had no eye prediction and were scored from EEG alone.",
                e.ensemble.fallback_trials.len()
            );
        }
    }
    if let Some(r) = erp {
        let _ = writeln!(
            out,
            "\n## N400 window {:.0}–{:.0} ms\n",
            1000.0 * r.window_s.0,
            1000.0 * r.window_s.1
        );
        for c in &r.comparisons {
            let _ = writeln!(out, "### {}\n", c.name);
            for (i, m) in c.maps.iter().enumerate() {
                let sig = m.significant_channels();
                let _ = writeln!(
                    out,
                    "Participant {}: {} of {} channels with p < {} ({})\n",
                    i + 1,
                    sig.len(),
                    m.channels.len(),
                    m.alpha,
                    if sig.is_empty() { "none".to_string() } else { sig.join(", ") }
                );
                let bands: Vec<&str> = r.bands.iter().map(|b| b.name.as_str()).collect();
                let _ = writeln!(out, "| Channel | {} | min p |", bands.join(" | "));
                let _ = writeln!(out, "|---|{}---|", "---|".repeat(bands.len()));
                for ch in &m.channels {
                    let cells: Vec<String> = ch.bands.iter().map(|b| p_cell(b.p)).collect();
                    let mark = if ch.significant { " *" } else { "" };
                    let _ = writeln!(out, "| {} | {} | {}{mark} |", ch.channel, cells.join(" | "), p_cell(ch.p));
                }
                out.push('\n');
            }
            if c.maps.len() > 1 {
                let hits: Vec<String> = c
                    .counts
                    .channels
                    .iter()
                    .zip(&c.counts.counts)
                    .filter(|(_, &n)| n > 0)
                    .map(|(ch, n)| format!("{ch} ({n}/{})", c.counts.n_maps))
                    .collect();
                let _ = writeln!(out, "Across participants: {}\n", hits.join(", "));
            }
        }
    }
    out
}
