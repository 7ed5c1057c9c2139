use std::fmt::Write;

use nvq_core::evalkit::{Category, EvalResult};

use crate::commands::EvalFile;

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.2}", 100.0 * v))
}

fn signed(v: Option<f64>, scale: f64) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:+.2}", scale * v))
}

fn scores(r: &EvalResult) -> String {
    Category::ALL.iter().map(|&c| pct(r.accuracy(c))).collect::<Vec<_>>().join(" | ")
}

/// Markdown tables: known-only against novel-only questions per cell, then
/// the arch × feat × aux × vocab grid on the full test split.
pub fn render(cells: &[(&str, &EvalFile)]) -> String {
    let header = |p: &str| Category::ALL.iter().map(|c| format!("{p} {}", c.as_str())).collect::<Vec<_>>().join(" | ");
    let mut out = String::new();
    let seeds: std::collections::BTreeSet<u64> = cells.iter().map(|(_, f)| f.provenance.seed).collect();
    let _ = writeln!(out, "# nvq report\n\nseeds: {seeds:?}\n");

    let _ = writeln!(out, "## Known-only vs novel-only test questions\n");
    let _ = writeln!(out, "| cell | protocol | category | known-only | novel-only | drop | relative drop (%) |");
    let _ = writeln!(out, "|---|---|---|---|---|---|---|");
    for (name, f) in cells {
        for d in &f.drop {
            for r in &d.rows {
                if r.category == Category::Novel {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "| {name} | {} | {} | {} | {} | {} | {} |",
                    d.protocol.as_str(),
                    r.category.as_str(),
                    r.known.map_or_else(|| "n/a".into(), |v| format!("{v:.2}")),
                    r.novel.map_or_else(|| "n/a".into(), |v| format!("{v:.2}")),
                    signed(r.drop, 1.0),
                    signed(r.relative, 100.0),
                );
            }
        }
    }

    let _ = writeln!(out, "\n## Test split accuracy (%)\n");
    let _ = writeln!(out, "| arch | feat | aux | vocab | {} | {} |", header("OEQ"), header("MCQ"));
    let _ = writeln!(out, "|---|---|---|---|{}", "---|".repeat(2 * Category::ALL.len()));
    for (_, f) in cells {
        let c = &f.cell;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            c.arch,
            c.feat,
            c.aux,
            c.vocab,
            scores(&f.test.oeq),
            scores(&f.test.mcq)
        );
    }
    out
}
