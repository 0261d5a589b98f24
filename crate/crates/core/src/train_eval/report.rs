//! Markdown tables of evaluation results, one ✓/✗ column per architecture.

use std::fmt::Write;

use super::suite::{EvalResult, Subset};
use super::TrainError;

/// `accuracy: 88.5% (23/26)`.
pub fn format_accuracy(correct: usize, total: usize) -> String {
    let pct = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
    format!("accuracy: {pct:.1}% ({correct}/{total})")
}

fn same_suite(a: &EvalResult, b: &EvalResult) -> Result<(), TrainError> {
    if a.rows.len() != b.rows.len() {
        return Err(TrainError::SuiteMismatch(format!("{} rows vs {} rows", a.rows.len(), b.rows.len())));
    }
    for (i, (x, y)) in a.rows.iter().zip(&b.rows).enumerate() {
        if x.part != y.part || x.descriptor != y.descriptor || x.subset != y.subset || x.true_label != y.true_label {
            return Err(TrainError::SuiteMismatch(format!("row {}: {} {} vs {} {}", i + 1, x.part, x.descriptor, y.part, y.descriptor)));
        }
    }
    Ok(())
}

/// One table per subset in suite order, then a summary line per
/// architecture. Columns follow the order of `results`.
pub fn report(results: &[EvalResult]) -> Result<String, TrainError> {
    let Some(first) = results.first() else {
        return Err(TrainError::SuiteMismatch("no results".into()));
    };
    for r in &results[1..] {
        same_suite(first, r)?;
    }
    let mut out = String::from("# Variant suite results\n");
    for subset in Subset::ALL {
        let idx: Vec<usize> = (0..first.rows.len()).filter(|&i| first.rows[i].subset == subset).collect();
        if idx.is_empty() {
            continue;
        }
        let _ = write!(out, "\n## {}\n\n| Part | Variant |", subset.title());
        for r in results {
            let _ = write!(out, " {} |", r.arch.display_name());
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(results.len()));
        out.push('\n');
        for i in idx {
            let row = &first.rows[i];
            let _ = write!(out, "| {} | {} |", row.part, row.title);
            for r in results {
                out.push_str(if r.rows[i].correct { " ✓ |" } else { " ✗ |" });
            }
            out.push('\n');
        }
    }

    let notes: Vec<String> = results
        .iter()
        .flat_map(|r| {
            r.rows.iter().filter_map(move |row| {
                let note = row.note.as_ref()?;
                Some(format!("- {} / {} / {}: {}", r.arch.tag(), row.part, row.descriptor, note))
            })
        })
        .collect();
    if !notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
    }

    out.push_str("\n## Summary\n\n");
    for r in results {
        let _ = writeln!(out, "- {}: {}", r.arch.display_name(), format_accuracy(r.correct_count(), r.rows.len()));
    }
    Ok(out)
}
