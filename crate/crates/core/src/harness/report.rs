use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::records::{MetricsRecord, RunStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportStyle {
    /// Final AA against `|B_m|`, `q` and `p` for one dataset and memory size.
    MemoryUsage,
    /// Method rows against dataset and memory-size columns.
    Methods,
}

/// Dataset, M, |B_m|, q, p and DAA counts.
type RowKey = (String, usize, usize, usize, usize, [usize; 3]);

fn cell(r: &MetricsRecord) -> String {
    match (r.mean_final_aa, r.std_final_aa) {
        (Some(m), Some(s)) => format!("{m:.2}±{s:.2}"),
        _ => "n/a".into(),
    }
}

fn dataset_label(r: &MetricsRecord) -> String {
    serde_json::to_value(r.config.dataset)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Renders completed records as a markdown table. When several records share
/// a row and column, the most recent one wins.
pub fn render_report(records: &[MetricsRecord], style: ReportStyle) -> String {
    let done: Vec<&MetricsRecord> = records.iter().filter(|r| r.status == RunStatus::Completed).collect();
    let mut s = String::new();
    match style {
        ReportStyle::MemoryUsage => {
            let mut rows: BTreeMap<RowKey, &MetricsRecord> = BTreeMap::new();
            for r in &done {
                let [p, q, dam, dac, das] = r.tuple;
                rows.insert(
                    (dataset_label(r), r.config.memory_size, r.config.mem_batch_size, q, p, [dam, dac, das]),
                    r,
                );
            }
            s.push_str("| dataset | M | \\|B_m\\| | q | p | DAM,DAC,DAS | seeds | final AA (%) |\n");
            s.push_str("|---|---|---|---|---|---|---|---|\n");
            for ((d, m, bm, q, p, daa), r) in rows {
                let _ = writeln!(
                    s,
                    "| {d} | {m} | {bm} | {q} | {p} | {},{},{} | {} | {} |",
                    daa[0],
                    daa[1],
                    daa[2],
                    r.per_seed.len(),
                    cell(r)
                );
            }
        }
        ReportStyle::Methods => {
            let mut columns: BTreeSet<(String, usize)> = BTreeSet::new();
            let mut table: BTreeMap<[usize; 5], BTreeMap<(String, usize), &MetricsRecord>> = BTreeMap::new();
            for r in &done {
                let col = (dataset_label(r), r.config.memory_size);
                columns.insert(col.clone());
                table.entry(r.tuple).or_default().insert(col, r);
            }
            s.push_str("| method |");
            for (d, m) in &columns {
                let _ = write!(s, " {d} M={m} |");
            }
            s.push_str("\n|---|");
            s.push_str(&"---|".repeat(columns.len()));
            s.push('\n');
            for (t, row) in &table {
                let _ = write!(s, "| Ours ({},{},{},{},{}) |", t[0], t[1], t[2], t[3], t[4]);
                for col in &columns {
                    let _ = write!(s, " {} |", row.get(col).map(|r| cell(r)).unwrap_or_else(|| "-".into()));
                }
                s.push('\n');
            }
        }
    }
    s.push_str("\nValues are mean ± population standard deviation of final AA over seeds.\n");
    s
}
