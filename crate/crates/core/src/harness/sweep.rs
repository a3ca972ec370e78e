use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::experiment::{run_experiment, DatasetCache};
use super::records::MetricsRecord;
use crate::error::Result;
use crate::tensorfile::write_atomic;
use crate::trainer::StepLog;

/// Axes to cross. Empty axes keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub mem_batch_size: Vec<usize>,
    #[serde(default)]
    pub mem_iters: Vec<usize>,
    #[serde(default)]
    pub views: Vec<usize>,
    #[serde(default)]
    pub daa: Vec<[usize; 3]>,
    #[serde(default)]
    pub memory_size: Vec<usize>,
}

impl SweepGrid {
    pub fn is_empty(&self) -> bool {
        self.mem_batch_size.is_empty()
            && self.mem_iters.is_empty()
            && self.views.is_empty()
            && self.daa.is_empty()
            && self.memory_size.is_empty()
    }

    /// One config per grid point, in row-major axis order. An empty grid has no points.
    pub fn expand(&self, base: &RunConfig) -> Vec<RunConfig> {
        if self.is_empty() {
            return Vec::new();
        }
        fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let a = &base.augmentation;
        let mut out = Vec::new();
        for &m in &axis(&self.memory_size, base.memory_size) {
            for &bm in &axis(&self.mem_batch_size, base.mem_batch_size) {
                for &q in &axis(&self.mem_iters, base.mem_iters) {
                    for &p in &axis(&self.views, a.standard_views) {
                        for &[dam, dac, das] in &axis(&self.daa, [a.dam, a.dac, a.das]) {
                            let mut c = base.clone();
                            c.memory_size = m;
                            c.mem_batch_size = bm;
                            c.mem_iters = q;
                            c.augmentation.standard_views = p;
                            c.augmentation.dam = dam;
                            c.augmentation.dac = dac;
                            c.augmentation.das = das;
                            out.push(c);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Result of one grid point; a failure does not stop the sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCell {
    pub config_hash: String,
    pub tuple: [usize; 5],
    pub mem_batch_size: usize,
    pub memory_size: usize,
    pub record: Option<MetricsRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    pub table: Option<PathBuf>,
}

impl SweepOutcome {
    pub fn records(&self) -> Vec<&MetricsRecord> {
        self.cells.iter().filter_map(|c| c.record.as_ref()).collect()
    }
}

pub fn run_sweep(
    base: &RunConfig,
    grid: &SweepGrid,
    cache: &DatasetCache,
    on_step: &mut dyn FnMut(u64, &StepLog),
) -> Result<SweepOutcome> {
    let configs = grid.expand(base);
    if configs.is_empty() {
        return Ok(SweepOutcome {
            cells: Vec::new(),
            table: None,
        });
    }
    let mut cells = Vec::with_capacity(configs.len());
    for config in &configs {
        let (record, error) = match config.validate().and_then(|_| run_experiment(config, cache, on_step)) {
            Ok(r) => (Some(r), None),
            Err(e) => {
                tracing::warn!(config_hash = %config.hash(), error = %e, "sweep cell failed");
                (None, Some(e.to_string()))
            }
        };
        cells.push(SweepCell {
            config_hash: config.hash(),
            tuple: config.tuple().into(),
            mem_batch_size: config.mem_batch_size,
            memory_size: config.memory_size,
            record,
            error,
        });
    }
    let mut hasher = Sha256::new();
    for c in &cells {
        hasher.update(c.config_hash.as_bytes());
    }
    let name = format!("sweep-{}.md", &hex::encode(hasher.finalize())[..16]);
    let table = base.out.join(name);
    write_atomic(&table, comparison_table(&cells).as_bytes())?;
    Ok(SweepOutcome {
        cells,
        table: Some(table),
    })
}

/// Markdown table with one row per cell.
pub fn comparison_table(cells: &[SweepCell]) -> String {
    let mut s = String::from("| M | \\|B_m\\| | (p,q,DAM,DAC,DAS) | final AA (%) | config |\n|---|---|---|---|---|\n");
    for c in cells {
        let [p, q, m, cc, st] = c.tuple;
        let aa = match (&c.record, &c.error) {
            (Some(r), _) => match (r.mean_final_aa, r.std_final_aa) {
                (Some(m), Some(sd)) => format!("{m:.2} ± {sd:.2}"),
                _ => "n/a".into(),
            },
            (None, Some(e)) => format!("failed: {}", e.replace('|', "/")),
            (None, None) => "n/a".into(),
        };
        let _ = writeln!(
            s,
            "| {} | {} | ({p},{q},{m},{cc},{st}) | {aa} | {} |",
            c.memory_size,
            c.mem_batch_size,
            &c.config_hash[..12]
        );
    }
    s.push_str("\n± is the population standard deviation over seeds.\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{parse_config, ConfigOverrides};
    use std::path::Path;

    fn base() -> RunConfig {
        parse_config(&ConfigOverrides::default(), Some(Path::new("/data"))).unwrap()
    }

    #[test]
    fn empty_grid_expands_to_nothing() {
        assert!(SweepGrid::default().expand(&base()).is_empty());
        let cache = DatasetCache::new();
        let out = run_sweep(&base(), &SweepGrid::default(), &cache, &mut |_, _| {}).unwrap();
        assert!(out.cells.is_empty());
    }

    #[test]
    fn memory_batch_axis() {
        let grid = SweepGrid {
            mem_batch_size: vec![10, 20, 50, 100, 200],
            ..Default::default()
        };
        let cells = grid.expand(&base());
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|c| c.tuple() == (1, 1, 0, 0, 0)));
        assert_eq!(cells.iter().map(|c| c.mem_batch_size).collect::<Vec<_>>(), vec![10, 20, 50, 100, 200]);
    }

    #[test]
    fn iteration_axis_and_cross_product() {
        let grid = SweepGrid {
            mem_iters: (1..=5).collect(),
            ..Default::default()
        };
        assert_eq!(grid.expand(&base()).len(), 5);
        let grid = SweepGrid {
            views: vec![1, 2],
            daa: vec![[0, 0, 0], [1, 1, 0]],
            memory_size: vec![200, 500],
            ..Default::default()
        };
        let cells = grid.expand(&base());
        assert_eq!(cells.len(), 8);
        let hashes: std::collections::HashSet<String> = cells.iter().map(RunConfig::hash).collect();
        assert_eq!(hashes.len(), 8);
    }
}
