//! End-to-end runs over a small on-disk image-folder dataset.

use std::path::Path;

use mvcont_core::harness::{
    evaluate_checkpoint, load_records, mean_std, parse_config, run_experiment, run_sweep, ConfigOverrides,
    DatasetCache, RunConfig, RunStatus, SweepGrid, METRICS_FILE, SUMMARY_FILE,
};
use mvcont_core::harness::{render_report, ReportStyle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 4;
const SIDE: u32 = 16;

/// `train/<class>/*.png` and `test/<class>/*.png`, one base colour per class plus noise.
fn write_image_folder(root: &Path, train_per_class: usize, test_per_class: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let palette = [[220u8, 40, 40], [40, 220, 40], [40, 40, 220], [220, 220, 40]];
    for (split, count) in [("train", train_per_class), ("test", test_per_class)] {
        for (class, base) in palette.iter().enumerate().take(CLASSES) {
            let dir = root.join(split).join(format!("class-{class}"));
            std::fs::create_dir_all(&dir).unwrap();
            for i in 0..count {
                let img = image::RgbImage::from_fn(SIDE, SIDE, |_, _| {
                    image::Rgb(base.map(|c| c.saturating_add_signed(rng.random_range(-30i8..=30))))
                });
                img.save(dir.join(format!("{i:03}.png"))).unwrap();
            }
        }
    }
}

fn config(data: &Path, out: &Path, extra: ConfigOverrides) -> RunConfig {
    let base = ConfigOverrides {
        dataset: Some("image-folder".into()),
        data_path: Some(data.to_path_buf()),
        tasks: Some(2),
        memory_size: Some(12),
        mem_batch_size: Some(6),
        stream_batch_size: Some(4),
        desk_scale: Some(true),
        seeds: Some(vec![0, 1]),
        out: Some(out.to_path_buf()),
        ..ConfigOverrides::default()
    };
    parse_config(&base.merged(extra), None).unwrap()
}

#[test]
fn run_writes_record_checkpoints_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_image_folder(&data, 6, 3);
    let out = tmp.path().join("out");
    let cfg = config(&data, &out, ConfigOverrides::default());
    let cache = DatasetCache::new();
    let mut steps = 0;
    let record = run_experiment(&cfg, &cache, &mut |_, _| steps += 1).unwrap();

    assert_eq!(record.status, RunStatus::Completed);
    assert_eq!(record.per_seed.len(), 2);
    assert_eq!(record.std_estimator, "population");
    // 24 training images in batches of 4 across two tasks, q = 1.
    assert_eq!(steps, 2 * 6);
    let (m, s) = mean_std(&record.accuracies()).unwrap();
    assert!((record.mean_final_aa.unwrap() - m).abs() < 1e-9);
    assert!((record.std_final_aa.unwrap() - s).abs() < 1e-9);

    let hash = cfg.hash();
    assert_eq!(record.config_hash, hash);
    for seed in &record.per_seed {
        assert_eq!(seed.evaluation.config_hash, hash);
        assert_eq!(seed.train_examples, 24);
        assert!((0.0..=100.0).contains(&seed.evaluation.final_average_accuracy));
        for path in [&seed.loss_trace, &seed.encoder_checkpoint, &seed.memory_checkpoint] {
            assert!(path.is_file(), "{}", path.display());
        }
        assert!(std::fs::read_to_string(&seed.loss_trace).unwrap().contains(&hash));
    }
    assert!(std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap().contains(&hash));
    let stored = load_records(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(stored, vec![record.clone()]);
    assert!(render_report(&stored, ReportStyle::MemoryUsage).contains("| image-folder | 12 | 6 | 1 | 1 | 0,0,0 | 2 |"));

    let again = run_experiment(&cfg, &cache, &mut |_, _| {}).unwrap();
    assert_eq!(again.accuracies(), record.accuracies());

    let first = &record.per_seed[0];
    let evaluation = evaluate_checkpoint(&cfg, &first.encoder_checkpoint, &first.memory_checkpoint, &cache).unwrap();
    assert_eq!(evaluation.final_average_accuracy, first.evaluation.final_average_accuracy);
}

#[test]
fn checkpoints_keep_their_training_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_image_folder(&data, 4, 2);
    let out = tmp.path().join("out");
    let cache = DatasetCache::new();
    let single = |extra: ConfigOverrides| config(&data, &out, ConfigOverrides { seeds: Some(vec![0]), ..extra });
    let a_cfg = single(ConfigOverrides::default());
    let b_cfg = single(ConfigOverrides { lr: Some(0.05), ..ConfigOverrides::default() });
    let a = run_experiment(&a_cfg, &cache, &mut |_, _| {}).unwrap().per_seed.remove(0);
    let b = run_experiment(&b_cfg, &cache, &mut |_, _| {}).unwrap().per_seed.remove(0);

    let mixed = evaluate_checkpoint(&a_cfg, &a.encoder_checkpoint, &b.memory_checkpoint, &cache);
    assert!(mixed.is_err());

    // The config only supplies the test set and NCM options; the result keeps the trained hash.
    let evaluation = evaluate_checkpoint(&b_cfg, &a.encoder_checkpoint, &a.memory_checkpoint, &cache).unwrap();
    assert_eq!(evaluation.config_hash, a_cfg.hash());
    assert_eq!(evaluation.final_average_accuracy, a.evaluation.final_average_accuracy);
}

#[test]
fn sweep_cells_match_standalone_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_image_folder(&data, 4, 2);
    let base = config(&data, &tmp.path().join("sweep"), ConfigOverrides { seeds: Some(vec![3]), ..ConfigOverrides::default() });
    let grid = SweepGrid {
        mem_batch_size: vec![2, 6],
        daa: vec![[0, 0, 0], [1, 1, 1]],
        ..SweepGrid::default()
    };
    let mut base = base;
    base.style_fallback = true;
    let cache = DatasetCache::new();
    let outcome = run_sweep(&base, &grid, &cache, &mut |_, _| {}).unwrap();
    assert_eq!(outcome.cells.len(), 4);
    assert!(outcome.table.as_ref().is_some_and(|t| t.is_file()));

    let cell = outcome.cells.iter().find(|c| c.mem_batch_size == 2 && c.tuple[2..] == [1, 1, 1]).unwrap();
    let mut alone = base.clone();
    alone.out = tmp.path().join("alone");
    alone.mem_batch_size = 2;
    alone.augmentation.dam = 1;
    alone.augmentation.dac = 1;
    alone.augmentation.das = 1;
    let standalone = run_experiment(&alone, &cache, &mut |_, _| {}).unwrap();
    let swept = cell.record.as_ref().unwrap();
    assert_eq!(swept.accuracies(), standalone.accuracies());
    assert_eq!(swept.config_hash, cell.config_hash);
}

#[test]
fn missing_dataset_fails_with_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(&tmp.path().join("absent"), &out, ConfigOverrides::default());
    assert!(run_experiment(&cfg, &DatasetCache::new(), &mut |_, _| {}).is_err());
    let stored = load_records(&out.join(METRICS_FILE)).unwrap();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].status, RunStatus::Failed);
    assert_eq!(stored[0].failures.len(), 1);
    assert!(stored[0].mean_final_aa.is_none());
}
