use std::path::Path;

use nanobatch::config::ExperimentConfig;
use nanobatch::data::{write_idx, Dataset, Split};
use nanobatch::experiment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pixel_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * 64);
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    for &label in &labels {
        for p in 0..64 {
            let bright = p % 3 == label;
            let byte: u8 = if bright { rng.gen_range(150..=255) } else { rng.gen_range(0..100) };
            features.push(f64::from(byte) / 255.0);
        }
    }
    Dataset::new(vec![1, 8, 8], features, labels, 3, Split::Train, "fixture").unwrap()
}

fn run_from(dir: &Path, text: &str) -> experiment::RunSummary {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    let cfg = ExperimentConfig::from_path(&path).unwrap();
    experiment::run(&cfg).unwrap()
}

#[test]
fn cnn_trains_from_idx_files() {
    let dir = tempfile::tempdir().unwrap();
    let train = pixel_dataset(48, 1);
    let eval = pixel_dataset(12, 2);
    write_idx(&train, &dir.path().join("train-images"), &dir.path().join("train-labels")).unwrap();
    write_idx(&eval, &dir.path().join("eval-images"), &dir.path().join("eval-labels")).unwrap();
    let summary = run_from(
        dir.path(),
        "run.id = idx\nrun.epochs = 2\nrun.output_dir = out\nrun.precision = f64\n\
         model.kind = cnn\nmodel.channels = 2, 2, 4, 4\nmodel.groups = 2\n\
         data.source = idx\ndata.train_images = train-images\ndata.train_labels = train-labels\n\
         data.eval_images = eval-images\ndata.eval_labels = eval-labels\n\
         dp.clip_norm = 1.0\ndp.noise_multiplier = 0.5\ndp.mode = per_layer\ndp.grad_acc = 8\n",
    );
    assert_eq!(summary.records.len(), 12);
    assert!(summary.final_epsilon.is_finite() && summary.final_epsilon > 0.0);
    assert!(summary.csv_path.starts_with(dir.path().join("out")));
    assert!((0.0..=1.0).contains(&summary.final_accuracy));
}

#[test]
fn mlp_trains_from_csv_with_tail_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = pixel_dataset(60, 3);
    let mut text = String::from("label");
    for i in 0..64 {
        text.push_str(&format!(",f{i}"));
    }
    text.push('\n');
    for i in 0..data.len() {
        text.push_str(&data.labels[i].to_string());
        for v in data.features_of(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(dir.path().join("train.csv"), text).unwrap();
    let summary = run_from(
        dir.path(),
        "run.id = tab\nrun.epochs = 5\nrun.output_dir = out\nmodel.hidden = 16\n\
         data.source = csv\ndata.train_csv = train.csv\ndata.eval_fraction = 0.2\n\
         dp.enabled = false\ndp.grad_acc = 6\noptim.base_lr = 0.02\n",
    );
    // 48 training examples in batches of 6 for 5 epochs.
    assert_eq!(summary.records.len(), 40);
    assert!(summary.final_epsilon.is_infinite());
    assert!(summary.final_accuracy > 0.9, "accuracy {}", summary.final_accuracy);
}
