use std::path::Path;
use std::process::{Command, Output};

use efnet::data::{load_checkpoint, load_mnist, mnist_paths, read_metrics_log, Checkpoint, Split};
use efnet::training::evaluate;

fn efnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efnet"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Writes a tiny MNIST-shaped directory: `n_train`/`n_test` 28x28 images
/// whose mean brightness encodes the label.
fn fake_mnist(dir: &Path, n_train: u32, n_test: u32) {
    for (split, n) in [(Split::Train, n_train), (Split::Test, n_test)] {
        let (img, lab) = mnist_paths(dir, split);
        let mut images = Vec::new();
        for v in [0x0803u32, n, 28, 28] {
            images.extend_from_slice(&v.to_be_bytes());
        }
        let mut labels = Vec::new();
        for v in [0x0801u32, n] {
            labels.extend_from_slice(&v.to_be_bytes());
        }
        for i in 0..n {
            let label = (i % 10) as u8;
            images.extend(std::iter::repeat_n(label * 25, 784));
            labels.push(label);
        }
        std::fs::write(img, images).unwrap();
        std::fs::write(lab, labels).unwrap();
    }
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(efnet(&["train", "--arch", "resnet"]).status.code(), Some(2));
    assert_eq!(
        efnet(&["train", "--arch", "xor", "--batch-size", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        efnet(&["bench", "--shape", "additive:0x3"]).status.code(),
        Some(2)
    );
    assert_eq!(efnet(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().to_str().unwrap();
    let o = efnet(&[
        "train",
        "--arch",
        "mlp2",
        "--data-dir",
        empty,
        "--out-dir",
        empty,
    ]);
    assert_eq!(o.status.code(), Some(3));
    let o = efnet(&["eval", "--checkpoint", &format!("{empty}/none.json")]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn xor_train_then_eval_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = efnet(&["train", "--arch", "xor", "--seed", "2", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    let trained: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("test accuracy: "))
        .unwrap()
        .parse()
        .unwrap();

    let ckpt = dir.path().join("xor-ef-s2.checkpoint.json");
    let log = read_metrics_log(dir.path().join("xor-ef-s2.metrics.jsonl")).unwrap();
    assert_eq!(log.len(), 1000);
    assert_eq!(log.last().unwrap().test_acc, trained);

    let o = efnet(&["eval", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("operator: ef"), "{text}");
    assert!(text.contains(&format!("accuracy: {trained:?}")), "{text}");
}

#[test]
fn eval_on_empty_subset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(dir.path(), 40, 20);
    let d = dir.path().to_str().unwrap();
    let o = efnet(&[
        "train",
        "--arch",
        "mlp2",
        "--operator",
        "classic",
        "--epochs",
        "1",
        "--batch-size",
        "10",
        "--data-dir",
        d,
        "--out-dir",
        d,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let ckpt = dir.path().join("mlp2-classic-s1.checkpoint.json");
    let ckpt = ckpt.to_str().unwrap();

    let o = efnet(&["eval", "--checkpoint", ckpt, "--data-dir", d]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("samples: 20"));

    let o = efnet(&[
        "eval",
        "--checkpoint",
        ckpt,
        "--data-dir",
        d,
        "--test-limit",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!o.stderr.is_empty());
}

#[test]
fn checkpoint_round_trip_keeps_record_and_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    fake_mnist(dir.path(), 30, 10);
    let d = dir.path().to_str().unwrap();
    let o = efnet(&[
        "train",
        "--arch",
        "mlp3",
        "--epochs",
        "1",
        "--batch-size",
        "10",
        "--data-dir",
        d,
        "--out-dir",
        d,
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let path = dir.path().join("mlp3-ef-s1.checkpoint.json");
    let ckpt = Checkpoint::load(&path).unwrap();
    let record = ckpt.config.clone().unwrap();
    assert_eq!(record.arch, "mlp3");
    assert_eq!(record.sgd.batch_size, 10);

    let test = load_mnist(dir.path(), Split::Test).unwrap();
    let net = load_checkpoint(&path).unwrap();
    assert_eq!(Some(evaluate(&net, &test).unwrap()), record.final_test_acc);
    assert_eq!(
        ckpt.to_text().unwrap(),
        std::fs::read_to_string(&path).unwrap()
    );
}

#[test]
fn bench_and_verify_succeed() {
    let o = efnet(&[
        "bench",
        "--shape",
        "additive:784x300",
        "--shape",
        "maxpool:6x24x24",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("300"));
    let o = efnet(&["verify", "--dims", "2", "--cases", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn real_mnist_headers() {
    let dir = std::env::var_os("EFNET_MNIST_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    if !mnist_paths(&dir, Split::Train).0.exists() {
        eprintln!("MNIST not present at {}, skipping", dir.display());
        return;
    }
    let train = load_mnist(&dir, Split::Train).unwrap();
    let test = load_mnist(&dir, Split::Test).unwrap();
    assert_eq!((train.len(), train.dim()), (60_000, 784));
    assert_eq!(test.len(), 10_000);
}
