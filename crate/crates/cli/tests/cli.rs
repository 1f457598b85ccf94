use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn genhop() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_genhop"));
    c.env_remove("GENHOP_THREADS");
    c
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/testdata/mnist5k-images-idx3-ubyte.gz")
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn genhop")
}

fn train_mnist(dir: &Path) -> PathBuf {
    let model = dir.join("model.ghm");
    let out = run(genhop()
        .args(["train", "--preset", "mnist", "--limit", "300", "--clusters", "4", "--train-seed", "7"])
        .arg("--data")
        .arg(fixture())
        .arg("--out")
        .arg(&model));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    model
}

fn pngs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn train_generate_inspect() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("m.ghm");
    let out = run(genhop()
        .args(["--json", "train", "--preset", "mnist", "--limit", "300", "--clusters", "4", "--train-seed", "7"])
        .arg("--data")
        .arg(fixture())
        .arg("--out")
        .arg(&model));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["report"]["images"], 300);
    assert!(v["report"]["summary"]["seed_dim"].as_u64().unwrap() > 0);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("seed dimension D4"), "{stderr}");

    let samples = tmp.path().join("samples");
    let gen = |dir: &Path, threads: Option<&str>| {
        let mut c = genhop();
        c.args(["generate", "--count", "5", "--seed", "17", "--model"]).arg(&model).arg("--out").arg(dir);
        if let Some(t) = threads {
            c.env("GENHOP_THREADS", t);
        }
        let o = run(&mut c);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    };
    gen(&samples, None);
    let first = pngs(&samples);
    assert_eq!(first.len(), 6);
    assert!(first.iter().any(|(n, _)| n == "grid.png"));
    let grid = image::open(samples.join("grid.png")).unwrap();
    assert_eq!((grid.width(), grid.height()), (28 * 3, 28 * 2));
    let again = tmp.path().join("again");
    gen(&again, Some("1"));
    assert_eq!(pngs(&again), first);

    let out = run(genhop().args(["inspect", "--model"]).arg(&model));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("S1 (14, 14, 4), S4 (7, 7, 4)"), "{text}");
    let out = run(genhop().args(["inspect", "--json", "--model"]).arg(&model));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["summary"]["cluster_priors"].as_array().unwrap().len(), 4);
}

#[test]
fn corrupt_and_foreign_version_models_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let model = train_mnist(tmp.path());
    let bytes = fs::read(&model).unwrap();

    let mut corrupt = bytes.clone();
    let mid = corrupt.len() / 2;
    corrupt[mid] ^= 0xff;
    let bad = tmp.path().join("corrupt.ghm");
    fs::write(&bad, &corrupt).unwrap();
    let out = run(genhop().args(["inspect", "--model"]).arg(&bad));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    let mut other = bytes;
    other[8] = 9;
    let bad = tmp.path().join("v9.ghm");
    fs::write(&bad, &other).unwrap();
    let out = run(genhop().args(["generate", "--count", "1", "--model"]).arg(&bad).arg("--out").arg(tmp.path()));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn missing_data_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(genhop()
        .args(["train", "--preset", "mnist", "--data"])
        .arg(tmp.path().join("nope"))
        .arg("--out")
        .arg(tmp.path().join("m.ghm")));
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_flags_and_environment() {
    let out = run(genhop().args(["train", "--preset", "cifar", "--data", "x", "--out", "y"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(genhop().args(["train", "--data", "x", "--out", "y", "--kmax", "5"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(genhop().env("GENHOP_THREADS", "zero").args(["inspect", "--model", "x"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn celeba_preset_on_an_image_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("faces");
    fs::create_dir(&data).unwrap();
    for i in 0..110u32 {
        let img = image::RgbImage::from_fn(40, 48, |x, y| {
            let r = ((x * 5 + i * 7) % 256) as u8;
            let g = ((y * 4 + i * 3) % 256) as u8;
            image::Rgb([r, g, ((x + y + i) % 200) as u8])
        });
        img.save(data.join(format!("{i:04}.png"))).unwrap();
    }
    let model = tmp.path().join("celeba.ghm");
    let out = run(genhop()
        .args(["train", "--preset", "celeba", "--gamma", "0.03", "--clusters", "5", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&model));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let samples = tmp.path().join("s");
    let out = run(genhop().args(["generate", "--count", "2", "--model"]).arg(&model).arg("--out").arg(&samples));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = image::open(samples.join("sample_00000.png")).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
    assert!(matches!(img, image::DynamicImage::ImageRgb8(_)));
}
