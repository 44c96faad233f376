use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use patchcrypt::tensorarchive::{DEFAULT_BIAS_NAME, DEFAULT_WEIGHT_NAME};
use patchcrypt::{
    read_ppm, write_archive, write_pgm_labels, write_ppm, Image, LabelMap, TensorArchive,
    TensorRecord,
};

const KEY_A: &str = "0f1e2d3c4b5a69788796a5b4c3d2e1f00112233445566778899aabbccddeeff0";
const KEY_B: &str = "ffeeddccbbaa99887766554433221100f0e1d2c3b4a5968778695a4b3c2d1e0f";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_patchcrypt"));
    cmd.env_remove("PATCHCRYPT_KEY");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn pattern_image(w: usize, h: usize, salt: usize) -> Image {
    let data = (0..w * h * 3)
        .map(|i| ((i * 31 + salt * 7) % 251) as u8)
        .collect();
    Image::new(w, h, data).unwrap()
}

fn write_key(dir: &Path, name: &str, hex: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{hex}\n")).unwrap();
    path
}

fn write_model(path: &Path, patch: usize, dim: usize) {
    let n = 3 * patch * patch;
    let weight: Vec<f32> = (0..dim * n)
        .map(|i| ((i * 37 % 101) as f32 - 50.0) / 50.0)
        .collect();
    let bias: Vec<f32> = (0..dim).map(|i| i as f32 * 0.1).collect();
    let archive = TensorArchive {
        records: vec![
            TensorRecord::from_f32(DEFAULT_WEIGHT_NAME, vec![dim, 3, patch, patch], &weight),
            TensorRecord::from_f32(DEFAULT_BIAS_NAME, vec![dim], &bias),
            TensorRecord::from_f32("head.weight", vec![4], &[1.0, 2.0, 3.0, 4.0]),
        ],
        metadata: Default::default(),
    };
    fs::write(path, write_archive(&archive).unwrap()).unwrap();
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle)
}

#[test]
fn keygen_writes_a_private_hex_key() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("secret.key");
    let out = run(&["keygen", "--out", p(&key)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(&key).unwrap();
    assert_eq!(text.len(), 65);
    assert!(text.ends_with('\n'));
    assert!(text[..64]
        .bytes()
        .all(|c| matches!(c, b'0'..=b'9' | b'a'..=b'f')));
    assert!(!stdout(&out).contains(&text[..64]));
    assert!(!stderr(&out).contains(&text[..64]));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(
            fs::metadata(&key).unwrap().permissions().mode() & 0o777,
            0o600
        );
    }

    // refuses to clobber without --force
    assert_eq!(code(&run(&["keygen", "--out", p(&key)])), 1);
    assert_eq!(code(&run(&["keygen", "--out", p(&key), "--force"])), 0);
    assert_ne!(fs::read_to_string(&key).unwrap(), text);
}

#[test]
fn keygen_encrypt_decrypt_reproduces_input() {
    let dir = tempfile::tempdir().unwrap();
    let key = dir.path().join("k");
    assert_eq!(code(&run(&["keygen", "--out", p(&key)])), 0);
    let plain = dir.path().join("plain.ppm");
    fs::write(&plain, write_ppm(&pattern_image(32, 48, 1))).unwrap();
    let enc = dir.path().join("enc.ppm");
    let dec = dir.path().join("dec.ppm");

    let out = run(&[
        "encrypt",
        "--key",
        p(&key),
        "--in",
        p(&plain),
        "--out",
        p(&enc),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_ne!(fs::read(&enc).unwrap(), fs::read(&plain).unwrap());
    let out = run(&[
        "decrypt",
        "--key",
        p(&key),
        "--in",
        p(&enc),
        "--out",
        p(&dec),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read(&dec).unwrap(), fs::read(&plain).unwrap());
}

#[test]
fn key_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("a.ppm");
    fs::write(&plain, write_ppm(&pattern_image(4, 4, 2))).unwrap();
    let via_env = dir.path().join("env.ppm");
    let via_file = dir.path().join("file.ppm");
    let out = bin()
        .args([
            "encrypt",
            "-p",
            "2",
            "--in",
            p(&plain),
            "--out",
            p(&via_env),
        ])
        .env("PATCHCRYPT_KEY", KEY_A)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let key = write_key(dir.path(), "k", KEY_A);
    let out = run(&[
        "encrypt",
        "-p",
        "2",
        "--key",
        p(&key),
        "--in",
        p(&plain),
        "--out",
        p(&via_file),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(&via_env).unwrap(), fs::read(&via_file).unwrap());

    // a malformed key is a data error that names the source
    let out = bin()
        .args([
            "encrypt",
            "-p",
            "2",
            "--in",
            p(&plain),
            "--out",
            p(&via_env),
        ])
        .env("PATCHCRYPT_KEY", "xyz")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("PATCHCRYPT_KEY"));
}

#[test]
fn missing_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("a.ppm");
    fs::write(&plain, write_ppm(&pattern_image(16, 16, 0))).unwrap();
    let out = run(&[
        "encrypt",
        "--in",
        p(&plain),
        "--out",
        p(&dir.path().join("b.ppm")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("PATCHCRYPT_KEY"));
}

#[test]
fn indivisible_image_fails_with_geometry_message() {
    let dir = tempfile::tempdir().unwrap();
    let key = write_key(dir.path(), "k", KEY_A);
    let plain = dir.path().join("odd.ppm");
    fs::write(&plain, write_ppm(&pattern_image(17, 16, 0))).unwrap();
    let out = run(&[
        "encrypt",
        "--key",
        p(&key),
        "--in",
        p(&plain),
        "--out",
        p(&dir.path().join("o.ppm")),
    ]);
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("odd.ppm"), "{err}");
    assert!(err.contains("multiples of the patch size 16"), "{err}");
}

#[test]
fn malformed_input_is_a_data_error_with_file_name() {
    let dir = tempfile::tempdir().unwrap();
    let key = write_key(dir.path(), "k", KEY_A);
    let bad = dir.path().join("bad.ppm");
    fs::write(&bad, b"P6 4 4 255\n\x00\x01").unwrap();
    let out = run(&[
        "encrypt",
        "--key",
        p(&key),
        "-p",
        "2",
        "--in",
        p(&bad),
        "--out",
        p(&dir.path().join("o.ppm")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bad.ppm"));
    assert!(stderr(&out).contains("truncated"));
}

#[test]
fn directory_mode_is_deterministic_and_reports_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let key = write_key(dir.path(), "k", KEY_A);
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    for i in 0..12 {
        fs::write(
            input.join(format!("img{i:02}.ppm")),
            write_ppm(&pattern_image(8, 4 * (i % 3 + 1), i)),
        )
        .unwrap();
    }
    fs::write(input.join("notes.txt"), "not an image").unwrap();

    let run_once = |out: &Path| {
        let o = run(&[
            "encrypt",
            "--key",
            p(&key),
            "-p",
            "4",
            "--in",
            p(&input),
            "--out",
            p(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    let first = run_once(&dir.path().join("out1"));
    let second = run_once(&dir.path().join("out2"));
    assert_eq!(first.len(), 12);
    assert_eq!(first, second);
    // each output equals the single-file library result
    for (name, bytes) in &first {
        let plain = read_ppm(&fs::read(input.join(name)).unwrap()).unwrap();
        let key = KEY_A.parse().unwrap();
        assert_eq!(
            bytes,
            &write_ppm(&patchcrypt::encrypt_image(&plain, &key, 4).unwrap())
        );
    }

    // decrypt the tree back
    let back = dir.path().join("back");
    let o = run(&[
        "decrypt",
        "--key",
        p(&key),
        "-p",
        "4",
        "--in",
        p(&dir.path().join("out1")),
        "--out",
        p(&back),
    ]);
    assert_eq!(code(&o), 0);
    for (name, _) in &first {
        assert_eq!(
            fs::read(back.join(name)).unwrap(),
            fs::read(input.join(name)).unwrap()
        );
    }

    // one bad file: others still processed, exit 2, failure named
    fs::write(
        input.join("zz_broken.ppm"),
        write_ppm(&pattern_image(5, 4, 0)),
    )
    .unwrap();
    let out3 = dir.path().join("out3");
    let o = run(&[
        "encrypt",
        "--key",
        p(&key),
        "-p",
        "4",
        "--in",
        p(&input),
        "--out",
        p(&out3),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("zz_broken.ppm"));
    assert!(stderr(&o).contains("1 of 13 files failed"));
    assert_eq!(fs::read_dir(&out3).unwrap().count(), 12);
}

#[test]
fn adapt_verify_inspect_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let key_a = write_key(dir.path(), "a.key", KEY_A);
    let key_b = write_key(dir.path(), "b.key", KEY_B);
    let model = dir.path().join("model.safetensors");
    let adapted = dir.path().join("model.enc.safetensors");
    write_model(&model, 4, 6);
    let image = dir.path().join("img.ppm");
    fs::write(&image, write_ppm(&pattern_image(16, 12, 3))).unwrap();

    let out = run(&[
        "adapt-model",
        "--key",
        p(&key_a),
        "--in",
        p(&model),
        "--out",
        p(&adapted),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(summary["patch_size"], "4");

    // key never written anywhere
    let written = fs::read(&adapted).unwrap();
    let key: patchcrypt::SecretKey = KEY_A.parse().unwrap();
    assert!(!contains(&written, key.as_bytes()));
    assert!(!contains(&written, KEY_A.as_bytes()));
    assert!(!stdout(&out).contains(KEY_A));

    let out = run(&["inspect", p(&adapted)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("patchcrypt.adapted = true"));
    assert!(text.contains("[6, 3, 4, 4]"));
    assert!(!text.contains(KEY_A));

    // in-memory adaptation
    let out = run(&[
        "verify",
        "--key",
        p(&key_a),
        "--model",
        p(&model),
        "--image",
        p(&image),
        "--patch-size",
        "4",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["tokens"], 12);
    assert!(report["max_abs_diff"].as_f64().unwrap() <= 1e-9);
    assert!(!stdout(&out).contains(KEY_A));

    // the file written by adapt-model
    let out = run(&[
        "verify",
        "--key",
        p(&key_a),
        "--model",
        p(&model),
        "--adapted-model",
        p(&adapted),
        "--image",
        p(&image),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    // wrong key at query time
    let out = run(&[
        "verify",
        "--key",
        p(&key_b),
        "--model",
        p(&model),
        "--adapted-model",
        p(&adapted),
        "--image",
        p(&image),
    ]);
    assert_eq!(code(&out), 3);
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["pass"], false);

    // geometry mismatch between model and image
    let odd = dir.path().join("odd.ppm");
    fs::write(&odd, write_ppm(&pattern_image(6, 4, 0))).unwrap();
    let out = run(&[
        "verify",
        "--key",
        p(&key_a),
        "--model",
        p(&model),
        "--image",
        p(&odd),
    ]);
    assert_eq!(code(&out), 2);

    // missing tensor name
    let out = run(&[
        "adapt-model",
        "--key",
        p(&key_a),
        "--in",
        p(&model),
        "--out",
        p(&adapted),
        "--weight-name",
        "nope",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("\"nope\" not found"));
}

#[test]
fn inspect_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.safetensors");
    fs::write(&junk, b"\xff\xff\xff\xff\xff\xff\xff\x7f{}").unwrap();
    let out = run(&["inspect", p(&junk)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("junk.safetensors"));
}

fn write_labels(path: &Path, w: usize, h: usize, labels: &[u8]) {
    fs::write(
        path,
        write_pgm_labels(&LabelMap::new(w, h, labels.to_vec()).unwrap()),
    )
    .unwrap();
}

#[test]
fn eval_scores_paired_directories() {
    let dir = tempfile::tempdir().unwrap();
    let (gt, pred) = (dir.path().join("gt"), dir.path().join("pred"));
    fs::create_dir(&gt).unwrap();
    fs::create_dir(&pred).unwrap();
    write_labels(&gt.join("a.pgm"), 2, 2, &[0, 0, 1, 1]);
    write_labels(&pred.join("a.pgm"), 2, 2, &[0, 1, 1, 1]);
    write_labels(&gt.join("b.pgm"), 2, 1, &[255, 255]);
    write_labels(&pred.join("b.pgm"), 2, 1, &[0, 0]);

    let out = run(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--classes", "2"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(
        text.contains("aAcc 75.00  mAcc 75.00  mIoU 58.33"),
        "{text}"
    );
    let json: serde_json::Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(json["mIoU"], 58.33);
    assert_eq!(json["per_class_iou"][1], 66.67);
    assert_eq!(json["pixels"], 4);
    assert_eq!(json["images"], 2);

    // unmatched stem
    write_labels(&pred.join("c.pgm"), 1, 1, &[0]);
    let out = run(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--classes", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("c"));
    fs::remove_file(pred.join("c.pgm")).unwrap();

    // label out of range names the pixel
    write_labels(&gt.join("a.pgm"), 2, 2, &[0, 0, 1, 7]);
    let out = run(&["eval", "--gt", p(&gt), "--pred", p(&pred), "--classes", "2"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("pixel 3"), "{}", stderr(&out));
}

#[test]
fn help_documents_defaults() {
    let cases: [(&str, &[&str]); 4] = [
        ("encrypt", &["[default: 16]"]),
        ("decrypt", &["[default: 16]"]),
        ("verify", &["[default: 1e-9]", "[default: 0.5]"]),
        ("eval", &["[default: 255]"]),
    ];
    for (cmd, needles) in cases {
        let out = run(&[cmd, "--help"]);
        assert_eq!(code(&out), 0);
        for needle in needles {
            assert!(stdout(&out).contains(needle), "{cmd} --help lacks {needle}");
        }
    }
    for cmd in ["keygen", "adapt-model", "inspect"] {
        assert_eq!(code(&run(&[cmd, "--help"])), 0);
    }
    assert_eq!(code(&run(&["encrypt", "--patch-size", "abc"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn run_is_callable_in_process() {
    assert_eq!(patchcrypt_cli::run(["patchcrypt", "--version"]), 0);
    assert_eq!(
        patchcrypt_cli::run(["patchcrypt", "inspect", "/definitely/missing"]),
        1
    );
}
