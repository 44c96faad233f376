use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use patchcrypt::{
    adapt_archive, decrypt_image, encrypt_image, load_patch_embedding, read_archive,
    read_pgm_labels, read_ppm, write_archive, write_ppm, ConfusionMatrix, EquivalenceReport,
    Normalization, SecretKey,
};
use rayon::prelude::*;

use crate::keysource;
use crate::{
    read_file, require_exists, usage, write_file, AdaptArgs, CipherArgs, CliError, Command,
    EvalArgs, InspectArgs, KeygenArgs, VerifyArgs,
};

pub(crate) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Keygen(args) => keygen(&args),
        Command::Encrypt(args) => cipher(&args, Direction::Encrypt),
        Command::Decrypt(args) => cipher(&args, Direction::Decrypt),
        Command::AdaptModel(args) => adapt_model(&args),
        Command::Verify(args) => verify(&args),
        Command::Eval(args) => eval(&args),
        Command::Inspect(args) => inspect(&args),
    }
}

fn keygen(args: &KeygenArgs) -> Result<(), CliError> {
    if args.out.exists() && !args.force {
        return Err(usage(format!(
            "{} already exists; pass --force to overwrite",
            args.out.display()
        )));
    }
    let key = SecretKey::generate().context("generating key")?;
    let mut options = OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        options.mode(0o600);
    }
    let mut file = options
        .open(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    writeln!(file, "{}", key.to_hex())
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!("wrote key to {}", args.out.display());
    Ok(())
}

#[derive(Clone, Copy)]
enum Direction {
    Encrypt,
    Decrypt,
}

fn is_ppm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"))
}

fn list_files(dir: &Path, keep: impl Fn(&Path) -> bool) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry
            .with_context(|| format!("listing {}", dir.display()))?
            .path();
        if keep(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn transform_file(
    input: &Path,
    output: &Path,
    key: &SecretKey,
    patch: usize,
    direction: Direction,
) -> anyhow::Result<()> {
    let img = read_ppm(&read_file(input)?).with_context(|| format!("{}", input.display()))?;
    let out = match direction {
        Direction::Encrypt => encrypt_image(&img, key, patch),
        Direction::Decrypt => decrypt_image(&img, key, patch),
    }
    .with_context(|| format!("{}", input.display()))?;
    write_file(output, &write_ppm(&out))
}

fn cipher(args: &CipherArgs, direction: Direction) -> Result<(), CliError> {
    require_exists(&args.input, "input")?;
    if args.patch_size == 0 {
        return Err(usage("--patch-size must be at least 1"));
    }
    let key = keysource::resolve(&args.key)?;

    if !args.input.is_dir() {
        if args.output.is_dir() {
            return Err(usage(format!(
                "input is a file but output {} is a directory",
                args.output.display()
            )));
        }
        return Ok(transform_file(
            &args.input,
            &args.output,
            &key,
            args.patch_size,
            direction,
        )?);
    }

    if args.output.exists() && !args.output.is_dir() {
        return Err(usage(format!(
            "input is a directory but output {} is a file",
            args.output.display()
        )));
    }
    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("creating {}", args.output.display()))?;
    let files = list_files(&args.input, is_ppm)?;
    // Each file is independent; output bytes do not depend on scheduling.
    let failures: Vec<(PathBuf, anyhow::Error)> = files
        .par_iter()
        .filter_map(|input| {
            let name = input.file_name().expect("listed files have names");
            transform_file(
                input,
                &args.output.join(name),
                &key,
                args.patch_size,
                direction,
            )
            .err()
            .map(|e| (input.clone(), e))
        })
        .collect();
    eprintln!(
        "processed {} of {} files",
        files.len() - failures.len(),
        files.len()
    );
    if failures.is_empty() {
        return Ok(());
    }
    for (_, err) in &failures {
        eprintln!("error: {err:#}");
    }
    Err(CliError::Data(anyhow!(
        "{} of {} files failed",
        failures.len(),
        files.len()
    )))
}

fn adapt_model(args: &AdaptArgs) -> Result<(), CliError> {
    require_exists(&args.input, "model")?;
    let key = keysource::resolve(&args.key)?;
    let archive = read_archive(&read_file(&args.input)?)
        .with_context(|| format!("{}", args.input.display()))?;
    let locator = args.layer.locator();
    let adapted = adapt_archive(&archive, &key, &locator)
        .with_context(|| format!("{}", args.input.display()))?;
    let bytes = write_archive(&adapted).context("serializing adapted model")?;
    write_file(&args.output, &bytes)?;
    let weight = adapted
        .get(&locator.weight_name)
        .expect("adapted archive keeps the weight");
    let summary = serde_json::json!({
        "out": args.output.display().to_string(),
        "weight": weight.name,
        "shape": weight.shape,
        "patch_size": adapted.metadata.get(patchcrypt::tensorarchive::META_PATCH_SIZE),
    });
    println!("{summary}");
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    require_exists(&args.model, "model")?;
    require_exists(&args.image, "image")?;
    if let Some(path) = &args.adapted_model {
        require_exists(path, "adapted model")?;
    }
    if args.tol.is_nan() || args.tol < 0.0 {
        return Err(usage("--tol must be non-negative"));
    }
    let key = keysource::resolve(&args.key)?;
    let norm = Normalization::uniform(args.norm_mean, args.norm_std);
    let locator = args.layer.locator();

    let load = |path: &Path| -> anyhow::Result<patchcrypt::PatchEmbedding> {
        let archive =
            read_archive(&read_file(path)?).with_context(|| format!("{}", path.display()))?;
        load_patch_embedding(&archive, &locator, norm)
            .with_context(|| format!("{}", path.display()))
    };
    let plain = load(&args.model)?;
    let image =
        read_ppm(&read_file(&args.image)?).with_context(|| format!("{}", args.image.display()))?;

    let report = match &args.adapted_model {
        None => patchcrypt::verify_equivariance(&plain, &key, &image, args.tol)
            .with_context(|| format!("{}", args.image.display()))?,
        Some(path) => {
            let adapted = load(path)?;
            if (adapted.dim(), adapted.patch_size()) != (plain.dim(), plain.patch_size()) {
                return Err(CliError::Data(anyhow!(
                    "{}: layer shape differs from the plain model",
                    path.display()
                )));
            }
            let expected = plain
                .forward(&image)
                .with_context(|| format!("{}", args.image.display()))?;
            let encrypted = encrypt_image(&image, &key, plain.patch_size())
                .with_context(|| format!("{}", args.image.display()))?;
            let actual = adapted
                .forward(&encrypted)
                .context("adapted forward pass")?;
            EquivalenceReport::compare(&expected, &actual, args.tol)
        }
    };
    println!("{}", report.to_json());
    if report.pass {
        Ok(())
    } else {
        Err(CliError::VerifyFailed)
    }
}

fn is_pgm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn stems(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for path in list_files(dir, is_pgm)? {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| anyhow!("{}: file name is not valid UTF-8", path.display()))?
            .to_string();
        out.insert(stem, path);
    }
    Ok(out)
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    for (dir, flag) in [(&args.gt, "--gt"), (&args.pred, "--pred")] {
        if !dir.is_dir() {
            return Err(usage(format!(
                "{flag} {} is not a directory",
                dir.display()
            )));
        }
    }
    if args.classes == 0 || args.classes > 255 {
        return Err(usage("--classes must be between 1 and 255"));
    }
    let gt = stems(&args.gt)?;
    let pred = stems(&args.pred)?;
    let unmatched: Vec<&String> = gt
        .keys()
        .filter(|k| !pred.contains_key(*k))
        .chain(pred.keys().filter(|k| !gt.contains_key(*k)))
        .collect();
    if !unmatched.is_empty() {
        return Err(CliError::Data(anyhow!(
            "unpaired label maps (by file stem): {}",
            unmatched
                .iter()
                .map(|s| s.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    if gt.is_empty() {
        return Err(CliError::Data(anyhow!(
            "no .pgm files in {}",
            args.gt.display()
        )));
    }

    let per_image: Vec<(String, anyhow::Result<ConfusionMatrix>)> = gt
        .par_iter()
        .map(|(stem, gt_path)| {
            let result = (|| {
                let g = read_pgm_labels(&read_file(gt_path)?)
                    .with_context(|| format!("{}", gt_path.display()))?;
                let pred_path = &pred[stem];
                let p = read_pgm_labels(&read_file(pred_path)?)
                    .with_context(|| format!("{}", pred_path.display()))?;
                let mut cm = ConfusionMatrix::with_ignore(args.classes, args.ignore)?;
                cm.accumulate(&g, &p)
                    .with_context(|| format!("{} vs {}", gt_path.display(), pred_path.display()))?;
                Ok(cm)
            })();
            (stem.clone(), result)
        })
        .collect();

    let mut total = ConfusionMatrix::with_ignore(args.classes, args.ignore).map_err(usage)?;
    let mut failed = 0;
    for (_, result) in &per_image {
        match result {
            Ok(cm) => total.merge(cm).map_err(anyhow::Error::from)?,
            Err(e) => {
                failed += 1;
                eprintln!("error: {e:#}");
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Data(anyhow!(
            "{failed} of {} image pairs failed",
            per_image.len()
        )));
    }
    let report = total
        .compute()
        .context("evaluating (every pixel was ignored)")?;
    print!("{}", report.table());
    let json = serde_json::json!({
        "images": per_image.len(),
        "pixels": total.total(),
        "aAcc": round2(report.aacc),
        "mAcc": round2(report.macc),
        "mIoU": round2(report.miou),
        "per_class_iou": report.per_class_iou.iter().map(|v| v.map(round2)).collect::<Vec<_>>(),
        "per_class_acc": report.per_class_acc.iter().map(|v| v.map(round2)).collect::<Vec<_>>(),
    });
    println!("{json}");
    Ok(())
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn inspect(args: &InspectArgs) -> Result<(), CliError> {
    require_exists(&args.path, "archive")?;
    let archive = read_archive(&read_file(&args.path)?)
        .with_context(|| format!("{}", args.path.display()))?;
    println!("{}: {} tensors", args.path.display(), archive.records.len());
    let mut sorted: Vec<_> = archive.records.iter().collect();
    sorted.sort_by(|a, b| a.name.cmp(&b.name));
    for r in sorted {
        println!(
            "  {:<40} {:<4} {:?} {} bytes",
            r.name,
            r.dtype,
            r.shape,
            r.data.len()
        );
    }
    for (k, v) in &archive.metadata {
        println!("  meta {k} = {v}");
    }
    Ok(())
}
