use std::path::Path;

use anyhow::Context;
use patchcrypt::SecretKey;

use crate::{usage, CliError, KeyArg, KEY_ENV};

/// Key file contents: 64 hex characters, optionally followed by one newline.
pub(crate) fn parse_key_file(text: &str) -> Result<SecretKey, patchcrypt::KeyError> {
    let line = text
        .strip_suffix("\r\n")
        .or_else(|| text.strip_suffix('\n'))
        .unwrap_or(text);
    SecretKey::parse_hex(line)
}

pub(crate) fn read_key_file(path: &Path) -> anyhow::Result<SecretKey> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading key file {}", path.display()))?;
    parse_key_file(&text).with_context(|| format!("key file {}", path.display()))
}

/// `--key` wins over `PATCHCRYPT_KEY`; one of the two is required.
pub(crate) fn resolve(arg: &KeyArg) -> Result<SecretKey, CliError> {
    if let Some(path) = &arg.key {
        if !path.is_file() {
            return Err(usage(format!("key file {} does not exist", path.display())));
        }
        return Ok(read_key_file(path)?);
    }
    match std::env::var(KEY_ENV) {
        Ok(value) => Ok(
            parse_key_file(&value).with_context(|| format!("environment variable {KEY_ENV}"))?
        ),
        Err(_) => Err(usage(format!(
            "no key given: pass --key <FILE> or set {KEY_ENV}"
        ))),
    }
}
