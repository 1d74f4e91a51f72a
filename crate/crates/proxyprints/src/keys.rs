//! Key files: 32 raw secret bytes or 64 hex characters, with the key id in
//! a sidecar file next to it (`<key file>.id`). The secret is never
//! printed or logged.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use anyhow::{bail, Context, Result};
use proxyprints_core::aligner::{AliasKey, Timestamp};

pub const KEY_FILE_ENV: &str = "PROXYPRINTS_KEY_FILE";

pub fn sidecar_path(key_path: &Path) -> PathBuf {
    let mut s = key_path.as_os_str().to_owned();
    s.push(".id");
    PathBuf::from(s)
}

pub fn parse_secret(bytes: &[u8]) -> Result<[u8; 32]> {
    if let Ok(raw) = <[u8; 32]>::try_from(bytes) {
        return Ok(raw);
    }
    let text = std::str::from_utf8(bytes).ok().map(str::trim).unwrap_or_default();
    if text.len() == 64 {
        let mut out = [0u8; 32];
        if hex::decode_to_slice(text, &mut out).is_ok() {
            return Ok(out);
        }
    }
    bail!("key file must hold 32 raw bytes or 64 hex characters")
}

/// Loads a key; its creation time is the key file's modification time.
pub fn load_key(path: &Path) -> Result<AliasKey> {
    let bytes = fs::read(path).with_context(|| format!("reading key file {}", path.display()))?;
    let secret = parse_secret(&bytes).with_context(|| format!("key file {}", path.display()))?;
    let id_path = sidecar_path(path);
    let key_id = fs::read_to_string(&id_path)
        .with_context(|| format!("reading key id sidecar {}", id_path.display()))?
        .trim()
        .to_string();
    let created = fs::metadata(path)?.modified().unwrap_or(SystemTime::UNIX_EPOCH);
    Ok(AliasKey::new(secret, key_id, timestamp_of(created))?)
}

/// Writes a hex key file and its sidecar.
pub fn write_key(path: &Path, secret: &[u8; 32], key_id: &str) -> Result<()> {
    fs::write(path, hex::encode(secret) + "\n").with_context(|| format!("writing key file {}", path.display()))?;
    fs::write(sidecar_path(path), format!("{key_id}\n"))?;
    Ok(())
}

/// The explicit path, else the configured one, else the environment.
pub fn resolve_key_path(flag: Option<&Path>, config: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = flag.or(config) {
        return Ok(p.to_path_buf());
    }
    match std::env::var_os(KEY_FILE_ENV) {
        Some(p) if !p.is_empty() => Ok(PathBuf::from(p)),
        _ => bail!("no key file given (use --key, key_file in the config, or {KEY_FILE_ENV})"),
    }
}

pub fn timestamp_of(t: SystemTime) -> Timestamp {
    Timestamp(t.duration_since(SystemTime::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64))
}

pub fn now() -> Timestamp {
    timestamp_of(SystemTime::now())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_and_hex_secrets() {
        let raw: Vec<u8> = (0..32).collect();
        assert_eq!(parse_secret(&raw).unwrap().to_vec(), raw);
        let hexed = hex::encode(&raw) + "\n";
        assert_eq!(parse_secret(hexed.as_bytes()).unwrap().to_vec(), raw);
        assert!(parse_secret(&raw[..31]).is_err());
        assert!(parse_secret("zz".repeat(32).as_bytes()).is_err());
    }

    #[test]
    fn key_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("k.key");
        write_key(&p, &[7u8; 32], "alpha").unwrap();
        let k = load_key(&p).unwrap();
        assert_eq!(k.key_id, "alpha");
        assert_eq!(k.secret(), &[7u8; 32]);
        assert!(!format!("{k:?}").contains("0707"));
    }
}
