//! Store persistence and the audit log.
//!
//! The store is one JSON document replaced by write-then-rename, so a crash
//! leaves either the old or the new version. Audit events are appended as
//! JSON lines.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use proxyprints_core::aligner::Timestamp;
use proxyprints_core::matcher::MatchScore;
use proxyprints_core::pipeline::{AliasStore, BreachAlert, RotationManifest};
use serde::{Deserialize, Serialize};

pub fn load_store(path: &Path) -> Result<AliasStore> {
    let text = fs::read_to_string(path).with_context(|| format!("reading store {}", path.display()))?;
    let store: AliasStore = serde_json::from_str(&text).with_context(|| format!("parsing store {}", path.display()))?;
    store.validate().with_context(|| format!("store {}", path.display()))?;
    Ok(store)
}

pub fn save_store(path: &Path, store: &AliasStore) -> Result<()> {
    let json = serde_json::to_vec_pretty(store)?;
    write_atomic(path, &json)
}

/// Writes to a temporary file in the target directory, syncs it and
/// renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("replacing {}", path.display()))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum AuditEvent {
    BreachAlert(BreachAlert),
    NearMiss { user_id: String, score: MatchScore, probe_digest: String, at: Timestamp },
    KeyRotated(RotationManifest),
}

pub fn append_audit(path: &Path, events: &[AuditEvent]) -> Result<()> {
    if events.is_empty() {
        return Ok(());
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening audit log {}", path.display()))?;
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    f.write_all(&buf)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_audit(path: &Path) -> Result<Vec<AuditEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading audit log {}", path.display()))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proxyprints_core::aligner::AliasKey;
    use proxyprints_core::pipeline::PipelineConfig;

    #[test]
    fn store_round_trip_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("store.json");
        let store = AliasStore::new(PipelineConfig::default(), &AliasKey::from_seed(1, "alpha")).unwrap();
        save_store(&p, &store).unwrap();
        save_store(&p, &store).unwrap();
        assert_eq!(load_store(&p).unwrap(), store);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("store.json")]);
        assert!(fs::read_to_string(&p).unwrap().contains("\"format\": \"proxyprints-store/1\""));
    }

    #[test]
    fn audit_log_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audit.jsonl");
        let alert = BreachAlert {
            user_id: "u1".into(),
            score: MatchScore(90),
            probe_digest: "ab".into(),
            raised_at: Timestamp(1_700_000_000),
        };
        append_audit(&p, &[AuditEvent::BreachAlert(alert.clone())]).unwrap();
        append_audit(&p, &[AuditEvent::NearMiss { user_id: "u2".into(), score: MatchScore(45), probe_digest: "cd".into(), at: Timestamp(0) }])
            .unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"event\":\"breach_alert\""));
        assert!(text.contains("2023-11-14T22:13:20Z"));
        assert_eq!(read_audit(&p).unwrap()[0], AuditEvent::BreachAlert(alert));
    }
}
