//! The aliasing transform and the enrollment store built around it.
//!
//! A capture is encoded, rotated with the deployment key and decoded into
//! an alias print. Only alias templates (and a digest of the alias image)
//! are ever stored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aligner::{apply, derive_rotation, AliasKey, Rotation, Timestamp};
use crate::encoder::{Embedding, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::imaging::{quality_proxy, GrayImage};
use crate::matcher::{decide, match_templates, Decision, MatchScore, DEFAULT_THRESHOLD};
use crate::minutiae::{extract, Template, MATCHER_READY};
use crate::synth::{SynthesisParams, Synthesizer};

pub const STORE_FORMAT: &str = "proxyprints-store/1";
pub const DEFAULT_QUALITY_FLOOR: u8 = 20;
/// Breach probes scoring above the match threshold but not above this one
/// are reported as near misses instead of alerts.
pub const DEFAULT_ALERT_THRESHOLD: u32 = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n: usize,
    pub threshold: u32,
    pub alert_threshold: u32,
    pub quality_floor: u8,
    pub synthesis: SynthesisParams,
    /// Keep alias images in the store next to their digests.
    #[serde(default)]
    pub retain_alias_images: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n: crate::encoder::DEFAULT_DIM,
            threshold: DEFAULT_THRESHOLD,
            alert_threshold: DEFAULT_ALERT_THRESHOLD,
            quality_floor: DEFAULT_QUALITY_FLOOR,
            synthesis: SynthesisParams::default(),
            retain_alias_images: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(8..=4096).contains(&self.n) {
            return Err(Error::Config(format!("dimension {} outside [8, 4096]", self.n)));
        }
        if self.alert_threshold < self.threshold {
            return Err(Error::Config("alert threshold below match threshold".into()));
        }
        if self.quality_floor > 100 {
            return Err(Error::Config("quality floor above 100".into()));
        }
        self.synthesis.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// `T(x) = De(R · En(x))` for one key.
#[derive(Clone, Debug)]
pub struct Transformer {
    key_id: String,
    cfg: PipelineConfig,
    encoder: Encoder,
    synth: Synthesizer,
    rotation: Rotation,
}

impl Transformer {
    pub fn new(key: &AliasKey, cfg: PipelineConfig) -> Result<Self> {
        let encoder = Encoder::new(EncoderConfig { n: cfg.n, ..Default::default() })?;
        Self::with_encoder(key, cfg, encoder)
    }

    /// Transformer around a caller-supplied encoder of matching dimension.
    pub fn with_encoder(key: &AliasKey, cfg: PipelineConfig, encoder: Encoder) -> Result<Self> {
        cfg.validate()?;
        if encoder.config().n != cfg.n {
            return Err(Error::DimensionMismatch { expected: cfg.n, actual: encoder.config().n });
        }
        let synth = Synthesizer::new(cfg.n, cfg.synthesis.clone())?;
        let rotation = derive_rotation(key, cfg.n)?;
        Ok(Self { key_id: key.key_id.clone(), cfg, encoder, synth, rotation })
    }

    pub fn key_id(&self) -> &str {
        &self.key_id
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn synthesizer(&self) -> &Synthesizer {
        &self.synth
    }

    /// Rotated embedding of a capture.
    pub fn aligned_embedding(&self, img: &GrayImage) -> Result<Embedding> {
        let quality = quality_proxy(img);
        if quality < self.cfg.quality_floor {
            return Err(Error::RejectedCapture { quality, floor: self.cfg.quality_floor });
        }
        let e = self.encoder.encode(&extract(img)?)?;
        // Renormalize to absorb rounding before the decoder's unit check.
        Embedding::normalized(apply(&self.rotation, &e)?.values().to_vec())
    }

    pub fn transform(&self, img: &GrayImage) -> Result<GrayImage> {
        self.synth.decode(&self.aligned_embedding(img)?)
    }

    /// The alias image and the template the backend stores for it.
    pub fn alias(&self, img: &GrayImage) -> Result<(GrayImage, Template)> {
        let alias = self.transform(img)?;
        let template = extract(&alias)?;
        Ok((alias, template))
    }
}

/// Transform with default settings.
pub fn transform(img: &GrayImage, key: &AliasKey) -> Result<GrayImage> {
    Transformer::new(key, PipelineConfig::default())?.transform(img)
}

/// SHA-256 over the dimensions and pixels, hex encoded.
pub fn image_digest(img: &GrayImage) -> String {
    let d = Sha256::new()
        .chain_update((img.width() as u32).to_le_bytes())
        .chain_update((img.height() as u32).to_le_bytes())
        .chain_update(img.pixels())
        .finalize();
    hex::encode(d)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub user_id: String,
    pub alias_template: Template,
    pub alias_image_digest: String,
    pub key_id: String,
    pub enrolled_at: Timestamp,
    pub stale: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alias_image: Option<StoredImage>,
}

/// Alias image kept in the store, pixels hex encoded row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredImage {
    pub width: usize,
    pub height: usize,
    pub pixels: String,
}

impl StoredImage {
    pub fn from_image(img: &GrayImage) -> Self {
        Self { width: img.width(), height: img.height(), pixels: hex::encode(img.pixels()) }
    }

    pub fn to_image(&self) -> Result<GrayImage> {
        let px = hex::decode(&self.pixels).map_err(|e| Error::Config(format!("stored image: {e}")))?;
        GrayImage::new(self.width, self.height, px)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub key_id: String,
    pub created_at: Timestamp,
    pub retired_at: Option<Timestamp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AliasStore {
    pub format: String,
    pub config: PipelineConfig,
    pub active_key_id: String,
    pub keys: Vec<KeyEntry>,
    pub records: BTreeMap<String, EnrollmentRecord>,
}

impl AliasStore {
    pub fn new(config: PipelineConfig, key: &AliasKey) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            format: STORE_FORMAT.into(),
            config,
            active_key_id: key.key_id.clone(),
            keys: alloc::vec![KeyEntry { key_id: key.key_id.clone(), created_at: key.created_at, retired_at: None }],
            records: BTreeMap::new(),
        })
    }

    /// Structural checks after loading.
    pub fn validate(&self) -> Result<()> {
        if self.format != STORE_FORMAT {
            return Err(Error::Config(format!("unsupported store format {:?}", self.format)));
        }
        self.config.validate()?;
        if !self.keys.iter().any(|k| k.key_id == self.active_key_id && k.retired_at.is_none()) {
            return Err(Error::Config(format!("active key {:?} is not registered", self.active_key_id)));
        }
        for (id, r) in &self.records {
            if *id != r.user_id {
                return Err(Error::Config(format!("record key {id:?} does not match user {:?}", r.user_id)));
            }
            if r.alias_template.len() < MATCHER_READY {
                return Err(Error::Config(format!("record {id:?} has too few minutiae")));
            }
            if !self.keys.iter().any(|k| k.key_id == r.key_id) {
                return Err(Error::UnknownKey(r.key_id.clone()));
            }
            if let Some(img) = &r.alias_image {
                if image_digest(&img.to_image()?) != r.alias_image_digest {
                    return Err(Error::Config(format!("record {id:?} image does not match its digest")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, user_id: &str) -> Option<&EnrollmentRecord> {
        self.records.get(user_id)
    }

    fn check_active(&self, tf: &Transformer) -> Result<()> {
        if tf.key_id() != self.active_key_id {
            return Err(Error::Config(format!("key {:?} is not the active key {:?}", tf.key_id(), self.active_key_id)));
        }
        if tf.config().n != self.config.n {
            return Err(Error::DimensionMismatch { expected: self.config.n, actual: tf.config().n });
        }
        Ok(())
    }

    /// Enrolls a capture. Existing live records are only replaced with
    /// `reenroll`; stale ones may always be replaced.
    pub fn enroll(
        &mut self,
        tf: &Transformer,
        user_id: &str,
        img: &GrayImage,
        now: Timestamp,
        reenroll: bool,
    ) -> Result<EnrollmentRecord> {
        self.check_active(tf)?;
        if user_id.is_empty() {
            return Err(Error::InvalidArgument("empty user id".into()));
        }
        if let Some(r) = self.records.get(user_id) {
            if !r.stale && !reenroll {
                return Err(Error::DuplicateUser(user_id.into()));
            }
        }
        let (alias, template) = tf.alias(img)?;
        let record = EnrollmentRecord {
            user_id: user_id.into(),
            alias_template: template,
            alias_image_digest: image_digest(&alias),
            key_id: tf.key_id().into(),
            enrolled_at: now,
            stale: false,
            alias_image: self.config.retain_alias_images.then(|| StoredImage::from_image(&alias)),
        };
        self.records.insert(user_id.into(), record.clone());
        Ok(record)
    }

    pub fn verify(&self, tf: &Transformer, user_id: &str, img: &GrayImage) -> Result<Verification> {
        let record = self.records.get(user_id).ok_or_else(|| Error::UnknownUser(user_id.into()))?;
        if record.stale {
            return Err(Error::StaleRecord(user_id.into()));
        }
        self.check_active(tf)?;
        let (_, probe) = tf.alias(img)?;
        let score = match_templates(&probe, &record.alias_template)?;
        Ok(Verification { decision: decide(score, self.config.threshold), score })
    }

    /// Live records whose alias matches the probe, best first.
    pub fn identify(&self, tf: &Transformer, img: &GrayImage) -> Result<Vec<(String, MatchScore)>> {
        self.check_active(tf)?;
        let (_, probe) = tf.alias(img)?;
        let mut hits = Vec::new();
        for r in self.records.values().filter(|r| !r.stale) {
            let score = match_templates(&probe, &r.alias_template)?;
            if decide(score, self.config.threshold) == Decision::Accept {
                hits.push((r.user_id.clone(), score));
            }
        }
        hits.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(hits)
    }

    /// Matches an untransformed probe against every stored alias, stale
    /// ones included. A hit above the alert threshold means a stored alias
    /// was presented without passing through the transform.
    pub fn detect_breach(&self, img: &GrayImage, now: Timestamp) -> BreachCheck {
        let mut check = BreachCheck { alert: None, near_misses: Vec::new() };
        if self.records.is_empty() {
            return check;
        }
        let probe = match extract(img) {
            Ok(t) => t,
            Err(_) => return check,
        };
        let mut best: Option<(&EnrollmentRecord, MatchScore)> = None;
        for r in self.records.values() {
            let Ok(score) = match_templates(&probe, &r.alias_template) else { continue };
            if score.value() > self.config.alert_threshold {
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((r, score));
                }
            } else if score.value() > self.config.threshold {
                check.near_misses.push((r.user_id.clone(), score));
            }
        }
        check.alert = best.map(|(r, score)| BreachAlert {
            user_id: r.user_id.clone(),
            score,
            probe_digest: image_digest(img),
            raised_at: now,
        });
        check
    }

    /// Retires `old`, activates `new` and marks every record under `old`
    /// stale. Nothing is re-derived beyond the new key's rotation.
    pub fn rotate_key(&mut self, old: &AliasKey, new: &AliasKey, now: Timestamp) -> Result<RotationManifest> {
        if old.key_id == new.key_id {
            return Err(Error::Config("new key id must differ from the old one".into()));
        }
        if old.key_id != self.active_key_id {
            return Err(Error::UnknownKey(old.key_id.clone()));
        }
        if self.keys.iter().any(|k| k.key_id == new.key_id) {
            return Err(Error::Config(format!("key id {:?} was used before", new.key_id)));
        }
        let mut users = Vec::new();
        for r in self.records.values_mut() {
            if r.key_id == old.key_id {
                r.stale = true;
                users.push(r.user_id.clone());
            }
        }
        for k in self.keys.iter_mut().filter(|k| k.key_id == old.key_id) {
            k.retired_at = Some(now);
        }
        self.keys.push(KeyEntry { key_id: new.key_id.clone(), created_at: new.created_at, retired_at: None });
        self.active_key_id = new.key_id.clone();
        Ok(RotationManifest { old_key_id: old.key_id.clone(), new_key_id: new.key_id.clone(), rotated_at: now, users })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub decision: Decision,
    pub score: MatchScore,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreachAlert {
    pub user_id: String,
    pub score: MatchScore,
    pub probe_digest: String,
    pub raised_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreachCheck {
    pub alert: Option<BreachAlert>,
    /// Matches above the decision threshold that stay below the alert
    /// threshold; logged, not raised.
    pub near_misses: Vec<(String, MatchScore)>,
}

/// Users who must re-enroll after a key rotation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationManifest {
    pub old_key_id: String,
    pub new_key_id: String,
    pub rotated_at: Timestamp,
    pub users: Vec<String>,
}
