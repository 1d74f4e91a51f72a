//! Synthetic identity corpora on disk: `identity_<seed>/impression_<k>.png`
//! plus `manifest.json` recording the seeds and generation parameters.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use proxyprints_core::imaging::GrayImage;
use proxyprints_core::synth::{generate_identity_with, ImpressionModel, SynthesisParams, Synthesizer};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formats::{load_gray, png_gray_bytes, write_file};

pub const MANIFEST: &str = "manifest.json";
pub const CORPUS_FORMAT: &str = "proxyprints-corpus/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub n: usize,
    pub seeds: Vec<u64>,
    pub impressions: usize,
    pub impression_model: ImpressionModel,
    pub synthesis: SynthesisParams,
}

impl CorpusManifest {
    pub fn new(n: usize, seeds: Vec<u64>, impressions: usize, synthesis: SynthesisParams) -> Self {
        Self { format: CORPUS_FORMAT.into(), n, seeds, impressions, impression_model: ImpressionModel::default(), synthesis }
    }
}

/// Impressions of one synthetic finger.
#[derive(Clone, Debug)]
pub struct CorpusIdentity {
    pub seed: u64,
    pub impressions: Vec<GrayImage>,
}

/// Generates the identities in parallel; output order follows `seeds`.
pub fn generate(m: &CorpusManifest) -> Result<Vec<CorpusIdentity>> {
    let synth = Synthesizer::new(m.n, m.synthesis.clone())?;
    m.seeds
        .par_iter()
        .map(|&seed| {
            let id = generate_identity_with(&synth, &m.impression_model, seed, m.impressions)?;
            Ok(CorpusIdentity { seed, impressions: id.impressions })
        })
        .collect()
}

pub fn impression_path(dir: &Path, seed: u64, k: usize) -> PathBuf {
    dir.join(format!("identity_{seed}")).join(format!("impression_{k}.png"))
}

pub fn write(dir: &Path, m: &CorpusManifest, ids: &[CorpusIdentity]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let encoded: Vec<(PathBuf, Vec<u8>)> = ids
        .par_iter()
        .flat_map_iter(|id| id.impressions.iter().enumerate().map(move |(k, img)| (id.seed, k, img)))
        .map(|(seed, k, img)| Ok((impression_path(dir, seed, k), png_gray_bytes(img)?)))
        .collect::<Result<_>>()?;
    for (path, bytes) in encoded {
        fs::create_dir_all(path.parent().expect("impression paths have a parent"))?;
        write_file(&path, &bytes)?;
    }
    write_file(&dir.join(MANIFEST), serde_json::to_string_pretty(m)?.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
    let m: CorpusManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    ensure!(m.format == CORPUS_FORMAT, "unsupported corpus format {:?}", m.format);
    Ok(m)
}

pub fn read(dir: &Path) -> Result<(CorpusManifest, Vec<CorpusIdentity>)> {
    let m = read_manifest(dir)?;
    let ids = m
        .seeds
        .par_iter()
        .map(|&seed| {
            let impressions = (0..m.impressions).map(|k| load_gray(&impression_path(dir, seed, k))).collect::<Result<_>>()?;
            Ok(CorpusIdentity { seed, impressions })
        })
        .collect::<Result<_>>()?;
    Ok((m, ids))
}
