//! The `proxyprints` command line.
//!
//! Exit codes: 0 success, 2 reject outcome (verification or identification
//! rejected, breach alert raised, non-matching templates), 1 error, 64
//! usage error.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use proxyprints_core::aligner::{derive_rotation, AliasKey};
use proxyprints_core::error::Error as CoreError;
use proxyprints_core::evalkit::{default_planes, median, metrics, DEFAULT_COARSE_STEP_DEG, DEFAULT_PLANES, SCAN_RESOLUTION_DEG};
use proxyprints_core::matcher::{decide, match_templates, Decision};
use proxyprints_core::minutiae::{extract, render_template, MinutiaKind, DEFAULT_DOT_RADIUS, DEFAULT_TAIL_LEN};
use proxyprints_core::moldgen::{
    heightfield_to_mold, image_to_heightfield, stl_bytes, DEFAULT_BASE_MM, DEFAULT_BORDER_MM, DEFAULT_DEPTH_MM,
    DEFAULT_PITCH_MM, DEFAULT_RIM_HEIGHT_MM,
};
use proxyprints_core::pipeline::{image_digest, AliasStore, BreachCheck, Transformer};
use proxyprints_core::synth::Synthesizer;
use serde_json::{json, Value};

use crate::config::Config;
use crate::corpus::{self, CorpusManifest};
use crate::formats::{load_capture, load_template, save_gray, save_rgb, save_template, write_file};
use crate::harness;
use crate::keys::{load_key, now, resolve_key_path};
use crate::report::{export_report, Report, DEFAULT_BIN_WIDTH};
use crate::store::{append_audit, load_store, save_store, AuditEvent};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "proxyprints", version, about = "Cancellable fingerprint aliases: transform, enroll, verify, detect breaches, evaluate")]
pub struct Cli {
    /// Print machine-readable JSON on standard output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Alias store file.
    #[arg(long, global = true, value_name = "FILE")]
    pub store: Option<PathBuf>,
    /// Key file; falls back to the config, then PROXYPRINTS_KEY_FILE.
    #[arg(long, global = true, value_name = "FILE")]
    pub key: Option<PathBuf>,
    /// Worker threads for batch work.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Seed for corpus generation and random trials.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Embedding dimension.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Match threshold; scores above it accept.
    #[arg(long, global = true)]
    pub threshold: Option<u32>,
    /// Breach probes must score above this to raise an alert.
    #[arg(long, global = true)]
    pub alert_threshold: Option<u32>,
    /// Minimum capture quality (0 to 100).
    #[arg(long, global = true)]
    pub quality_floor: Option<u8>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct Capture {
    /// Input PNG.
    #[arg(long, alias = "in", value_name = "PNG")]
    pub input: PathBuf,
    /// Crop to the finger contour before processing.
    #[arg(long)]
    pub contour_crop: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus: identity_<seed>/impression_<k>.png plus a manifest.
    GenCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        identities: usize,
        #[arg(long, default_value_t = 5)]
        impressions: usize,
    },
    /// Extract a minutiae template (JSON, or PPT1 for a .ppt output).
    Extract {
        #[command(flatten)]
        capture: Capture,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match two template files.
    Match { a: PathBuf, b: PathBuf },
    /// Draw a template as an RGB minutiae image.
    RenderTemplate {
        #[arg(long)]
        template: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DOT_RADIUS)]
        dot_radius: f64,
        #[arg(long, default_value_t = DEFAULT_TAIL_LEN)]
        tail_len: f64,
    },
    /// Turn a capture into its alias print.
    Transform {
        #[command(flatten)]
        capture: Capture,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll a user's alias in the store.
    Enroll {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        capture: Capture,
        /// Replace an existing live record.
        #[arg(long)]
        reenroll: bool,
    },
    /// Verify a capture against a user's record; rejected probes are
    /// checked for a breach afterwards.
    Verify {
        #[arg(long)]
        user: String,
        #[command(flatten)]
        capture: Capture,
    },
    /// Find every live record that accepts the capture.
    Identify {
        #[command(flatten)]
        capture: Capture,
    },
    /// Match an untransformed probe against every stored alias.
    DetectBreach {
        #[command(flatten)]
        capture: Capture,
    },
    /// Switch the store to a new key and mark existing records stale.
    RotateKey {
        /// Current key; defaults to the regular key file.
        #[arg(long)]
        old_key: Option<PathBuf>,
        #[arg(long)]
        new_key: PathBuf,
    },
    /// Build a negative mold as binary STL.
    MakeMold {
        #[arg(long, alias = "in", value_name = "PNG")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH_MM)]
        depth_mm: f64,
        /// Rim width around the relief.
        #[arg(long, default_value_t = DEFAULT_BORDER_MM)]
        border_mm: f64,
        /// Rim height above the highest relief point.
        #[arg(long, default_value_t = DEFAULT_RIM_HEIGHT_MM)]
        border_height_mm: f64,
        #[arg(long, default_value_t = DEFAULT_BASE_MM)]
        base_mm: f64,
        #[arg(long, default_value_t = DEFAULT_PITCH_MM)]
        pitch_mm: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score genuine and impostor alias pairs over a corpus.
    Eval(EvalArgs),
    /// Measure identity spans along coordinate planes of the embedding space.
    BoundaryScan(ScanArgs),
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Corpus directory; a corpus is generated from --seed when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub identities: usize,
    #[arg(long, default_value_t = 5)]
    pub impressions: usize,
    /// Report directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Further keys for a cross-key matrix (repeatable).
    #[arg(long = "cross-key", value_name = "FILE")]
    pub cross_keys: Vec<PathBuf>,
    /// Also score the raw captures without the transform.
    #[arg(long)]
    pub baseline: bool,
    /// Pipeline AUC as the encoder's reference corpus grows.
    #[arg(long)]
    pub learning_curve: bool,
    #[arg(long, default_value_t = 3)]
    pub repeats: u64,
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    pub bin_width: u32,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    /// Number of planes (0,1), (1,2), ...
    #[arg(long, default_value_t = DEFAULT_PLANES)]
    pub planes: usize,
    #[arg(long, default_value_t = DEFAULT_COARSE_STEP_DEG)]
    pub coarse_step: f64,
    /// Random single-plane rotation trials.
    #[arg(long, default_value_t = 30)]
    pub trials: usize,
    #[arg(long, default_value_t = 10.0)]
    pub delta_deg: f64,
    /// Scan through the key's rotation instead of raw embedding space.
    #[arg(long)]
    pub keyed: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Result of a subcommand: JSON payload, human text and exit code.
struct Outcome {
    value: Value,
    text: String,
    code: i32,
}

impl Outcome {
    fn ok(value: Value, text: impl Into<String>) -> Self {
        Self { value, text: text.into(), code: EXIT_OK }
    }

    fn reject_if(mut self, reject: bool) -> Self {
        if reject {
            self.code = EXIT_REJECT;
        }
        self
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", out.value);
            } else if !out.text.is_empty() {
                println!("{}", out.text);
            }
            out.code
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            }
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    let p = &mut c.pipeline;
    if let Some(v) = cli.n {
        p.n = v;
    }
    if let Some(v) = cli.threshold {
        p.threshold = v;
    }
    if let Some(v) = cli.alert_threshold {
        p.alert_threshold = v;
    }
    if let Some(v) = cli.quality_floor {
        p.quality_floor = v;
    }
    if let Some(s) = &cli.store {
        c.store = Some(s.clone());
    }
    if let Some(k) = &cli.key {
        c.key_file = Some(k.clone());
    }
    c.validate()?;
    Ok(c)
}

fn key_of(c: &Config) -> Result<AliasKey> {
    load_key(&resolve_key_path(None, c.key_file.as_deref())?)
}

fn open_store(c: &Config) -> Result<AliasStore> {
    let path = c.store_path();
    ensure!(path.exists(), "store {} does not exist; enroll someone first", path.display());
    load_store(&path)
}

/// Transformer for the store's active key, which must be the loaded key.
fn store_transformer(store: &AliasStore, key: &AliasKey) -> Result<Transformer> {
    ensure!(
        key.key_id == store.active_key_id,
        "key {:?} is not the store's active key {:?}",
        key.key_id,
        store.active_key_id
    );
    Ok(Transformer::new(key, store.config.clone())?)
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let c = load_config(cli)?;
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::GenCorpus { out, identities, impressions } => {
            let m = CorpusManifest::new(c.pipeline.n, (seed..seed + *identities as u64).collect(), *impressions, c.pipeline.synthesis.clone());
            harness::with_jobs(cli.jobs, || -> Result<()> {
                let ids = corpus::generate(&m)?;
                corpus::write(out, &m, &ids)
            })??;
            Ok(Outcome::ok(
                json!({ "out": out, "identities": identities, "impressions": impressions, "seed": seed }),
                format!("wrote {identities} identities x {impressions} impressions to {}", out.display()),
            ))
        }
        Command::Extract { capture, out } => {
            let img = load_capture(&capture.input, capture.contour_crop)?;
            let t = extract(&img)?;
            save_template(out, &t)?;
            let terminations = t.minutiae().iter().filter(|m| m.kind == MinutiaKind::Termination).count();
            Ok(Outcome::ok(
                json!({ "out": out, "minutiae": t.len(), "terminations": terminations, "bifurcations": t.len() - terminations }),
                format!("{} minutiae ({terminations} terminations) written to {}", t.len(), out.display()),
            ))
        }
        Command::Match { a, b } => {
            let score = match_templates(&load_template(a)?, &load_template(b)?)?;
            let decision = decide(score, c.pipeline.threshold);
            Ok(Outcome::ok(json!({ "score": score, "decision": decision }), format!("{score} {}", decision_word(decision)))
                .reject_if(decision == Decision::Reject))
        }
        Command::RenderTemplate { template, out, dot_radius, tail_len } => {
            let t = load_template(template)?;
            save_rgb(out, &render_template(&t, *dot_radius, *tail_len))?;
            Ok(Outcome::ok(json!({ "out": out, "minutiae": t.len() }), format!("rendered {} minutiae to {}", t.len(), out.display())))
        }
        Command::Transform { capture, out } => {
            let key = key_of(&c)?;
            let img = load_capture(&capture.input, capture.contour_crop)?;
            let alias = Transformer::new(&key, c.pipeline.clone())?.transform(&img)?;
            save_gray(out, &alias)?;
            let digest = image_digest(&alias);
            Ok(Outcome::ok(
                json!({ "out": out, "key_id": key.key_id, "alias_image_digest": digest }),
                format!("alias written to {} (sha256 {digest})", out.display()),
            ))
        }
        Command::Enroll { user, capture, reenroll } => {
            let key = key_of(&c)?;
            let path = c.store_path();
            let mut store = if path.exists() { load_store(&path)? } else { AliasStore::new(c.pipeline.clone(), &key)? };
            let tf = store_transformer(&store, &key)?;
            let img = load_capture(&capture.input, capture.contour_crop)?;
            let r = store.enroll(&tf, user, &img, now(), *reenroll)?;
            save_store(&path, &store)?;
            Ok(Outcome::ok(
                json!({
                    "user_id": r.user_id,
                    "key_id": r.key_id,
                    "minutiae": r.alias_template.len(),
                    "alias_image_digest": r.alias_image_digest,
                    "enrolled_at": r.enrolled_at,
                }),
                format!("enrolled {} under key {} ({} alias minutiae)", r.user_id, r.key_id, r.alias_template.len()),
            ))
        }
        Command::Verify { user, capture } => {
            let store = open_store(&c)?;
            let key = key_of(&c)?;
            let tf = store_transformer(&store, &key)?;
            let img = load_capture(&capture.input, capture.contour_crop)?;
            match store.verify(&tf, user, &img) {
                Ok(v) if v.decision == Decision::Accept => Ok(Outcome::ok(
                    json!({ "user_id": user, "decision": v.decision, "score": v.score }),
                    format!("{} accept", v.score),
                )),
                Ok(v) => {
                    let check = store.detect_breach(&img, now());
                    log_breach(&c, &check, &img)?;
                    let mut text = format!("{} reject", v.score);
                    if let Some(a) = &check.alert {
                        text += &format!("\nbreach alert: probe matches stored alias of {} (score {})", a.user_id, a.score);
                    }
                    Ok(Outcome::ok(
                        json!({ "user_id": user, "decision": v.decision, "score": v.score, "breach": check }),
                        text,
                    )
                    .reject_if(true))
                }
                Err(CoreError::StaleRecord(u)) => Ok(Outcome::ok(
                    json!({ "user_id": u, "decision": Decision::Reject, "reenroll_required": true }),
                    format!("reject: record for {u} is stale, re-enrollment required"),
                )
                .reject_if(true)),
                Err(e) => Err(e.into()),
            }
        }
        Command::Identify { capture } => {
            let store = open_store(&c)?;
            let tf = store_transformer(&store, &key_of(&c)?)?;
            let img = load_capture(&capture.input, capture.contour_crop)?;
            let hits = store.identify(&tf, &img)?;
            let text = if hits.is_empty() {
                "no match".to_string()
            } else {
                hits.iter().map(|(u, s)| format!("{u} {s}")).collect::<Vec<_>>().join("\n")
            };
            let value = json!({ "matches": hits.iter().map(|(u, s)| json!({ "user_id": u, "score": s })).collect::<Vec<_>>() });
            Ok(Outcome::ok(value, text).reject_if(hits.is_empty()))
        }
        Command::DetectBreach { capture } => {
            let store = open_store(&c)?;
            let img = load_capture(&capture.input, capture.contour_crop)?;
            let check = store.detect_breach(&img, now());
            log_breach(&c, &check, &img)?;
            let text = match &check.alert {
                Some(a) => format!("ALERT: probe matches stored alias of {} (score {})", a.user_id, a.score),
                None => format!("no alert ({} near misses)", check.near_misses.len()),
            };
            let alert = check.alert.is_some();
            Ok(Outcome::ok(serde_json::to_value(&check)?, text).reject_if(alert))
        }
        Command::RotateKey { old_key, new_key } => {
            let old = match old_key {
                Some(p) => load_key(p)?,
                None => key_of(&c)?,
            };
            let new = load_key(new_key)?;
            let mut store = open_store(&c)?;
            let manifest = store.rotate_key(&old, &new, now())?;
            save_store(&c.store_path(), &store)?;
            append_audit(&c.audit_path(), &[AuditEvent::KeyRotated(manifest.clone())])?;
            let text = format!(
                "rotated {} -> {}; {} user(s) must re-enroll{}",
                manifest.old_key_id,
                manifest.new_key_id,
                manifest.users.len(),
                manifest.users.iter().map(|u| format!("\n  {u}")).collect::<String>()
            );
            Ok(Outcome::ok(serde_json::to_value(&manifest)?, text))
        }
        Command::MakeMold { input, depth_mm, border_mm, border_height_mm, base_mm, pitch_mm, out } => {
            let img = crate::formats::load_gray(input)?;
            let hf = image_to_heightfield(&img, *depth_mm, *pitch_mm)?;
            let mesh = heightfield_to_mold(&hf, *border_height_mm, *border_mm, *base_mm)?;
            mesh.validate()?;
            let bytes = stl_bytes(&mesh);
            write_file(out, &bytes)?;
            let (fw, fh) = hf.footprint_mm();
            Ok(Outcome::ok(
                json!({
                    "out": out,
                    "triangles": mesh.triangles.len(),
                    "vertices": mesh.vertices.len(),
                    "bytes": bytes.len(),
                    "relief_footprint_mm": [fw, fh],
                    "relief_range_mm": hf.relief_range(),
                }),
                format!("{} triangles, relief {fw:.2} x {fh:.2} mm, written to {}", mesh.triangles.len(), out.display()),
            ))
        }
        Command::Eval(args) => eval(cli, &c, seed, args),
        Command::BoundaryScan(args) => boundary(cli, &c, seed, args),
    }
}

fn decision_word(d: Decision) -> &'static str {
    match d {
        Decision::Accept => "accept",
        Decision::Reject => "reject",
    }
}

fn log_breach(c: &Config, check: &BreachCheck, probe: &proxyprints_core::GrayImage) -> Result<()> {
    let mut events: Vec<AuditEvent> = check.alert.iter().cloned().map(AuditEvent::BreachAlert).collect();
    let at = now();
    let digest = image_digest(probe);
    events.extend(check.near_misses.iter().map(|(u, s)| AuditEvent::NearMiss {
        user_id: u.clone(),
        score: *s,
        probe_digest: digest.clone(),
        at,
    }));
    append_audit(&c.audit_path(), &events)
}

fn eval(cli: &Cli, c: &Config, seed: u64, args: &EvalArgs) -> Result<Outcome> {
    let key = key_of(c)?;
    let cross: Vec<AliasKey> = args.cross_keys.iter().map(|p| load_key(p)).collect::<Result<_>>()?;
    let report = harness::with_jobs(cli.jobs, || -> Result<Report> {
        let ids = match &args.corpus {
            Some(dir) => corpus::read(dir)?.1,
            None => {
                let seeds = (seed..seed + args.identities as u64).collect();
                corpus::generate(&CorpusManifest::new(c.pipeline.n, seeds, args.impressions, c.pipeline.synthesis.clone()))?
            }
        };
        ensure!(ids.iter().all(|id| id.impressions.len() >= 2), "every identity needs at least two impressions");
        let tf = Transformer::new(&key, c.pipeline.clone())?;
        let mut r = Report::new(c.clone(), c.pipeline.threshold, harness::scores_of(&harness::alias_templates(&tf, &ids)));
        r.bin_width = args.bin_width;
        if args.baseline {
            r.baseline = metrics(&harness::scores_of(&harness::raw_templates(&ids)), c.pipeline.threshold).ok();
        }
        if !cross.is_empty() {
            let mut tfs = vec![tf];
            for k in &cross {
                tfs.push(Transformer::new(k, c.pipeline.clone())?);
            }
            r.cross_key = Some(harness::cross_key(&tfs, &ids)?);
        }
        if args.learning_curve {
            r.learning_curve = harness::learning_curve(&key, &c.pipeline, &ids, &harness::LEARNING_SIZES, args.repeats)?;
        }
        Ok(r)
    })??;
    if let Some(dir) = &args.out {
        export_report(dir, &report)?;
    }
    let mut text = format!("{} genuine, {} impostor scores", report.scores.genuine.len(), report.scores.impostor.len());
    if let Some(m) = &report.metrics {
        text += &format!(
            "\nauc {:.4} eer {:.4} accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            m.roc_auc, m.eer, m.accuracy, m.precision, m.recall, m.f1
        );
    }
    if let Some(m) = &report.cross_key {
        for i in 0..m.size() {
            text += &format!("\n{}", (0..m.size()).map(|j| format!("{:7.1}", m.at(i, j))).collect::<String>());
        }
    }
    for p in &report.learning_curve {
        text += &format!("\ncorpus {:4}: mean auc {:.4}", p.corpus_size, p.mean_auc);
    }
    let value = json!({
        "config": c,
        "metrics": report.metrics,
        "baseline": report.baseline,
        "cross_key": report.cross_key,
        "learning_curve": report.learning_curve,
        "genuine": report.scores.genuine.len(),
        "impostor": report.scores.impostor.len(),
    });
    Ok(Outcome::ok(value, text))
}

fn boundary(cli: &Cli, c: &Config, seed: u64, args: &ScanArgs) -> Result<Outcome> {
    if args.planes == 0 || args.planes + 1 > c.pipeline.n {
        bail!("plane count must be between 1 and n - 1");
    }
    let rotation = if args.keyed { Some(derive_rotation(&key_of(c)?, c.pipeline.n)?) } else { None };
    let synth = Synthesizer::new(c.pipeline.n, c.pipeline.synthesis.clone())?;
    let threshold = c.pipeline.threshold;
    let (scans, trials) = harness::with_jobs(cli.jobs, || -> Result<_> {
        let scans = harness::boundary_scans(&synth, &default_planes(args.planes), args.coarse_step, threshold, rotation.as_ref())?;
        let trials = harness::single_axis_trials(&synth, args.trials, args.delta_deg, args.planes, seed)?;
        Ok((scans, trials))
    })??;
    let spans: Vec<f64> = scans.iter().flat_map(|s| s.spans.iter().copied()).collect();
    let median_span = median(&spans).context("no spans")?;
    let changed = trials.iter().filter(|&&s| s <= threshold).count();
    let worst_partition = scans.iter().map(|s| (s.spans.iter().sum::<f64>() - 360.0).abs()).fold(0.0, f64::max);
    if let Some(dir) = &args.out {
        let mut r = Report::new(c.clone(), threshold, Default::default());
        r.boundary = scans.clone();
        export_report(dir, &r)?;
    }
    let mut text = scans
        .iter()
        .map(|s| format!("plane ({}, {}): {} identities, median span {:.2} deg", s.plane.0, s.plane.1, s.identity_count(), median(&s.spans).unwrap_or(360.0)))
        .collect::<Vec<_>>()
        .join("\n");
    text += &format!("\nmedian identity span {median_span:.2} deg (resolution {SCAN_RESOLUTION_DEG} deg)");
    text += &format!("\nsingle-plane {} deg rotation changed identity in {changed}/{} trials", args.delta_deg, trials.len());
    let value = json!({
        "config": c,
        "scans": scans,
        "median_span_deg": median_span,
        "partition_error_deg": worst_partition,
        "trial_scores": trials,
        "trials_changed": changed,
    });
    Ok(Outcome::ok(value, text))
}

/// Convenience for tests and scripts: run with string arguments.
pub fn run_strs(args: &[&str]) -> i32 {
    run(std::iter::once("proxyprints").chain(args.iter().copied()))
}
