use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proxyprints::keys::write_key;

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        let env = Self { dir: tempfile::tempdir().unwrap() };
        write_key(&env.path("k1"), &[7; 32], "k1").unwrap();
        write_key(&env.path("k2"), &[9; 32], "k2").unwrap();
        env
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run<A: AsRef<OsStr>>(&self, args: &[A]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_proxyprints"))
            .args(args)
            .current_dir(self.dir.path())
            .env_remove("PROXYPRINTS_KEY_FILE")
            .output()
            .unwrap()
    }

    fn corpus(&self, identities: &str, impressions: &str) {
        let out = self.run(&["--seed", "3", "gen-corpus", "--out", "c", "--identities", identities, "--impressions", impressions]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn impression(seed: u64, k: usize) -> String {
    format!("c/identity_{seed}/impression_{k}.png")
}

#[test]
fn matching_identical_templates_accepts() {
    let env = Env::new();
    env.corpus("1", "1");
    assert_eq!(code(&env.run(&["extract", "--input", &impression(3, 0), "--out", "a.json"])), 0);
    let out = env.run(&["match", "a.json", "a.json"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut words = text.split_whitespace();
    assert!(words.next().unwrap().parse::<u32>().unwrap() > 40);
    assert_eq!(words.next(), Some("accept"));
    let json: serde_json::Value = serde_json::from_slice(&env.run(&["--json", "match", "a.json", "a.json"]).stdout).unwrap();
    assert_eq!(json["decision"], "accept");
}

#[test]
fn binary_and_json_templates_agree() {
    let env = Env::new();
    env.corpus("2", "1");
    env.run(&["extract", "--input", &impression(3, 0), "--out", "a.json"]);
    env.run(&["extract", "--input", &impression(3, 0), "--out", "a.ppt"]);
    env.run(&["extract", "--input", &impression(4, 0), "--out", "b.json"]);
    assert_eq!(fs::read(env.path("a.ppt")).unwrap()[..4], *b"PPT1");
    assert_eq!(stdout(&env.run(&["match", "a.json", "a.ppt"])), stdout(&env.run(&["match", "a.json", "a.json"])));
    let out = env.run(&["match", "a.json", "b.json"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).ends_with("reject\n"));
    assert_eq!(code(&env.run(&["render-template", "--template", "a.ppt", "--out", "a.png"])), 0);
    assert!(env.path("a.png").exists());
}

#[test]
fn transform_is_byte_identical_across_runs() {
    let env = Env::new();
    env.corpus("1", "1");
    let x = impression(3, 0);
    assert_eq!(code(&env.run(&["transform", "--in", &x, "--key", "k1", "--out", "a.png"])), 0);
    assert_eq!(code(&env.run(&["transform", "--in", &x, "--key", "k1", "--out", "b.png"])), 0);
    assert_eq!(fs::read(env.path("a.png")).unwrap(), fs::read(env.path("b.png")).unwrap());
    env.run(&["transform", "--in", &x, "--key", "k2", "--out", "c.png"]);
    assert_ne!(fs::read(env.path("a.png")).unwrap(), fs::read(env.path("c.png")).unwrap());
}

#[test]
fn usage_errors_exit_64() {
    let env = Env::new();
    assert_eq!(code(&env.run(&["--no-such-flag", "match", "a", "b"])), 64);
    assert_eq!(code(&env.run(&["no-such-command"])), 64);
    assert_eq!(code(&env.run(&["match", "only-one"])), 64);
    assert_eq!(code(&env.run(&["--help"])), 0);
}

#[test]
fn key_falls_back_to_the_environment() {
    let env = Env::new();
    env.corpus("1", "1");
    assert_eq!(code(&env.run(&["transform", "--in", &impression(3, 0), "--out", "a.png"])), 1);
    let out = Command::new(env!("CARGO_BIN_EXE_proxyprints"))
        .args(["transform", "--in", &impression(3, 0), "--out", "b.png"])
        .current_dir(env.dir.path())
        .env("PROXYPRINTS_KEY_FILE", env.path("k1"))
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
}

fn audit(env: &Env) -> Vec<serde_json::Value> {
    fs::read_to_string(env.path("s.json.audit.jsonl")).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn enrollment_lifecycle_through_the_cli() {
    let env = Env::new();
    env.corpus("3", "2");
    let s = ["--store", "s.json", "--key", "k1"];
    let with = |rest: &[&str]| -> Vec<String> { s.iter().chain(rest).map(|a| a.to_string()).collect() };

    let out = env.run(&with(&["verify", "--user", "u1", "--input", &impression(3, 1)]));
    assert_eq!(code(&out), 1);

    for (u, seed) in [("u1", 3), ("u2", 4)] {
        assert_eq!(code(&env.run(&with(&["enroll", "--user", u, "--input", &impression(seed, 0)]))), 0);
    }
    assert_eq!(code(&env.run(&with(&["enroll", "--user", "u1", "--input", &impression(3, 0)]))), 1);
    let store = fs::read_to_string(env.path("s.json")).unwrap();
    assert!(store.contains("\"format\": \"proxyprints-store/1\"") && !store.contains(&hex_of_key()));

    assert_eq!(code(&env.run(&with(&["verify", "--user", "u1", "--input", &impression(3, 1)]))), 0);
    assert_eq!(code(&env.run(&with(&["verify", "--user", "u9", "--input", &impression(3, 1)]))), 1);
    let impostor = env.run(&with(&["--json", "verify", "--user", "u1", "--input", &impression(5, 1)]));
    assert_eq!(code(&impostor), 2);
    let v: serde_json::Value = serde_json::from_slice(&impostor.stdout).unwrap();
    assert_eq!(v["decision"], "reject");

    let hits = env.run(&with(&["identify", "--input", &impression(4, 1)]));
    assert_eq!(code(&hits), 0);
    assert!(stdout(&hits).starts_with("u2 "));
    assert_eq!(code(&env.run(&with(&["identify", "--input", &impression(5, 0)]))), 2);

    env.run(&with(&["transform", "--input", &impression(3, 0), "--out", "stolen.png"]));
    assert_eq!(code(&env.run(&with(&["detect-breach", "--input", &impression(5, 0)]))), 0);
    let alert = env.run(&with(&["detect-breach", "--input", "stolen.png"]));
    assert_eq!(code(&alert), 2);
    assert!(stdout(&alert).contains("u1"));
    assert!(audit(&env).iter().any(|e| e["event"] == "breach_alert" && e["user_id"] == "u1"));

    let rotated = env.run(&with(&["--json", "rotate-key", "--new-key", "k2"]));
    assert_eq!(code(&rotated), 0);
    let m: serde_json::Value = serde_json::from_slice(&rotated.stdout).unwrap();
    assert_eq!(m["users"], serde_json::json!(["u1", "u2"]));
    assert_eq!(audit(&env).last().unwrap()["event"], "key_rotated");

    let stale = env.run(&["--store", "s.json", "--key", "k2", "--json", "verify", "--user", "u1", "--input", &impression(3, 1)]);
    assert_eq!(code(&stale), 2);
    let v: serde_json::Value = serde_json::from_slice(&stale.stdout).unwrap();
    assert_eq!(v["reenroll_required"], true);
    assert_eq!(code(&env.run(&with(&["verify", "--user", "u1", "--input", &impression(3, 1)]))), 1);
    let k2 = ["--store", "s.json", "--key", "k2"];
    assert_eq!(code(&env.run(&[&k2[..], &["enroll", "--user", "u1", "--input", &impression(3, 0)]].concat())), 0);
    assert_eq!(code(&env.run(&[&k2[..], &["verify", "--user", "u1", "--input", &impression(3, 1)]].concat())), 0);
}

fn hex_of_key() -> String {
    "07".repeat(32)
}

#[test]
fn mold_file_matches_its_triangle_count() {
    let env = Env::new();
    env.corpus("1", "1");
    let out = env.run(&["--json", "make-mold", "--input", &impression(3, 0), "--depth-mm", "0.2", "--out", "m.stl"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let bytes = fs::read(env.path("m.stl")).unwrap();
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as u64;
    assert_eq!(v["triangles"].as_u64(), Some(count));
    assert_eq!(bytes.len() as u64, 84 + 50 * count);
    assert!((v["relief_range_mm"].as_f64().unwrap() - 0.2).abs() <= 1e-6);
    assert_eq!(code(&env.run(&["make-mold", "--input", &impression(3, 0), "--depth-mm", "0.5", "--out", "bad.stl"])), 1);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seeded_corpus_and_report_are_reproducible() {
    let env = Env::new();
    for out in ["c1", "c2"] {
        assert_eq!(code(&env.run(&["--seed", "11", "gen-corpus", "--out", out, "--identities", "5", "--impressions", "2"])), 0);
    }
    assert_eq!(tree(&env.path("c1")), tree(&env.path("c2")));
    fs::write(env.path("cfg.txt"), "# evaluation\nthreshold = 45\nkey_file = k1\n").unwrap();
    for out in ["r1", "r2"] {
        let o = env.run(&["--config", "cfg.txt", "--threshold", "40", "eval", "--corpus", "c1", "--cross-key", "k2", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(tree(&env.path("r1")), tree(&env.path("r2")));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(env.path("r1/report.json")).unwrap()).unwrap();
    assert_eq!(report["threshold"], 40);
    assert_eq!(report["config"]["pipeline"]["threshold"], 40);
    let scores = fs::read_to_string(env.path("r1/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 5 + 20);
    let cross = fs::read_to_string(env.path("r1/cross_key.csv")).unwrap();
    assert_eq!(cross.lines().count(), 5);
}
