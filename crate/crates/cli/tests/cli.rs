use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tempovec");
const T1: &str = "1704067200000";
const T2: &str = "1704153600000";

struct Env {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
}

impl Env {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let data = root.join("data");
        Self { _tmp: tmp, root, data }
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.root.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn cmd(&self, args: &[&str]) -> Command {
        let mut c = Command::new(BIN);
        c.env_remove("TEMPOVEC_DATA_DIR")
            .env_remove("TEMPOVEC_FAILPOINTS")
            .arg("--data-dir")
            .arg(&self.data)
            .args(args);
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn ingest(&self, path: &Path, doc: &str, ts: &str) -> String {
        self.ok(&["ingest", path.to_str().unwrap(), "--doc-id", doc, "--ts", ts])
    }
}

const V1: &str = "Solar output rose in March.\n\nThe capital of Freedonia is Old Harbor.\n\nTrains run hourly.";
const V2: &str = "Solar output rose in March.\n\nThe capital of Freedonia is New Harbor.\n\nTrains run hourly.";

#[test]
fn ingest_reports_changes() {
    let env = Env::new();
    let a = env.file("a.txt", V1);
    assert!(env.ingest(&a, "doc", T1).contains("fraction=1.0000"));
    assert!(env.ingest(&a, "doc", T2).contains("changed=0"));
    let b = env.file("b.txt", V2);
    let out = env.ingest(&b, "doc", T2);
    assert!(out.contains("modified=1") && out.contains("unchanged=2"), "{out}");
}

#[test]
fn queries_across_time() {
    let env = Env::new();
    assert!(env.ok(&["query", "capital of Freedonia"]).contains("no results"));
    env.ingest(&env.file("a.txt", V1), "doc", T1);
    env.ingest(&env.file("b.txt", V2), "doc", T2);

    let now = env.ok(&["query", "capital of Freedonia", "-k", "1"]);
    assert!(now.contains("New Harbor"), "{now}");
    let then = env.ok(&["query-asof", "capital of Freedonia", "--ts", "2024-01-01T12:00:00Z", "-k", "1"]);
    assert!(then.contains("Old Harbor"), "{then}");
    assert!(env.ok(&["query-asof", "capital", "--ts", "1000"]).contains("no results"));
    let range = env.ok(&["query-range", "capital of Freedonia", "--from", T1, "--to", T2, "-k", "1"]);
    assert!(range.contains("1 only at start, 1 only at end, 0 at both"), "{range}");
}

#[test]
fn timeline_and_diff() {
    let env = Env::new();
    env.ingest(&env.file("a.txt", V1), "doc", T1);
    let timeline = env.ok(&["timeline", "--doc-id", "doc"]);
    assert_eq!(timeline.lines().count(), 2, "{timeline}");
    assert!(env.ok(&["diff", "--doc-id", "doc", "--v1", "1", "--v2", "1"]).contains("no changes"));
    env.ingest(&env.file("b.txt", V2), "doc", T2);
    let diff = env.ok(&["diff", "--doc-id", "doc", "--v1", "1", "--v2", "2"]);
    assert_eq!(diff.trim(), "position 1: modified");
    let out = env.run(&["diff", "--doc-id", "doc", "--v1", "1", "--v2", "9"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stats_verify_and_bad_input() {
    let env = Env::new();
    let stats = env.ok(&["stats"]);
    assert!(stats.contains("hot active chunks      0"), "{stats}");
    assert!(stats.contains("cold total records     0"), "{stats}");
    assert!(env.ok(&["verify"]).contains("tiers consistent"));
    let a = env.file("a.txt", V1);
    let out = env.run(&["ingest", a.to_str().unwrap(), "--doc-id", "doc", "--ts", "yesterday"]);
    assert_eq!(out.status.code(), Some(1));
    let out = env.run(&["query", "x", "-k", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(env.run(&["--help"]).status.code(), Some(0));
}

#[test]
fn json_output_is_line_delimited() {
    let env = Env::new();
    let a = env.file("a.txt", V1);
    let out = env.ok(&["--format", "json", "ingest", a.to_str().unwrap(), "--doc-id", "doc", "--ts", T1]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["new_count"], 3);
    let out = env.ok(&["--format", "json", "query", "trains", "-k", "3"]);
    let hits: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(hits.len(), 3);
    assert_eq!(hits[0]["rank"], 1);
    let out = env.ok(&["--format", "json", "stats"]);
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["hot"]["active_count"], 3);
}

#[test]
fn second_writer_is_refused_while_readers_proceed() {
    let env = Env::new();
    let a = env.file("a.txt", V1);
    env.ingest(&a, "doc", T1);
    let lock = File::options().write(true).open(env.data.join("LOCK")).unwrap();
    lock.try_lock().unwrap();
    let out = env.run(&["ingest", a.to_str().unwrap(), "--doc-id", "other", "--ts", T2]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    assert!(env.ok(&["query", "trains", "-k", "1"]).contains("Trains run hourly"));
    drop(lock);
    env.ingest(&a, "other", T2);
}

#[test]
fn data_dir_variable_overrides_flag() {
    let env = Env::new();
    let other = env.root.join("elsewhere");
    let a = env.file("a.txt", V1);
    let out = env
        .cmd(&["ingest", a.to_str().unwrap(), "--doc-id", "doc", "--ts", T1])
        .env("TEMPOVEC_DATA_DIR", &other)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(other.join("LOCK").exists());
    assert!(!env.data.exists());
}

#[test]
fn process_abort_at_every_boundary_recovers() {
    const POINTS: [&str; 9] = [
        "after_pending",
        "mid_cold_append",
        "after_cold_append",
        "after_cold_written",
        "hot_apply",
        "mid_hot_apply",
        "after_hot_apply",
        "after_committed",
        "hash_store_save",
    ];
    for point in POINTS {
        let env = Env::new();
        let a = env.file("a.txt", V1);
        let b = env.file("b.txt", V2);
        env.ingest(&a, "doc", T1);
        let out = env
            .cmd(&["ingest", b.to_str().unwrap(), "--doc-id", "doc", "--ts", T2])
            .env("TEMPOVEC_FAILPOINTS", format!("{point}=abort"))
            .output()
            .unwrap();
        assert!(!out.status.success(), "{point} did not abort");

        env.ok(&["reconcile"]);
        assert!(env.ok(&["verify"]).contains("tiers consistent"), "{point}");
        // Either the second version landed or it did not; a retry converges.
        env.ingest(&b, "doc", T2);
        assert!(env.ingest(&b, "doc", T2).contains("changed=0"), "{point}");
        let now = env.ok(&["query", "capital of Freedonia", "-k", "1"]);
        assert!(now.contains("New Harbor"), "{point}: {now}");
        let then = env.ok(&["query-asof", "capital of Freedonia", "--ts", T1, "-k", "1"]);
        assert!(then.contains("Old Harbor"), "{point}: {then}");
        assert!(env.ok(&["verify"]).contains("tiers consistent"), "{point}");
    }
}
