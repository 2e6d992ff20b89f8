use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gompertz_diffusion::io::{read_mse, read_panel_csv, read_toml, ParamsArtifact, ProtocolArtifact, Table, TestArtifact};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn gompertz(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gompertz"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("GOMPERTZ_THREADS", n.to_string()),
        None => cmd.env_remove("GOMPERTZ_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<PathBuf> {
    let out = gompertz(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().map(PathBuf::from).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Parse an artifact with the reader for its kind.
fn reparse(path: &Path) {
    let name = path.file_name().unwrap().to_str().unwrap();
    let parent = path.parent().unwrap().file_name().unwrap().to_str().unwrap();
    match (parent, name) {
        ("panels", _) => drop(read_panel_csv(path).unwrap()),
        (_, "params.txt") => drop(read_toml::<ParamsArtifact>(path).unwrap()),
        (_, "protocol.txt") => drop(read_toml::<ProtocolArtifact>(path).unwrap()),
        ("tests", _) => drop(read_toml::<TestArtifact>(path).unwrap()),
        (_, "mse.txt") => drop(read_mse(path).unwrap()),
        _ => {
            let t = Table::read(path).unwrap();
            assert!(!t.rows.is_empty(), "{}", path.display());
        }
    }
    assert!(fs::read_to_string(path).unwrap().starts_with("# gompertz "), "{}", path.display());
}

#[test]
fn simulate_is_deterministic_and_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = config("application1.toml");
    let first = ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&a)]);
    ok(&["simulate", "--config", s(&cfg), "--seed", "7", "--out", s(&b)]);
    assert_eq!(first.len(), 3);
    for p in &first {
        reparse(p);
        let twin = b.join(p.strip_prefix(&a).unwrap());
        assert_eq!(fs::read(p).unwrap(), fs::read(twin).unwrap());
    }
    let panel = read_panel_csv(&a.join("panels/g2.csv")).unwrap();
    assert_eq!((panel.n_subjects(), panel.n_times()), (25, 51));
    let text = fs::read_to_string(&first[0]).unwrap();
    assert!(text.contains("# seed = 7") && text.contains("# [groups.g2.d]"));
}

#[test]
fn ingested_panels_fit_like_simulated_ones() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--config", s(&config("case2.toml")), "--out", s(&sim)]);
    ok(&["fit", "--config", s(&config("case2.toml")), "--out", s(&sim)]);
    let ingest = dir.path().join("ingest.toml");
    fs::write(
        &ingest,
        "ordering = \"apf\"\n[groups.control]\npanel = \"sim/panels/control.csv\"\n[groups.g1]\npanel = \"sim/panels/g1.csv\"\n[groups.g2]\npanel = \"sim/panels/g2.csv\"\n",
    )
    .unwrap();
    let out = dir.path().join("fit");
    ok(&["fit", "--config", s(&ingest), "--out", s(&out)]);
    let a: ParamsArtifact = read_toml(&sim.join("params.txt")).unwrap();
    let b: ParamsArtifact = read_toml(&out.join("params.txt")).unwrap();
    assert_eq!(a.control, b.control);
    assert_eq!(Table::read(&sim.join("profiles/v1.csv")).unwrap(), Table::read(&out.join("profiles/v1.csv")).unwrap());
}

#[test]
fn cascade_runs_four_tests_in_protocol_order() {
    let dir = tempfile::tempdir().unwrap();
    for (ordering, expect) in [("apf", ["1_v1.txt", "2_c.txt", "3_v2.txt", "4_d.txt"]), ("dif", ["1_v1.txt", "2_d.txt", "3_v2.txt", "4_c.txt"])] {
        let out = dir.path().join(ordering);
        let files = ok(&[
            "cascade",
            "--config",
            s(&config("case1.toml")),
            "--ordering",
            ordering,
            "--bootstrap-m",
            "100",
            "--out",
            s(&out),
        ]);
        for f in &files {
            reparse(f);
        }
        let trace: ProtocolArtifact = read_toml(&out.join("tests/protocol.txt")).unwrap();
        assert_eq!(trace.order, expect);
        assert_eq!(trace.log.len(), 5);
        for (k, line) in trace.log.iter().enumerate().filter(|(k, _)| *k != 2) {
            assert!(line.contains("-> accept") || line.contains("-> reject"), "{k}: {line}");
        }
        let first: TestArtifact = read_toml(&out.join("tests/1_v1.txt")).unwrap();
        assert_eq!(first.replicates.len(), 100);
        assert!(out.join("plotdata/kde_4_".to_string() + &expect[3][2..3] + ".csv").exists());
    }
}

#[test]
fn test_report_and_study_artifacts_reparse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("study.toml");
    let text = fs::read_to_string(config("application2.toml")).unwrap().replace("replications = 10", "replications = 3");
    fs::write(&cfg_path, text).unwrap();
    let out = dir.path().join("out");
    let mut files = ok(&["test", "--config", s(&cfg_path), "--target", "v2", "--bootstrap-m", "100", "--out", s(&out)]);
    files.extend(ok(&["test", "--config", s(&cfg_path), "--target", "c", "--h", "0.0", "--bootstrap-m", "100", "--out", s(&out)]));
    files.extend(ok(&["report", "--config", s(&cfg_path), "--out", s(&out)]));
    files.extend(ok(&["replicate-study", "--config", s(&cfg_path), "--out", s(&out)]));
    for f in &files {
        reparse(f);
    }
    assert!(out.join("plotdata/kde_v2.csv").exists() && out.join("plotdata/curves.csv").exists());
    let c: TestArtifact = read_toml(&out.join("tests/c.txt")).unwrap();
    assert_eq!(c.hypothesis, "H0: C(t) = 0");
    // one row per function and replication, then the median
    let rows = read_mse(&out.join("mse.txt")).unwrap();
    assert_eq!(rows.len(), 8 * 4);
    assert!(rows.chunks(4).all(|c| c[3].replication.is_none() && c[..3].iter().all(|r| r.function == c[3].function)));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let code = |args: &[&str]| gompertz(args, None).status.code();
    assert_eq!(code(&["fit", "--config", s(&config("case1.toml")), "--bogus"]), Some(2));
    assert_eq!(code(&["fly"]), Some(2));
    assert_eq!(code(&["fit", "--config", "missing.toml", "--out", out]), Some(2));
    assert_eq!(code(&["fit", "--config", s(&config("case1.toml")), "--loess-degree", "3", "--out", out]), Some(2));
    assert_eq!(code(&["test", "--config", s(&config("case1.toml")), "--out", out]), Some(2));
    let missing = dir.path().join("missing_panel.toml");
    fs::write(&missing, "[groups.control]\npanel = \"nope.csv\"\n").unwrap();
    assert_eq!(code(&["fit", "--config", s(&missing), "--out", out]), Some(2));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time,a,b\n0,1,1\n1,2,-3\n").unwrap();
    let bad_cfg = dir.path().join("bad.toml");
    fs::write(&bad_cfg, "[groups.control]\npanel = \"bad.csv\"\n[groups.g1]\npanel = \"bad.csv\"\n[groups.g2]\npanel = \"bad.csv\"\n").unwrap();
    let run = gompertz(&["fit", "--config", s(&bad_cfg), "--out", out], None);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("bad.csv:3:3"));
    // identical noise-free paths leave no variance to estimate
    let flat = dir.path().join("flat.csv");
    fs::write(&flat, "time,a,b\n0,1,1\n1,2,2\n2,3,3\n3,3.5,3.5\n").unwrap();
    let flat_cfg = dir.path().join("flat.toml");
    fs::write(&flat_cfg, "[groups.control]\npanel = \"flat.csv\"\n[groups.g1]\npanel = \"flat.csv\"\n[groups.g2]\npanel = \"flat.csv\"\n").unwrap();
    assert_eq!(code(&["fit", "--config", s(&flat_cfg), "--out", out]), Some(1));
    assert_eq!(gompertz(&["fit", "--config", s(&config("case1.toml")), "--out", out], Some(0)).status.code(), Some(2));
}
