use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pushcraft::demo::{reference_targets, DemoLibrary};
use pushcraft::planner::{PlanReport, PlannedTrajectory};

fn shipped_demos() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demos")
}

fn pushcraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pushcraft"))
        .args(args)
        .env_remove("PUSHCRAFT_DEMO_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn shipped_demos_are_the_reference_library() {
    let library = DemoLibrary::load_dir(shipped_demos()).unwrap();
    assert_eq!(library.len(), 3);
    let switches: Vec<_> = library.demos.iter().map(|d| d.switch_count()).collect();
    assert_eq!(switches, [0, 1, 2]);
    for (demo, target) in library.demos.iter().zip(reference_targets()) {
        let (x, y, th) = demo.reached.abs_error(&target);
        assert!(x < 0.05 && y < 0.05 && th < 0.3, "{}", demo.label);
    }
}

#[test]
fn plan_to_a_demo_endpoint_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let demos = DemoLibrary::load_dir(shipped_demos()).unwrap();
    let reached = demos.demos[1].reached;
    let out = dir.path().join("plan.json");
    let run = pushcraft(&[
        "plan",
        "--target",
        &reached.x.to_string(),
        &reached.y.to_string(),
        &reached.theta.to_string(),
        "--method",
        "ws",
        "--demos",
        path_str(&shipped_demos()),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let solution: PlannedTrajectory =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    solution.validate().unwrap();
    let report: PlanReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("plan.report.json")).unwrap())
            .unwrap();
    assert!(report.success);
    assert_eq!(report.solution, solution);
    assert_eq!(report.selected_demo, Some(1));
}

#[test]
fn demo_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let run = Command::new(env!("CARGO_BIN_EXE_pushcraft"))
        .args(["plan", "--target", "0.15", "-0.1", "-1.5707963", "--method", "ds", "--out", path_str(&out)])
        .env("PUSHCRAFT_DEMO_DIR", shipped_demos())
        .output()
        .unwrap();
    assert!(code(&run) == 0 || code(&run) == 1, "{}", stderr(&run));
    assert!(out.exists());

    let missing = pushcraft(&[
        "plan", "--target", "0.1", "0", "0", "--method", "dp", "--demos", "/no/such/dir", "--out",
        path_str(&out),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("/no/such/dir"));
}

#[test]
fn target_outside_the_task_space_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("plan.json");
    let run = pushcraft(&["plan", "--target", "0", "-0.4", "0", "--method", "zs", "--out", path_str(&out)]);
    assert_eq!(code(&run), 2);
    assert!(stderr(&run).contains("0.25"), "{}", stderr(&run));
    assert!(!out.exists());
}

#[test]
fn bad_flags_exit_with_usage_code() {
    assert_eq!(code(&pushcraft(&["plan", "--method", "zs", "--out", "x.json"])), 2);
    assert_eq!(code(&pushcraft(&["plan", "--target", "0", "0", "0", "--method", "qq", "--out", "x"])), 2);
    assert_eq!(code(&pushcraft(&["frobnicate"])), 2);
    assert_eq!(code(&pushcraft(&["--help"])), 0);
}

#[test]
fn zero_start_needs_no_demos_and_tracking_follows_it() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("zs.json");
    let run = pushcraft(&[
        "plan", "--target", "0.1", "0", "0", "--method", "zs", "--demos", "/no/such/dir", "--out",
        path_str(&plan),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));

    let trace = dir.path().join("trace.csv");
    let calm = pushcraft(&["track", "--solution", path_str(&plan), "--out", path_str(&trace)]);
    assert_eq!(code(&calm), 0, "{}", stderr(&calm));
    let csv = std::fs::read_to_string(&trace).unwrap();
    assert!(csv.starts_with("t,planned_x"));
    assert_eq!(csv.lines().count(), 201);

    let rough = pushcraft(&[
        "track", "--solution", path_str(&plan), "--disturbance", "0.2", "0.2", "0.5", "--seed", "3",
        "--out", path_str(&trace),
    ]);
    assert_eq!(code(&rough), 1, "{}", stderr(&rough));

    // the report file is accepted as well
    let report = dir.path().join("zs.report.json");
    assert_eq!(code(&pushcraft(&["track", "--solution", path_str(&report), "--out", path_str(&trace)])), 0);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"dt\": 0.05}").unwrap();
    let malformed = pushcraft(&["track", "--solution", path_str(&bad), "--out", path_str(&trace)]);
    assert_eq!(code(&malformed), 2);
    assert!(stderr(&malformed).contains("malformed"));
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("zs.json");
    assert_eq!(
        code(&pushcraft(&["plan", "--target", "0.1", "0.02", "0.2", "--method", "zs", "--out", path_str(&plan)])),
        0
    );
    let out = dir.path().join("sweep.csv");
    let run = pushcraft(&[
        "sweep", "--solution", path_str(&plan), "--points", "3", "--seeds", "4", "--out", path_str(&out),
    ]);
    assert_eq!(code(&run), 0, "{}", stderr(&run));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("x_M,y_M,theta_M,seed_count"));
    assert!(lines[1].starts_with("0,0,0,4,0,0,0,"));
    assert!(lines[3].starts_with("0.04,0.04,0.117,4,"));
}

#[test]
fn benchmark_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let summary = dir.path().join(format!("{name}.txt"));
        let r = pushcraft(&[
            "benchmark", "--targets", "2", "--seed", "9", "--demos", path_str(&shipped_demos()),
            "--out", path_str(&out), "--summary", path_str(&summary),
        ]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
        (std::fs::read(out).unwrap(), std::fs::read_to_string(summary).unwrap())
    };
    let (a, summary) = run("a.csv");
    let (b, _) = run("b.csv");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 4);
    for method in ["ZS", "DS", "DP", "WS"] {
        assert!(summary.lines().any(|l| l.starts_with(method)), "{summary}");
    }

    let zero = pushcraft(&["benchmark", "--targets", "0", "--out", path_str(&dir.path().join("c.csv"))]);
    assert_eq!(code(&zero), 2);
}

#[test]
fn benchmark_with_only_zero_start_needs_no_demos() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zs.csv");
    let r = pushcraft(&[
        "benchmark", "--targets", "1", "--methods", "zs", "--demos", "/no/such/dir", "--out", path_str(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let csv = std::fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().contains(",ZS,"));
}

#[test]
fn demo_synthesize_then_list() {
    let dir = tempfile::tempdir().unwrap();
    let demos = dir.path().join("lib");
    let r = pushcraft(&["demo", "synthesize", "--out-dir", path_str(&demos)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let fresh = DemoLibrary::load_dir(&demos).unwrap();
    let shipped = DemoLibrary::load_dir(shipped_demos()).unwrap();
    assert_eq!(fresh, shipped);

    let list = pushcraft(&["demo", "list", "--dir", path_str(&demos)]);
    assert_eq!(code(&list), 0);
    let text = String::from_utf8(list.stdout).unwrap();
    assert!(text.contains("ns1-left-right"));
    assert_eq!(text.lines().count(), 4);
}
