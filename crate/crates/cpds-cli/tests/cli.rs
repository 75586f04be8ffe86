use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn cpds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpds"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cpds-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn check(name: &str, extra: &[&str]) -> Output {
    let path = fixture(name);
    let mut args = vec!["check", path.to_str().unwrap()];
    args.extend_from_slice(extra);
    cpds(&args)
}

#[test]
fn check_verdicts_and_exit_codes() {
    for (name, expect) in [
        ("fix3.cpds", 0),
        ("fix3-blocked.cpds", 1),
        ("fix-sc.cpds", 0),
        ("fix-sc-z1.cpds", 1),
        ("fix-ph.cpds", 0),
        ("fix-ph-z1.cpds", 1),
    ] {
        let o = check(name, &[]);
        assert_eq!(
            code(&o),
            expect,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(doc["schema"], "cpds-result/1");
        assert_eq!(
            doc["verdict"],
            if expect == 0 {
                "reachable"
            } else {
                "unreachable"
            },
            "{name}"
        );
    }
}

#[test]
fn check_with_explicit_controls() {
    let o = check("fix1.cpds", &["--from", "p", "--to", "q"]);
    assert_eq!(code(&o), 1);
    let o = check("fix1.cpds", &["--from", "p", "--to", "p"]);
    assert_eq!(code(&o), 0);
    let o = check("fix1.cpds", &["--from", "p", "--to", "nowhere"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn witnesses_are_attached() {
    let o = check("fix3.cpds", &["--witness"]);
    assert_eq!(code(&o), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let steps = doc["witness"].as_array().unwrap();
    assert_eq!(steps.len(), 13);
    assert!(steps[0].as_str().unwrap().starts_with("0: <p0,"));
    assert!(steps[12].as_str().unwrap().starts_with("12: "));
}

#[test]
fn oracle_flag_agrees() {
    for name in [
        "fix3.cpds",
        "fix3-blocked.cpds",
        "fix-ph.cpds",
        "fix-sc-z1.cpds",
    ] {
        assert_eq!(
            code(&check(name, &[])),
            code(&check(name, &["--oracle"])),
            "{name}"
        );
    }
}

#[test]
fn parse_errors_report_positions() {
    let dir = scratch("parse");
    let bad = dir.join("bad.cpds");
    std::fs::write(&bad, "cpds order X stacks 1 mode single\n").unwrap();
    let o = cpds(&["check", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 1, column 12"), "{err}");

    std::fs::write(
        &bad,
        "cpds order 1 stacks 1 mode single\nalphabet a\ncontrols p\nstack 1\n  p a jump p\n",
    )
    .unwrap();
    let o = cpds(&["check", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 5"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&cpds(&[])), 2);
    assert_eq!(code(&cpds(&["check"])), 2);
    assert_eq!(code(&cpds(&["check", "/nonexistent/file.cpds"])), 2);
    assert_eq!(code(&cpds(&["--version"])), 0);
}

#[test]
fn global_round_trip_and_membership() {
    let dir = scratch("global");
    let out = dir.join("fix2.json");
    let o = cpds(&[
        "global",
        fixture("fix2.cpds").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let set = out.to_str().unwrap();
    assert_eq!(code(&cpds(&["member", set, "<p0, [[a]_1 [b]_1]_2>"])), 0);
    assert_eq!(code(&cpds(&["member", set, "<p3, [[b]_1]_2>"])), 0);
    assert_eq!(code(&cpds(&["member", set, "<p0, [[a]_1 [a]_1]_2>"])), 1);
    assert_eq!(
        code(&cpds(&["member", set, "<p0, [[a]_1]_2, [[a]_1]_2>"])),
        2
    );
    assert_eq!(code(&cpds(&["member", set, "<p0, [[a]_1"])), 2);

    let text = std::fs::read_to_string(&out).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["command"], "global");
    assert!(doc["set"]["tuples"]
        .as_array()
        .is_some_and(|t| !t.is_empty()));
}

#[test]
fn global_multi_stack_sets() {
    let dir = scratch("global-multi");
    let out = dir.join("fix-sc.json");
    let o = cpds(&[
        "global",
        fixture("fix-sc.cpds").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let set = out.to_str().unwrap();
    assert_eq!(
        code(&cpds(&["member", set, "<p0, [[⊥]_1]_2, [[⊥]_1]_2>"])),
        0
    );
    let out1 = dir.join("fix-sc-z1.json");
    cpds(&[
        "global",
        fixture("fix-sc-z1.cpds").to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert_eq!(
        code(&cpds(&[
            "member",
            out1.to_str().unwrap(),
            "<p0, [[⊥]_1]_2, [[⊥]_1]_2>"
        ])),
        1
    );
}

#[test]
fn dot_files_are_written() {
    let dir = scratch("dot");
    let o = cpds(&[
        "global",
        fixture("fix2.cpds").to_str().unwrap(),
        "--out",
        dir.join("g.json").to_str().unwrap(),
        "--dot",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let dots: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "dot"))
        .collect();
    assert!(!dots.is_empty());
    let text = std::fs::read_to_string(dots[0].path()).unwrap();
    assert!(text.starts_with("digraph"));
}

#[test]
fn simulate_prints_the_worked_example() {
    let o = cpds(&[
        "simulate",
        fixture("fix2.cpds").to_str().unwrap(),
        "--from",
        "<p0, [[a]_1 [b]_1]_2>",
    ]);
    assert_eq!(code(&o), 0);
    let expect = "\
0: <p0, [[a]_1 [b]_1]_2>
1: stack 1: p0 a push c 2 p1 => <p1, [[c^{[[b]_1]_2} a]_1 [b]_1]_2>
2: stack 1: p1 c copy 2 p2 => <p2, [[c^{[[b]_1]_2} a]_1 [c^{[[b]_1]_2} a]_1 [b]_1]_2>
3: stack 1: p2 c collapse 2 p3 => <p3, [[b]_1]_2>
stuck
";
    assert_eq!(stdout(&o), expect);
}

#[test]
fn simulate_respects_the_step_limit() {
    let o = cpds(&[
        "simulate",
        fixture("fix2.cpds").to_str().unwrap(),
        "--from",
        "<p0, [[a]_1 [b]_1]_2>",
        "--steps",
        "1",
    ]);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn selftest_passes() {
    let dir = scratch("selftest");
    let o = cpds(&[
        "selftest",
        "--seeds",
        "50",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("cases agree"));
}

#[test]
fn injected_faults_are_caught_with_a_reproducer() {
    let dir = scratch("fault");
    let o = cpds(&[
        "selftest",
        "--seeds",
        "5",
        "--inject-fault",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let repro: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    assert_eq!(repro.len(), 1);
    assert!(repro[0]
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("selftest-seed"));
    let o = cpds(&["check", repro[0].to_str().unwrap(), "--oracle"]);
    assert!(
        matches!(code(&o), 0 | 1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
