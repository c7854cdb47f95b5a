use std::path::Path;
use std::process::Command as Process;

use moser_transport::config::*;
use moser_transport::transport::Mode;
use proptest::prelude::*;

const BIN: &str = env!("CARGO_BIN_EXE_moser-transport");

fn run(config: &str, out: &Path) -> (i32, String, String) {
    let cfg = out.join("run.cfg");
    std::fs::create_dir_all(out).unwrap();
    std::fs::write(&cfg, config).unwrap();
    let o = Process::new(BIN)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8_lossy(&o.stdout).into_owned(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

const CONSTANT: &str = "command = represent\n[domain]\nkind = interval\n[family]\nbuiltin = constant\n[pipeline]\nnt = 128\npush_cells = 512\n";

#[test]
fn constant_family_exits_zero_with_identity_maps() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = run(CONSTANT, dir.path());
    assert_eq!(code, 0, "{err}");
    let maps = std::fs::read_to_string(dir.path().join("maps.csv")).unwrap();
    let mut lines = maps.lines();
    assert_eq!(lines.next(), Some("x,a,t,image_a,image_t"));
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[2] - v[4]).abs() <= 1e-12, "{line}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("represent.json")).unwrap())
            .unwrap();
    assert_eq!(report["status"], "PASS");
    // No temporary files are left behind.
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        assert!(!entry
            .unwrap()
            .file_name()
            .to_string_lossy()
            .starts_with('.'));
    }
}

#[test]
fn syntax_errors_exit_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CONSTANT.replace("nt = 128", "nt = 12*(");
    let (code, _, err) = run(&bad, dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("line 7"), "{err}");
    let unknown = CONSTANT.replace("nt = 128", "grid = 128");
    let (code, _, err) = run(&unknown, dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("unknown key `grid`"), "{err}");
}

#[test]
fn missing_envelope_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONSTANT.replace("represent", "check-assumptions");
    assert_eq!(run(&text, dir.path()).0, 1);
}

#[test]
fn construction_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // Not normalised.
    let text = "command = represent\n[domain]\nkind = interval\n[family]\nexpression = 2 + x\n";
    let (code, _, _) = run(text, dir.path());
    assert_eq!(code, 3);
    let report = std::fs::read_to_string(dir.path().join("represent.json")).unwrap();
    assert!(report.contains("CONSTRUCTION-ERROR"));
}

#[test]
fn obstruct_on_constant_family_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONSTANT
        .replace("represent", "obstruct")
        .replace("nt = 128\npush_cells = 512\n", "");
    let (code, _, err) = run(&text, dir.path());
    assert_eq!(code, 0, "{err}");
}

#[test]
fn subcommand_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, CONSTANT).unwrap();
    let o = Process::new(BIN)
        .arg("obstruct")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"command\": \"obstruct\""));
}

fn arb_config() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![Just(Command::Represent), Just(Command::CheckAssumptions), Just(Command::Obstruct)],
        prop_oneof![Just(Mode::Auto), Just(Mode::CollarMoser), Just(Mode::MoserOnly)],
        0.17..0.33f64,
        16usize..2048,
        1e-9..1.0f64,
        any::<u64>(),
        proptest::collection::vec(-1.0..1.0f64, 0..4),
        any::<bool>(),
    )
        .prop_map(|(command, mode, v, nt, tol, seed, verify_x, builtin)| {
            let base = "command = represent\n[domain]\nkind = interval\n[family]\nbuiltin = affine\n[envelope]\nnames = log\n";
            let mut c = RunConfig::parse(base).unwrap();
            c.command = command;
            c.pipeline.mode = mode;
            c.pipeline.v = v;
            c.pipeline.nt = nt;
            c.pipeline.tol_push = tol;
            c.pipeline.seed = seed;
            c.pipeline.verify_x = verify_x;
            if !builtin {
                c.family.source = FamilySource::Expression("1 + x*(2*m - 1)".into());
                c.family.x_min = Some(-0.5);
                c.family.x_max = Some(0.5);
            }
            c
        })
}

proptest! {
    #[test]
    fn config_text_round_trips(c in arb_config()) {
        let text = c.to_text();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_text(), text);
    }
}
