use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spreadometer::designs::{read_sample_ids, DesignSpec, RngStream, SampleSelection, Sampler};
use spreadometer::frame::{load_population, ColumnSchema};
use spreadometer::{BalanceReport, WeightsMatrix};

fn spreadometer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spreadometer"))
        .args(args)
        .env("SPREADOMETER_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_line_fixture(dir: &Path) -> (String, String) {
    let population = dir.join("line.csv");
    fs::write(&population, "id,x,y,pi\n1,0,0,0.5\n2,1,0,0.5\n3,2,0,0.5\n4,3,0,0.5\n").unwrap();
    let sample = dir.join("sample.csv");
    fs::write(&sample, "id\n1\n3\n").unwrap();
    (
        population.to_string_lossy().into_owned(),
        sample.to_string_lossy().into_owned(),
    )
}

#[test]
fn measure_line_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let (population, sample) = write_line_fixture(dir.path());
    let out = spreadometer(&["measure", "--population", &population, "--sample", &sample]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((json["i_b"].as_f64().unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(json["b"].as_f64().unwrap(), 0.0625);
    assert_eq!(json["n"], 2);
    assert_eq!(json["N"], 4);
}

#[test]
fn measure_without_pi_uses_sample_size() {
    let dir = tempfile::tempdir().unwrap();
    let population = dir.path().join("points.csv");
    fs::write(&population, "id,x,y\n1,0,0\n2,1,0\n3,2,0\n4,3,0\n").unwrap();
    let sample = dir.path().join("s.csv");
    fs::write(&sample, "id\n2\n4\n").unwrap();
    let out = spreadometer(&[
        "measure",
        "--population",
        population.to_str().unwrap(),
        "--sample",
        sample.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((json["i_b"].as_f64().unwrap() + 1.0).abs() < 1e-9);
}

#[test]
fn generate_is_deterministic() {
    let a = spreadometer(&["generate", "csr", "--n", "200", "--seed", "11"]);
    let b = spreadometer(&["generate", "csr", "--n", "200", "--seed", "11"]);
    let c = spreadometer(&["generate", "csr", "--n", "200", "--seed", "12"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().next(), Some("id,x,y"));
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn generate_aggregated_and_regular() {
    let agg = spreadometer(&["generate", "aggregated", "--n", "100", "--seed", "3"]);
    assert_eq!(stdout(&agg).lines().count(), 101);
    let reg = spreadometer(&["generate", "regular", "--n", "300", "--seed", "3"]);
    assert_eq!(stdout(&reg).lines().count(), 301);
    let bad = spreadometer(&["generate", "aggregated", "--n", "105", "--seed", "3"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("DomainError"));
}

#[test]
fn sample_then_measure_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let population = dir.path().join("pop.csv");
    let gen = spreadometer(&[
        "generate",
        "csr",
        "--n",
        "300",
        "--seed",
        "5",
        "--out",
        population.to_str().unwrap(),
    ]);
    assert!(gen.status.success());
    let sample = dir.path().join("lpm.csv");
    let drawn = spreadometer(&[
        "sample",
        "--population",
        population.to_str().unwrap(),
        "--design",
        "lpm",
        "--n",
        "30",
        "--seed",
        "9",
        "--out",
        sample.to_str().unwrap(),
    ]);
    assert!(drawn.status.success(), "{}", String::from_utf8_lossy(&drawn.stderr));

    let frame = load_population(fs::File::open(&population).unwrap(), &ColumnSchema::default())
        .unwrap()
        .into_frame_auto(Some(30))
        .unwrap();
    let expected = Sampler::prepare(&DesignSpec::Lpm, &frame)
        .unwrap()
        .draw(&frame, &mut RngStream::new(9, 0).rng())
        .unwrap();
    let ids = read_sample_ids(fs::File::open(&sample).unwrap()).unwrap();
    assert_eq!(ids, expected.ids(&frame));

    let out = spreadometer(&[
        "measure",
        "--population",
        population.to_str().unwrap(),
        "--sample",
        sample.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let selection = SampleSelection::from_ids(&frame, &ids).unwrap();
    let w = WeightsMatrix::build(&frame).unwrap();
    let report = BalanceReport::compute(&frame, &selection, &w).unwrap();
    assert_eq!(json["i_b"].as_f64(), report.i_b);
    assert_eq!(json["i_m"].as_f64(), report.i_m);
    assert_eq!(json["b"].as_f64(), Some(report.b));
}

#[test]
fn simulate_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        r#"
replications = 20
sample_sizes = [20]

[[populations]]
name = "CSR"
generator = { process = "csr", n = 200 }

[[designs]]
kind = "srs"

[[designs]]
kind = "lpm"
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let run = |seed: &str| {
        spreadometer(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out_dir.to_str().unwrap(),
        ])
    };
    let first = run("4");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("Population CSR"));
    let csv = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.starts_with("population,design,n,index,mean,se,reps"));
    assert!(csv.contains("CSR,LPM,20,I_B"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 2);
    let second = run("4");
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn errors_exit_with_status_one() {
    let dir = tempfile::tempdir().unwrap();
    let (population, _) = write_line_fixture(dir.path());
    let sample = dir.path().join("unknown.csv");
    fs::write(&sample, "id\n1\n99\n").unwrap();
    let out = spreadometer(&[
        "measure",
        "--population",
        &population,
        "--sample",
        sample.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let missing = spreadometer(&["measure", "--population", "/nonexistent.csv", "--sample", &population]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_status_two() {
    assert_eq!(spreadometer(&["generate"]).status.code(), Some(2));
    assert_eq!(spreadometer(&["sample", "--design", "nope"]).status.code(), Some(2));
    assert_eq!(spreadometer(&["frobnicate"]).status.code(), Some(2));
}
