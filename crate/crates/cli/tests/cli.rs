use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lacunary(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lacunary"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LACUNARY_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const SMALL_LIL: &str = r#"
[sequence]
kind = "power"

[function]
kind = "cos"

[lil]
N_max = 512
samples = 8
seed = 7
"#;

#[test]
fn diophantine_halving_query_counts_99() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let o = lacunary(&out, &["diophantine", "--kind", "power", "-n", "100", "--a", "1", "--b", "-2", "--c", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&out, "diophantine.csv");
    assert_eq!(csv, "a,b,c,N,count,ordered,diagonal\n1,-2,0,100,99,99,0\n");
    let manifest = read(&out, "manifest.toml");
    assert!(manifest.contains("command = \"diophantine\""));
    assert!(manifest.contains("config_sha256 = \""));
    assert!(manifest.contains(&format!("version = \"{}\"", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn diophantine_profile_mode() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["diophantine", "--kind", "power-minus-one", "-n", "64", "--degree", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "diophantine.csv");
    // 4 nonzero coefficients squared, times 4 grid points
    assert_eq!(csv.lines().count(), 1 + 16 * 4);
    assert!(csv.starts_with("a,b,N,max_mult_nonzero_c,witness_c,zero_c_count,verdict\n"));
}

#[test]
fn sigma_grid_search_reports_sigma_max() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("gamma.cache");
    let args = ["sigma", "--theta", "2", "--K", "24", "--step", "1024", "--cache", cache.to_str().unwrap()];
    let o = lacunary(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(dir.path(), "summary.toml");
    let line = summary.lines().find(|l| l.starts_with("sigma_max = ")).expect("sigma_max line");
    let sigma: f64 = line["sigma_max = ".len()..].parse().unwrap();
    let target = 42f64.sqrt() / 9.0;
    assert!((sigma - target).abs() / target < 0.015, "{sigma}");
    assert!(cache.exists());

    // second run is served from the cache and agrees
    let again = lacunary(&dir.path().join("again"), &args);
    assert!(again.status.success());
    assert_eq!(read(&dir.path().join("again"), "summary.toml"), summary);
}

#[test]
fn sigma_of_a_single_function() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["sigma", "--K", "6", "--interval", "0,1/2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(read(dir.path(), "summary.toml").contains("sigma2 = \"1/4\""));
    let gammas = read(dir.path(), "gammas.csv");
    assert_eq!(gammas.lines().count(), 7);
    assert!(gammas.lines().skip(1).all(|l| l.contains(",0/1,")), "{gammas}");

    let o = lacunary(dir.path(), &["sigma", "--K", "3", "--cos", "1,1"]);
    assert!(o.status.success());
    assert!(read(dir.path(), "summary.toml").contains("sigma2 = \"2/1\""));
}

#[test]
fn discrepancy_of_point_file() {
    let dir = tempfile::tempdir().unwrap();
    let points = dir.path().join("points.txt");
    fs::write(&points, "# two points\n0\n0.5\n").unwrap();
    let o = lacunary(dir.path(), &["discrepancy", "--points", points.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(dir.path(), "summary.toml");
    assert!(summary.contains("extreme = 0.5"), "{summary}");
    assert!(summary.contains("star = 0.5"), "{summary}");
}

#[test]
fn discrepancy_of_sampled_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["discrepancy", "--kind", "power", "-n", "256", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(dir.path(), "discrepancy.csv");
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("256,"), "{last}");
    assert!(read(dir.path(), "manifest.toml").contains("seed = 3"));
}

#[test]
fn lil_run_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lil.toml");
    fs::write(&config, SMALL_LIL).unwrap();
    let one = dir.path().join("one");
    let four = dir.path().join("four");
    let o = lacunary(&one, &["--threads", "1", "lil", "--config", config.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = Command::new(env!("CARGO_BIN_EXE_lacunary"))
        .args(["--out", four.to_str().unwrap(), "lil", "--config", config.to_str().unwrap()])
        .env("LACUNARY_THREADS", "4")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["lil.csv", "summary.toml", "manifest.toml", "config.toml"] {
        assert_eq!(read(&one, name), read(&four, name), "{name}");
    }
    let csv = read(&one, "lil.csv");
    assert!(csv.starts_with("sample_index,x_top64_hex,stat_runmax,stat_final,prediction\n"));
    assert_eq!(csv.lines().count(), 9);
    assert!(!csv.contains('\r'));
}

#[test]
fn overrides_and_formats() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lil.toml");
    fs::write(&config, SMALL_LIL).unwrap();
    let cfg = config.to_str().unwrap();
    let o = lacunary(dir.path(), &["--format", "csv", "--override", "lil.samples=3", "lil", "--config", cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(dir.path(), "lil.csv").lines().count(), 4);
    assert!(!dir.path().join("summary.toml").exists());

    let only = dir.path().join("summary_only");
    let o = lacunary(&only, &["--format", "summary", "lil", "--config", cfg]);
    assert!(o.status.success());
    assert!(only.join("summary.toml").exists());
    assert!(!only.join("lil.csv").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, format!("{SMALL_LIL}\n[extra]\nkey = 1\n")).unwrap();
    let o = lacunary(dir.path(), &["lil", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let good = dir.path().join("good.toml");
    fs::write(&good, SMALL_LIL).unwrap();
    let o = lacunary(dir.path(), &["--override", "lil.nonsense=1", "lil", "--config", good.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = lacunary(dir.path(), &["lil", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = lacunary(dir.path(), &["diophantine", "--a", "0", "--b", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = lacunary(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = lacunary(dir.path(), &["--override", "lil.samples=3", "selftest"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn counterexample_without_pairs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(
        dir.path(),
        &["counterexample", "--kind", "superlacunary", "--a", "1", "--b", "2", "--c", "1", "--n-max", "1024"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("0 pairs found"), "{}", stderr(&o));
}

#[test]
fn counterexample_pipeline_on_powers_minus_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["counterexample", "--n-max", "1024", "--samples", "16"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("result: pass"), "{}", stdout(&o));
    let summary = read(dir.path(), "summary.toml");
    assert!(summary.contains("[comparison]"));
    assert!(summary.contains("spearman = "));
    let perm = read(dir.path(), "permutation.txt");
    assert_eq!(perm.lines().count(), 1024);
    assert!(perm.starts_with("1 "));

    // c = 0 on powers of two: constant prediction sqrt(3/2)
    let zero = dir.path().join("zero");
    let o = lacunary(&zero, &["counterexample", "--kind", "power", "--c", "0", "--n-max", "256", "--samples", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&zero, "lil.csv");
    let expected = format!("{}", 1.5f64.sqrt());
    assert!(csv.lines().skip(1).all(|l| l.ends_with(&expected)), "{csv}");
}

#[test]
fn sequence_command_writes_terms() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["sequence", "--kind", "superlacunary", "-n", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = read(dir.path(), "summary.toml");
    assert!(summary.contains("hadamard = true"));
    assert!(summary.contains("min_ratio = \"4/1\""), "{summary}");
    let terms = read(dir.path(), "terms.txt");
    assert!(terms.contains("32768"), "{terms}");
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = lacunary(dir.path(), &["selftest", "--sets", "200", "--queries", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("discrepancy: 200 cases, 0 failures"));
    assert_eq!(read(dir.path(), "selftest.csv"), "suite,cases,failures\ndiscrepancy,200,0\ndiophantine,20,0\n");
}

#[test]
fn summary_config_echo_reparses() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lil.toml");
    fs::write(&config, SMALL_LIL).unwrap();
    let o = lacunary(dir.path(), &["lil", "--config", config.to_str().unwrap()]);
    assert!(o.status.success());
    let summary = read(dir.path(), "summary.toml");
    let echoed = lacunary_config(&summary);
    let original = lacunary::lil_lab::ExperimentConfig::from_toml(SMALL_LIL).unwrap();
    assert_eq!(echoed, original);
}

fn lacunary_config(summary: &str) -> lacunary::lil_lab::ExperimentConfig {
    lacunary::lil_lab::config_from_summary(summary).unwrap()
}
