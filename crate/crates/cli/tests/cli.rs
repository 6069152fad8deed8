use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn abp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abp")).args(args).output().expect("spawn abp")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn run_in(dir: &Path, cmd: &str, cfg: &Path) -> Output {
    abp(&[cmd, "--config", cfg.to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
}

fn stderr_record(o: &Output) -> serde_json::Value {
    let s = String::from_utf8_lossy(&o.stderr);
    let line = s.lines().last().expect("empty stderr");
    serde_json::from_str(line).expect("failure record is JSON")
}

const SHORT: &str = r#"
[model]
potential = "double-well-1d"
[sim]
t_final = 4.0
seed = 9
replicas = 2
"#;

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "run.toml", SHORT);
    let out = tmp.path().join("out");
    let mut first = vec![];
    for round in 0..2 {
        let o = run_in(tmp.path(), "run", &cfg);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for name in ["abp_run_series.csv", "abp_run_bias.csv"] {
            let bytes = fs::read(out.join(name)).unwrap();
            if round == 0 {
                first.push(bytes);
            } else {
                assert!(first.iter().any(|b| *b == bytes), "{name} differs between runs");
            }
        }
    }
    let series = String::from_utf8(first[0].clone()).unwrap();
    assert!(series.starts_with("# abp-csv schema=1 kind=series command=run"));
    assert!(series.contains("# seed=9"));
    let header = series.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "replica,t,theta,a_error,mu_bar[cos(1x0)],rho_bar[cos(1x0)]");
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("abp_run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], 1);
    assert_eq!(summary["result"]["survivors"], 2);
}

#[test]
fn different_seed_changes_series() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write_config(tmp.path(), "a.toml", SHORT);
    let b = write_config(tmp.path(), "b.toml", &SHORT.replace("seed = 9", "seed = 10"));
    let body = |cfg: &Path| {
        assert!(run_in(tmp.path(), "run", cfg).status.success());
        let s = fs::read_to_string(tmp.path().join("out/abp_run_series.csv")).unwrap();
        s.lines().filter(|l| !l.starts_with('#')).map(String::from).collect::<Vec<_>>()
    };
    assert_ne!(body(&a), body(&b));
}

#[test]
fn oracle_tables_are_normalized() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "o.toml", "[model]\npotential = \"bessel1d\"\n[sim]\nt_final = 1.0\n[oracle]\nresolution = 512\n");
    let o = run_in(tmp.path(), "oracle", &cfg);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(tmp.path().join("out/abp_oracle.csv"))
        .unwrap();
    let headers = rdr.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "exp_neg_A_star").unwrap();
    let vals: Vec<f64> = rdr.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(vals.len(), 512);
    let integral = vals.iter().sum::<f64>() / vals.len() as f64;
    assert!((integral - 1.0).abs() < 1e-10, "{integral}");
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("out/abp_oracle_summary.json")).unwrap()).unwrap();
    let a_inf = summary["result"]["integral_exp_neg_a_inf"].as_f64().unwrap();
    assert!((a_inf - 1.0).abs() < 1e-10);
    assert!(tmp.path().join("out/abp_oracle_poisson_0.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", &format!("{SHORT}[kernel]\nalpha = 1.5\n"));
    let o = run_in(tmp.path(), "run", &cfg);
    assert_eq!(o.status.code(), Some(2));
    let rec = stderr_record(&o);
    assert_eq!(rec["error"]["kind"], "config");
    assert!(rec["error"]["message"].as_str().unwrap().contains("kernel.alpha"));

    let missing = abp(&["run", "--config", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let spde = write_config(tmp.path(), "s.toml", "[model]\nfamily = \"spde\"\n[sim]\nt_final = 1.0\n");
    assert_eq!(run_in(tmp.path(), "run", &spde).status.code(), Some(2));
}

#[test]
fn blowup_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let doc = "[model]\npotential = \"quadratic-cosine\"\ndim = 1\nstiffness = 1.0\nx0 = [1.0]\n\
               [sim]\ndt = 3.0\nt_final = 30000.0\n[fixed_bias]\nsource = \"zero\"\n[[observables]]\nkind = \"square\"\ncoord = 0\n";
    let cfg = write_config(tmp.path(), "boom.toml", doc);
    let o = run_in(tmp.path(), "run-fixed-bias", &cfg);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stderr_record(&o)["error"]["kind"], "blowup");
}

#[test]
fn variance_and_spde_commands_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let v = write_config(
        tmp.path(),
        "v.toml",
        "[model]\npotential = \"double-well-1d\"\n[sim]\nt_final = 10.0\n[variance]\nreplicas = 8\n",
    );
    let o = run_in(tmp.path(), "variance", &v);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(tmp.path().join("out/abp_variance.csv")).unwrap();
    assert!(text.lines().any(|l| l.starts_with("adaptive,")));
    assert!(text.lines().any(|l| l.starts_with("fixed-a-inf,")));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("oracle V_inf"), "{stdout}");

    let s = write_config(tmp.path(), "s.toml", "[model]\nfamily = \"spde\"\n[sim]\nt_final = 2.0\n[spde]\nmodes = 8\ngrid = 32\n");
    let o = run_in(tmp.path(), "spde-run", &s);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(tmp.path().join("out/abp_spde-run_series.csv").exists());
}

#[test]
fn check_subset_prints_one_line_per_criterion() {
    let tmp = tempfile::tempdir().unwrap();
    let o = abp(&["check", "--only", "1,7", "--out", tmp.path().to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{stdout}{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("criterion")).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines.iter().all(|l| l.contains(" PASS ")));
    assert!(tmp.path().join("acceptance.json").exists());
}
