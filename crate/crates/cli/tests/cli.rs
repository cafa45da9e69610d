use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn locem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_locem"))
        .args(args)
        .current_dir(dir)
        .env_remove("LOCEM_THREADS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "n = 300\nclusters = 4\ndim = 3\nfolds = 3\nsweep = 1.5, 3\nlocal_max_iters = 20\nmc_draws = 8\nanchors = 2\nsensitivity_trials = 2\n{extra}"
    );
    fs::write(dir.join("small.cfg"), text).unwrap();
    "small.cfg".into()
}

#[test]
fn gen_writes_data_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = locem(&["gen", "--clusters", "3", "--dim", "2", "-n", "50", "-o", "d.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    let spec = fs::read_to_string(dir.path().join("d.csv.spec")).unwrap();
    assert!(spec.contains("clusters=3"));
}

#[test]
fn run_on_generated_file_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = locem(&["gen", "--clusters", "3", "--dim", "2", "-n", "120", "-o", "d.bin"], dir.path());
    assert!(out.status.success());
    fs::write(
        dir.path().join("file.cfg"),
        "data = d.bin\nfolds = 2\nsweep = 1, 2\nmethods = global-linear, local-linear, knn\nlocal_max_iters = 10\n",
    )
    .unwrap();
    let out = locem(&["run", "-c", "file.cfg", "-o", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["results.csv", "timings.csv", "summary.txt", "curves.svg"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert!(results.starts_with("method,sweepValue,fold,accuracy,meanRetrieved,fallbackRate"));
    assert_eq!(results.lines().count(), 1 + 3 * 2 * 2);
}

#[test]
fn select_best_flag_adds_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "methods = local-linear\n");
    let out = locem(&["run", "-c", &cfg, "--select-best", "-o", "out"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = fs::read_to_string(dir.path().join("out/results.csv")).unwrap();
    assert_eq!(results.lines().filter(|l| l.starts_with("local-linear[best],")).count(), 3);
}

#[test]
fn bounds_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = locem(&["bounds", "-c", &cfg, "-o", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("b/bounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("(I)") && text.contains("(II)") && text.contains("(III)"));
    assert!(dir.path().join("b/neighbor_counts.csv").exists());
}

#[test]
fn query_dumps_retrieved_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = locem(&["query", "-c", &cfg, "--row", "5", "-r", "2.5", "--dump", "set.csv"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("predicted class:"));
    let retrieved: usize = stdout
        .lines()
        .find_map(|l| l.strip_prefix("retrieved: "))
        .unwrap()
        .parse()
        .unwrap();
    let dump = fs::read_to_string(dir.path().join("set.csv")).unwrap();
    assert!(dump.starts_with("row,distance,label,x0,x1,x2"));
    assert_eq!(dump.lines().count(), 1 + retrieved);
    assert!(dump.lines().skip(1).all(|l| !l.starts_with("5,")));

    let out = locem(&["query", "-c", &cfg, "--point", "0,0,0", "-k", "4"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert_eq!(stdout.lines().skip_while(|l| !l.starts_with("row,")).count(), 5);
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "no_such_key = 1\n");
    let out = locem(&["run", "-c", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let out = Command::new(env!("CARGO_BIN_EXE_locem"))
        .args(["gen", "-n", "5", "-o", "x.csv"])
        .current_dir(dir.path())
        .env("LOCEM_THREADS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "methods = local-linear\n");
    let run = |threads: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_locem"))
            .args(["run", "-c", &cfg, "-o", out])
            .current_dir(dir.path())
            .env("LOCEM_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success());
        fs::read(dir.path().join(out).join("results.csv")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}
