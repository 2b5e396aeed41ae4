use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn treetest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treetest")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn star(m: usize) -> String {
    let mut s = String::from("# star\n");
    for i in 1..=m {
        s += &format!("EDGE H X{i}\n");
    }
    for i in 1..=m {
        s += &format!("OBS X{i}\n");
    }
    s
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn enumerate_star_of_four() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write(dir.path(), "s.tree", &star(4));
    let out = stdout(&treetest(&["enumerate", "--tree", p(&tree)]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "constraint_id,kind,indices,polynomial");
    assert_eq!(lines[1], r#"1,QuadDegenerate,"{1,2,3,4}",s14*s23 - s13*s24"#);
    assert_eq!(lines[2], r#"2,QuadDegenerate,"{1,2,3,4}",s12*s34 - s13*s24"#);
    assert_eq!(lines.len(), 3);
}

#[test]
fn enumerate_observed_chain() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write(dir.path(), "c.tree", "EDGE 1 2\nEDGE 2 3\nOBS 1\nOBS 2\nOBS 3\n");
    let out = stdout(&treetest(&["enumerate", "--tree", p(&tree), "--mode", "all"]));
    let lines: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(lines, ["1,Chain,1-2-3,s12*s23 - s22*s13", "2,TripleSign,\"{1,2,3}\",-s12*s13*s23"]);
}

#[test]
fn malformed_tree_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write(dir.path(), "bad.tree", "EDGE H X1\n\nEDGE H\n");
    let o = treetest(&["enumerate", "--tree", p(&tree)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn generate_then_test() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write(dir.path(), "s.tree", &star(6));
    let data = dir.path().join("d.csv");
    stdout(&treetest(&["generate", "--setup", "1", "--m", "6", "--n", "300", "--seed", "2", "--out", p(&data)]));
    let text = fs::read_to_string(&data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "X1,X2,X3,X4,X5,X6");
    assert_eq!(text.lines().count(), 301);

    let json = stdout(&treetest(&["test", "--tree", p(&tree), "--data", p(&data), "--seed", "1"]));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["k_effective"], 30);
    assert_eq!(v["reject"], v["statistic"].as_f64() > v["quantile"].as_f64());
    for key in ["statistic", "quantile", "p_value", "seed", "diag_floor_hits"] {
        assert!(v.get(key).is_some(), "{key}");
    }

    // null data are accepted most of the time
    let mut rejections = 0;
    for seed in 10..20 {
        let d = dir.path().join(format!("d{seed}.csv"));
        let seed = seed.to_string();
        stdout(&treetest(&["generate", "--setup", "1", "--m", "6", "--n", "300", "--seed", &seed, "--out", p(&d)]));
        let json = stdout(&treetest(&["test", "--tree", p(&tree), "--data", p(&d), "--seed", &seed]));
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        rejections += usize::from(v["reject"] == true);
    }
    assert!(rejections <= 3, "{rejections} of 10 null data sets rejected");

    let wrong = write(dir.path(), "s5.tree", &star(5));
    let o = treetest(&["test", "--tree", p(&wrong), "--data", p(&data)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("columns"));
}

#[test]
fn violating_data_is_rejected() {
    // two blocks of strongly correlated variables, independent of each other
    let dir = tempfile::tempdir().unwrap();
    let tree = write(
        dir.path(),
        "t.tree",
        "EDGE h a\nEDGE h b\nEDGE h c\nEDGE h d\nOBS a\nOBS b\nOBS c\nOBS d\n",
    );
    let params = write(dir.path(), "p.txt", "CORR h a 0.9\nCORR h b 0.9\nCORR h c 0.9\nCORR h d 0.9\n");
    let block = dir.path().join("x.csv");
    stdout(&treetest(&["generate", "--tree", p(&tree), "--params", p(&params), "--n", "2000", "--seed", "4", "--out", p(&block)]));
    // swap in an independent copy of columns c, d
    let other = dir.path().join("y.csv");
    stdout(&treetest(&["generate", "--tree", p(&tree), "--params", p(&params), "--n", "2000", "--seed", "5", "--out", p(&other)]));
    let a: Vec<String> = fs::read_to_string(&block).unwrap().lines().map(String::from).collect();
    let b: Vec<String> = fs::read_to_string(&other).unwrap().lines().map(String::from).collect();
    let mixed: Vec<String> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let (x, y): (Vec<&str>, Vec<&str>) = (x.split(',').collect(), y.split(',').collect());
            format!("{},{},{},{}", x[0], x[1], y[2], y[3])
        })
        .collect();
    let data = write(dir.path(), "mixed.csv", &(mixed.join("\n") + "\n"));
    let o = treetest(&["test", "--tree", p(&tree), "--data", p(&data), "--exit-on-reject"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    let o = treetest(&["test", "--tree", p(&tree), "--data", p(&data)]);
    assert!(o.status.success());
}

#[test]
fn simulate_single_replication() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("size.csv");
    stdout(&treetest(&["simulate", "--m", "5", "--n", "60", "--reps", "1", "--multipliers", "100", "--out", p(&out)]));
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 99);
    for r in rows {
        let f: Vec<&str> = r.split(',').collect();
        assert!(f[1] == "0" || f[1] == "1", "{r}");
        assert_eq!(f[2], "1");
    }
    let svg = fs::read_to_string(out.with_extension("svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.matches("<circle").count() == 99);
}

#[test]
fn check_metric_on_induced_and_perturbed_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let tree = write(dir.path(), "s.tree", &star(4));
    // unit edge weights: every pair at distance 2
    let good = write(dir.path(), "d.csv", "0,2,2,2\n2,0,2,2\n2,2,0,2\n2,2,2,0\n");
    let out = stdout(&treetest(&["check-metric", "--data", p(&good), "--tree", p(&tree)]));
    assert!(out.starts_with("induced: true"));
    let bad = write(dir.path(), "e.csv", "a,b,c,d\n0,2,2,2\n2,0,2,2.5\n2,2,0,2\n2,2.5,2,0\n");
    let o = treetest(&["check-metric", "--data", p(&bad), "--tree", p(&tree), "--exit-on-reject"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FourPointEquality"));
}
