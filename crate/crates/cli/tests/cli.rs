use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn kwass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwass")).args(args).output().unwrap()
}

fn kwass_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kwass"))
        .current_dir(dir)
        .env_remove("KWASS_WORKERS")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn matrix_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&kwass(&["--help"])), 0);
    assert_eq!(code(&kwass(&["--version"])), 0);
    assert_eq!(code(&kwass(&[])), 64);
    assert_eq!(code(&kwass(&["frobnicate"])), 64);
    assert_eq!(code(&kwass(&["distmat", "x.csv", "--no-such-flag"])), 64);
    assert_eq!(code(&kwass(&["distmat", "x.csv", "--metric", "cosine"])), 64);
}

#[test]
fn features_on_toy_images_and_constant_skip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "a.csv", "1,2,3\n4,5,6\n7,8,9\n");
    write(d, "b.csv", "9,1,9\n1,9,1\n9,1,3\n");
    let out = kwass_in(d, &["features", "a.csv", "b.csv", "-o", "f.csv"]);
    assert_eq!(code(&out), 0);
    let csv = read(d, "f.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("id,f01_autocorrelation,f02_joint_average"));
    assert!(lines[0].ends_with("f25_joint_variance"));
    assert!(lines[1].starts_with("a,") && lines[2].starts_with("b,"));
    for l in &lines[1..] {
        let vals: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        assert_eq!(vals.len(), 25);
        assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    write(d, "flat.csv", "4,4\n4,4\n");
    let out = kwass_in(d, &["features", "a.csv", "flat.csv", "b.csv", "-o", "g.csv"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping"));
    assert_eq!(read(d, "g.csv"), csv);

    let out = kwass_in(d, &["features", "flat.csv", "missing.csv", "-o", "h.csv"]);
    assert_eq!(code(&out), 1);
    assert!(!d.join("h.csv").exists());
}

#[test]
fn distmat_identical_rows_give_zero_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "s.csv", "id,a,b,c\nx,1,2,3\ny,1,2,3\nz,1,2,3\n");
    for m in ["w2", "kernel_w2", "kl_sym", "kernel_kl_sym", "mmd"] {
        assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--metric", m, "-o", "d.csv"])), 0, "{m}");
        let csv = read(d, "d.csv");
        assert_eq!(csv.lines().next().unwrap(), "x,y,z");
        assert!(matrix_rows(&csv).iter().flatten().all(|v| v.abs() < 1e-12), "{m}: {csv}");
    }
}

#[test]
fn distmat_formats_and_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "s.csv", "p,0\nq,1\nr,3\n");
    let out = kwass_in(d, &["distmat", "s.csv", "--metric", "mmd", "--kernel", "linear", "-o", "m.json"]);
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_str(&read(d, "m.json")).unwrap();
    assert_eq!(doc["metric"], "mmd");
    assert_eq!(doc["labels"], serde_json::json!(["p", "q", "r"]));
    let v = &doc["values"];
    assert_eq!((v[0][1].as_f64(), v[0][2].as_f64(), v[1][2].as_f64()), (Some(1.0), Some(9.0), Some(4.0)));

    // Long layout: rows are 2-D samples grouped by id.
    write(d, "long.csv", "id,x,y\na,0,0\na,1,0\nb,0,1\nb,2,2\nb,1,1\n");
    let out = kwass_in(d, &["distmat", "long.csv", "--columns-as-samples", "false", "--metric", "w2", "-o", "w.csv"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = matrix_rows(&read(d, "w.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows[0][1] > 0.0);

    let out = kwass_in(d, &["distmat", "s.csv", "--metric", "w2", "--squared", "false", "-o", "root.csv"]);
    assert_eq!(code(&out), 0);
    let out = kwass_in(d, &["distmat", "s.csv", "--metric", "w2", "-o", "sq.csv"]);
    assert_eq!(code(&out), 0);
    let (root, sq) = (matrix_rows(&read(d, "root.csv")), matrix_rows(&read(d, "sq.csv")));
    assert!((root[0][2] * root[0][2] - sq[0][2]).abs() < 1e-12);
}

#[test]
fn distmat_rejects_bad_combinations_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "s.csv", "x,1,2\ny,3,5\n");
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--metric", "w2", "--kernel", "rbf"])), 64);
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--metric", "kl_sym", "--gamma", "2"])), 64);
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--kernel", "linear", "--gamma", "2"])), 64);
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--gamma", "-1"])), 64);
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--metric", "kl_sym", "--squared", "false"])), 64);
    assert_eq!(code(&kwass_in(d, &["distmat", "s.csv", "--rho", "0"])), 64);
    write(d, "one.csv", "x,1,2\n");
    assert_eq!(code(&kwass_in(d, &["distmat", "one.csv"])), 1);
    write(d, "bad.csv", "x,1,2\ny,3,oops\n");
    assert_eq!(code(&kwass_in(d, &["distmat", "bad.csv"])), 1);
    write(d, "dup.csv", "x,1,2\nx,3,4\n");
    assert_eq!(code(&kwass_in(d, &["distmat", "dup.csv"])), 1);
    assert_eq!(code(&kwass_in(d, &["distmat", "absent.csv"])), 1);
}

#[test]
fn distmat_worker_count_does_not_change_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&kwass_in(d, &["synth", "--seed", "3", "--sets", "6", "-o", "syn"])), 0);
    for m in ["kernel_w2", "kernel_kl_sym"] {
        assert_eq!(code(&kwass_in(d, &["distmat", "syn/sets.csv", "--metric", m, "--workers", "1", "-o", "a.csv"])), 0);
        let env_run = Command::new(env!("CARGO_BIN_EXE_kwass"))
            .current_dir(d)
            .env("KWASS_WORKERS", "3")
            .args(["distmat", "syn/sets.csv", "--metric", m, "-o", "b.csv"])
            .status()
            .unwrap();
        assert!(env_run.success());
        assert_eq!(read(d, "a.csv"), read(d, "b.csv"));
    }
}

#[test]
fn cluster_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "z.csv", "a,b\n0,0\n0,0\n");
    assert_eq!(code(&kwass_in(d, &["cluster", "z.csv", "--k", "2", "--labels-out", "l.csv"])), 0);
    assert_eq!(read(d, "l.csv"), "id,label\na,0\nb,1\n");

    write(d, "h.csv", "A,B,C\n0,1,5\n1,0,5\n5,5,0\n");
    let out = kwass_in(
        d,
        &[
            "cluster",
            "h.csv",
            "--labels-out",
            "l.csv",
            "--dendrogram-out",
            "t.json",
            "--emit-heatmap-csv",
            "heat.csv",
            "--emit-scatter-csv",
            "sc.csv",
            "--compare",
            "h.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(d, "l.csv"), "id,label\nA,0\nB,0\nC,1\n");
    let tree: Value = serde_json::from_str(&read(d, "t.json")).unwrap();
    assert_eq!(tree["linkage"], "average");
    assert_eq!(tree["merges"][0]["height"], 1.0);
    assert_eq!(tree["merges"][1]["height"], 5.0);
    assert_eq!(tree["labels"], serde_json::json!(["A", "B", "C"]));
    let heat = read(d, "heat.csv");
    assert_eq!(heat.lines().count(), 10);
    assert!(heat.lines().nth(1).unwrap().starts_with("0,0,A,A,0,0,"));
    let scatter = read(d, "sc.csv");
    assert_eq!(scatter.lines().count(), 4);
    assert!(scatter.contains("A,B,within_0,"));
    assert!(scatter.contains("A,C,between_0_1,"));

    assert_eq!(code(&kwass_in(d, &["cluster", "h.csv", "--k", "4", "--labels-out", "x.csv"])), 64);
    assert_eq!(code(&kwass_in(d, &["cluster", "h.csv", "--k", "0", "--labels-out", "x.csv"])), 64);
    write(d, "asym.csv", "A,B\n0,1\n2,0\n");
    assert_eq!(code(&kwass_in(d, &["cluster", "asym.csv", "--labels-out", "x.csv"])), 1);
    write(d, "nan.csv", "A,B\n0,NaN\nNaN,0\n");
    assert_eq!(code(&kwass_in(d, &["cluster", "nan.csv", "--labels-out", "x.csv"])), 1);
    assert!(!d.join("x.csv").exists());
}

fn labelled(d: &Path, table: [[usize; 2]; 2]) {
    let mut labels = String::from("id,label\n");
    let mut truth = String::from("id,class\n");
    let mut k = 0;
    for (cluster, row) in table.iter().enumerate() {
        for (class, &count) in ["clean", "noisy"].iter().zip(row) {
            for _ in 0..count {
                labels.push_str(&format!("s{k},{cluster}\n"));
                truth.push_str(&format!("s{k},{class}\n"));
                k += 1;
            }
        }
    }
    write(d, "labels.csv", &labels);
    write(d, "truth.csv", &truth);
}

fn eval_report(d: &Path) -> Value {
    let out = kwass_in(d, &["eval", "--labels", "labels.csv", "--truth", "truth.csv", "-o", "r.json"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&read(d, "r.json")).unwrap()
}

#[test]
fn eval_examples() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    labelled(d, [[658, 8], [230, 268]]);
    let r = eval_report(d);
    assert_eq!(r["contingency"]["counts"], serde_json::json!([[658, 8], [230, 268]]));
    assert!((r["chi_square"].as_f64().unwrap() - 436.0).abs() <= 0.5);
    assert!((r["noisy_rate"].as_f64().unwrap() * 100.0 - 97.10).abs() <= 0.01);
    assert!((r["clean_rate"].as_f64().unwrap() * 100.0 - 74.10).abs() <= 0.01);
    assert!((r["overall"].as_f64().unwrap() * 100.0 - 79.6).abs() <= 0.05);
    assert_eq!(r["noisy_cluster"], "1");

    labelled(d, [[30, 0], [0, 30]]);
    let r = eval_report(d);
    assert!((r["chi_square"].as_f64().unwrap() - 60.0).abs() < 1e-9);
    assert_eq!(r["noisy_rate"], 1.0);
    assert_eq!(r["clean_rate"], 1.0);

    labelled(d, [[10, 10], [10, 10]]);
    let r = eval_report(d);
    assert!(r["chi_square"].as_f64().unwrap().abs() < 1e-12);

    // Mismatched ids are an input error.
    write(d, "truth.csv", "id,class\ns0,clean\n");
    let out = kwass_in(d, &["eval", "--labels", "labels.csv", "--truth", "truth.csv"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for out in ["a", "b"] {
        assert_eq!(code(&kwass_in(d, &["synth", "--seed", "9", "--per-class", "5", "--samples", "7", "-o", out])), 0);
    }
    assert_eq!(read(d, "a/sets.csv"), read(d, "b/sets.csv"));
    assert_eq!(read(d, "a/truth.csv"), read(d, "b/truth.csv"));
    assert_eq!(read(d, "a/sets.csv").lines().count(), 11);
    assert!(read(d, "a/sets.csv").starts_with("id,s01,s02,s03,s04,s05,s06,s07\n"));
    assert_eq!(code(&kwass_in(d, &["synth", "--sets", "5", "-o", "c"])), 64);
    assert_eq!(code(&kwass_in(d, &["synth", "--seed", "1", "--sets", "0", "-o", "c"])), 64);
}

fn pipeline_chi_square(d: &Path, metric: &str) -> f64 {
    assert_eq!(code(&kwass_in(d, &["distmat", "syn/sets.csv", "--metric", metric, "-o", "d.csv"])), 0);
    assert_eq!(code(&kwass_in(d, &["cluster", "d.csv", "--labels-out", "l.csv"])), 0);
    assert_eq!(code(&kwass_in(d, &["eval", "--labels", "l.csv", "--truth", "syn/truth.csv", "-o", "r.json"])), 0);
    let r: Value = serde_json::from_str(&read(d, "r.json")).unwrap();
    r["chi_square"].as_f64().unwrap()
}

#[test]
fn synth_without_separation_gives_no_signal() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["synth", "--seed", "11", "--sets", "60", "--separation", "0", "-o", "syn"];
    assert_eq!(code(&kwass_in(d, &args)), 0);
    for m in ["w2", "kernel_w2"] {
        // 10.83 is the 0.999 quantile of χ² with one degree of freedom.
        let chi = pipeline_chi_square(d, m);
        assert!(chi < 10.83, "{m}: {chi}");
    }
}

#[test]
fn synth_with_large_separation_recovers_classes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = ["synth", "--seed", "4", "--sets", "30", "--separation", "2.5", "-o", "syn"];
    assert_eq!(code(&kwass_in(d, &args)), 0);
    assert_eq!(pipeline_chi_square(d, "kernel_w2"), 60.0);
}

/// Full-size run: 1164 sets of 25 scalar samples.
#[test]
#[ignore = "several minutes on a single core"]
fn full_scale_distance_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&kwass_in(d, &["synth", "--seed", "1", "--sets", "582", "-o", "syn"])), 0);
    let out = kwass_in(d, &["distmat", "syn/sets.csv", "--metric", "kernel_w2", "-o", "d.json"]);
    assert_eq!(code(&out), 0);
    let m = kwass::DistanceMatrix::from_json(&read(d, "d.json")).unwrap();
    assert_eq!(m.len(), 1164);
    m.validate().unwrap();
}
