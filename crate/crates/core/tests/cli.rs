use std::process::{Command, Output};

const HEADER: &str = "method,n,c,h,w,ph,pw,model_flops,counted_flops,affinity_elements,wall_time_ns,reps";

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_issa-bench"))
        .args(args)
        .env_remove("ISSA_SEED")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Rows with the wall-time column removed.
fn without_time(csv: &str) -> Vec<String> {
    csv.lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(10);
            f.join(",")
        })
        .collect()
}

const SMALL: [&str; 10] = ["sweep", "--sizes", "4,8", "--channels", "4", "--reps", "2", "--warmup", "0", "--methods"];

#[test]
fn verify_passes_with_many_properties() {
    let o = bench(&["verify"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 12);
}

#[test]
fn skipped_short_pass_breaks_connectivity() {
    let o = bench(&["verify", "--fault", "skip-short-pass"]);
    let text = stdout(&o);
    assert!(!o.status.success());
    assert!(text.contains("FAIL connectivity-long-first"));
    // block-structured zero pattern is printed
    assert!(text.contains("#.#....."));
    assert!(String::from_utf8_lossy(&o.stderr).contains("connectivity"));
}

#[test]
fn unnormalized_softmax_breaks_row_sums() {
    let o = bench(&["verify", "--fault", "no-softmax-norm"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL row-sums"));
}

#[test]
fn sweep_csv_schema_and_counts() {
    let mut args = SMALL.to_vec();
    args.push("sa,issa,sa-down2");
    let o = bench(&args);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r[7], r[8], "model vs counted in {r:?}");
        if r[0] != "issa" {
            assert_eq!((r[5], r[6]), ("0", "0"));
        }
    }
    let down8 = rows.iter().find(|r| r[0] == "sa-down2" && r[3] == "8").unwrap();
    assert_eq!(down8[9], (64 * 16).to_string());
}

#[test]
fn sweep_is_deterministic() {
    let mut args = SMALL.to_vec();
    args.extend(["sa,issa,issa-short-first", "--seed", "17", "--batch", "2"]);
    let a = stdout(&bench(&args));
    let b = stdout(&bench(&args));
    assert_eq!(without_time(&a), without_time(&b));
}

#[test]
fn empty_sizes_give_header_only() {
    let o = bench(&["sweep", "--sizes", ""]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), format!("{HEADER}\n"));
}

#[test]
fn incompatible_partition_is_skipped() {
    let o = bench(&["sweep", "--sizes", "6", "--channels", "2", "--reps", "1", "--warmup", "0", "--methods", "issa", "--partitions", "4,2x3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("issa,1,2,6,6,2,3,"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("skipping"));
}

#[test]
fn json_output_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.json");
    let o = bench(&["sweep", "--sizes", "4", "--channels", "2", "--reps", "1", "--warmup", "0", "--format", "json", "--out", path.to_str().unwrap()]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for field in HEADER.split(',') {
        assert!(rows[0].get(field).is_some(), "{field}");
    }
}

#[test]
fn seed_environment_variable_overrides_flag() {
    let run = |env: Option<&str>, seed: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_issa-bench"));
        cmd.args(["sweep", "--sizes", "4", "--channels", "2", "--reps", "1", "--warmup", "0", "--seed", seed]);
        match env {
            Some(v) => cmd.env("ISSA_SEED", v),
            None => cmd.env_remove("ISSA_SEED"),
        };
        cmd.output().unwrap()
    };
    assert!(run(Some("5"), "9").status.success());
    assert!(!run(Some("not-a-number"), "9").status.success());
}

#[test]
fn ablation_marks_optimum() {
    let o = bench(&["ablate", "--sizes", "4", "--partitions", "1,2,4", "--channels", "2", "--reps", "1", "--warmup", "0"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("{HEADER},optimal"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 9);
    for r in rows {
        let p: usize = r[5].parse::<usize>().unwrap() * r[6].parse::<usize>().unwrap();
        assert_eq!(r[12] == "true", p == 4, "{r:?}");
    }
}

#[test]
fn single_pair_ablation_is_optimal() {
    let o = bench(&["ablate", "--sizes", "4", "--partitions", "2", "--channels", "2", "--reps", "1", "--warmup", "0"]);
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().nth(1).unwrap().ends_with(",true"));
}

#[test]
fn unknown_method_fails() {
    let o = bench(&["sweep", "--sizes", "4", "--methods", "dense"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
}
