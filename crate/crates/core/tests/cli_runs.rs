mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;
use serde_json::Value;

fn tabprep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabprep"))
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn without_wall_time(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("wall_time_ms");
    v
}

/// Writes `n` prefixed entity pairs; pair `i` matches when `i` is even.
fn write_pairs(dir: &Path, n: usize) {
    let mut text = String::from("left_name,left_city,right_name,right_city,label\n");
    for i in 0..n {
        let right = if i % 2 == 0 {
            format!("cafe {i}")
        } else {
            format!("diner {i}")
        };
        text.push_str(&format!(
            "cafe {i},springfield,{right},springfield,{}\n",
            (i % 2 == 0) as u8
        ));
    }
    fs::write(dir.join("pairs.csv"), text).unwrap();
}

fn write_config(dir: &Path, batch_size: usize, answer: &str) -> std::path::PathBuf {
    let cfg = format!(
        r#"[task]
kind = "entity_matching"

[data]
dataset = "pairs.csv"

[batching]
batch_size = {batch_size}
seed = 3

[model]
name = "gpt-4o"
prices = {{ prompt_micro_per_1k = 2500, completion_micro_per_1k = 10000 }}

[backend]
kind = "mock"
mock = {{ default_answer = "{answer}", default_reason = "Names and cities compared." }}
"#
    );
    let path = dir.join("config.toml");
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn replaying_the_fixture_reproduces_its_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let cfg = fixture("fodors_zagats/config.toml");
    let o = tabprep(&["run", "-c", path_str(&cfg), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let expected = read_json(&fixture("fodors_zagats/expected_report.json"));
    assert_eq!(
        without_wall_time(read_json(&out.join("report.json"))),
        expected
    );
    // tp 9, tn 11 on the shipped pairs
    assert_eq!(expected["counts"]["tp"], 9);
    assert_eq!(expected["counts"]["tn"], 11);
    assert_eq!(expected["metric"]["f1"], 1.0);

    for name in [
        "config.toml",
        "plan.json",
        "transcript.jsonl",
        "report.json",
        "predictions.jsonl",
        "manifest.json",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    assert!(out.join("prompts/batch-0001.txt").is_file());
    assert!(out.join("prompts/batch-0002.txt").is_file());
    assert_eq!(read_json(&out.join("manifest.json"))["status"], "complete");
    let predictions = fs::read_to_string(out.join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 20);

    let o = tabprep(&["evaluate", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn dry_run_writes_one_prompt_per_batch() {
    let tmp = tempfile::tempdir().unwrap();
    write_pairs(tmp.path(), 100);
    let cfg = write_config(tmp.path(), 10, "yes");
    let out = tmp.path().join("dry");
    let o = tabprep(&["dry-run", "-c", path_str(&cfg), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let prompts: Vec<_> = fs::read_dir(out.join("prompts"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    assert_eq!(prompts.len(), 10);
    let plan = read_json(&out.join("plan.json"));
    assert_eq!(plan["batches"].as_array().unwrap().len(), 10);
    assert!(!out.join("report.json").exists());
    assert!(!out.join("transcript.jsonl").exists());
}

#[test]
fn dry_run_golden_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let golden = tmp.path().join("golden");
    fs::create_dir(&golden).unwrap();
    fs::copy(
        fixture("golden/restaurant_di.txt"),
        golden.join("batch-0001.txt"),
    )
    .unwrap();
    let cfg = fixture("restaurant/config.toml");

    let out = tmp.path().join("a");
    let o = tabprep(&[
        "dry-run",
        "-c",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--golden",
        path_str(&golden),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let text = fs::read_to_string(golden.join("batch-0001.txt")).unwrap();
    fs::write(
        golden.join("batch-0001.txt"),
        text.replace("two lines", "2 lines"),
    )
    .unwrap();
    let out = tmp.path().join("b");
    let o = tabprep(&[
        "dry-run",
        "-c",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--golden",
        path_str(&golden),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("batch-0001.txt"));
}

#[test]
fn always_yes_on_balanced_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    write_pairs(tmp.path(), 10);
    let cfg = write_config(tmp.path(), 5, "yes");
    let out = tmp.path().join("run");
    let o = tabprep(&["run", "-c", path_str(&cfg), "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["metric"]["precision"], 0.5);
    assert_eq!(report["metric"]["recall"], 1.0);
    let f1 = report["metric"]["f1"].as_f64().unwrap();
    assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&o.stdout).contains("66.7%"));
}

#[test]
fn existing_run_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    write_pairs(tmp.path(), 4);
    let cfg = write_config(tmp.path(), 2, "no");
    let out = tmp.path().join("run");
    assert!(
        tabprep(&["run", "-c", path_str(&cfg), "--out", path_str(&out)])
            .status
            .success()
    );
    let o = tabprep(&["run", "-c", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_lists_each_batch_size() {
    let tmp = tempfile::tempdir().unwrap();
    write_pairs(tmp.path(), 60);
    let cfg = write_config(tmp.path(), 10, "yes");
    let o = tabprep(&["estimate", "-c", path_str(&cfg), "--sizes", "1,2,4,8,15"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let tokens: Vec<u64> = stdout
        .lines()
        .filter_map(|l| {
            let cols: Vec<&str> = l.split_whitespace().collect();
            match cols.first()?.parse::<usize>() {
                Ok(b) if [1, 2, 4, 8, 15].contains(&b) => cols.get(2)?.parse().ok(),
                _ => None,
            }
        })
        .collect();
    assert_eq!(tokens.len(), 5, "{stdout}");
    assert!(tokens.windows(2).all(|w| w[0] > w[1]), "{stdout}");

    let o = tabprep(&["estimate", "-c", path_str(&cfg), "--sizes", "10"]);
    assert!(o.status.success());
}

#[test]
fn missing_config_is_a_config_error() {
    let o = tabprep(&["run", "-c", "/nonexistent/tabprep.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn http_without_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    write_pairs(tmp.path(), 2);
    let cfg = write_config(tmp.path(), 2, "yes");
    let out = tmp.path().join("run");
    let o = tabprep(&[
        "run",
        "-c",
        path_str(&cfg),
        "--backend",
        "http",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn interrupted_run_resumes_without_resending() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["pairs.csv", "mock_answers.jsonl", "config.toml"] {
        fs::copy(
            fixture(&format!("fodors_zagats/{name}")),
            tmp.path().join(name),
        )
        .unwrap();
    }
    // keep only the first recorded batch so the second one misses
    let full = fs::read_to_string(fixture("fodors_zagats/transcript.jsonl")).unwrap();
    fs::write(
        tmp.path().join("transcript.jsonl"),
        full.lines().next().unwrap().to_owned() + "\n",
    )
    .unwrap();
    let cfg = tmp.path().join("config.toml");
    let out = tmp.path().join("run");

    let o = tabprep(&[
        "run",
        "-c",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--workers",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "failed");
    assert_eq!(manifest["completed"].as_array().unwrap().len(), 1);

    let o = tabprep(&[
        "run",
        "-c",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--resume",
        "--backend",
        "mock",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["status"], "complete");
    let transcript = fs::read_to_string(out.join("transcript.jsonl")).unwrap();
    assert_eq!(transcript.lines().count(), 2);

    let report = read_json(&out.join("report.json"));
    let expected = read_json(&fixture("fodors_zagats/expected_report.json"));
    for key in ["counts", "metric", "tokens", "cost", "config_fingerprint"] {
        assert_eq!(report[key], expected[key], "{key}");
    }
}

#[test]
fn init_writes_a_loadable_template() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("t.toml");
    assert!(tabprep(&["init", path_str(&path)]).status.success());
    assert!(fs::read_to_string(&path).unwrap().contains("[backend]"));
    assert_eq!(tabprep(&["init", path_str(&path)]).status.code(), Some(2));
    assert!(tabprep(&["init", path_str(&path), "--force"])
        .status
        .success());
}

#[test]
fn ablation_writes_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("abl");
    let cfg = fixture("restaurant/config.toml");
    let o = tabprep(&[
        "ablate",
        "-c",
        path_str(&cfg),
        "--out",
        path_str(&out),
        "--grid",
        "ZS-T,ZS-T+FS+B+ZS-R",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[0].starts_with("components,metric,value_pct"));
    assert!(lines[1].starts_with("ZS-T,"));
    assert!(lines[2].starts_with("ZS-T+FS+B+ZS-R,"));
    assert!(out.join("ablation.json").is_file());
}
