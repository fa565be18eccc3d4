use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn tokgeo(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_tokgeo"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(s) = stdin {
            pipe.write_all(s.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn shuffle_round_trips_a_json_array() {
    let input: Vec<u32> = (0..64).collect();
    let text = serde_json::to_string(&input).unwrap();
    let out = tokgeo(&["shuffle", "--s", "2", "--seed", "5"], Some(&text));
    assert!(out.status.success());
    let got: Vec<u32> = serde_json::from_slice(&out.stdout).unwrap();
    assert_ne!(got, input);
    let mut sorted = got.clone();
    sorted.sort();
    assert_eq!(sorted, input);
    // 16 blocks of 4 contiguous tokens.
    for block in got.chunks(4) {
        assert_eq!(block[0] % 4, 0);
        assert!(block.windows(2).all(|w| w[1] == w[0] + 1));
    }
    let again = tokgeo(&["shuffle", "--s", "2", "--seed", "5"], Some(&text));
    assert_eq!(again.stdout, out.stdout);
    let other = tokgeo(
        &["shuffle", "--s", "2", "--seed", "5", "--prompt-id", "abc"],
        Some(&text),
    );
    assert_ne!(other.stdout, out.stdout);
}

#[test]
fn shuffle_zero_is_identity_and_full_uses_single_tokens() {
    let text = "[\"a\",\"b\",\"c\",\"d\",\"e\"]";
    let out = tokgeo(&["shuffle", "--s", "0", "--seed", "1"], Some(text));
    assert_eq!(json(&out), serde_json::json!(["a", "b", "c", "d", "e"]));
    let input: Vec<u32> = (0..16).collect();
    let out = tokgeo(
        &["shuffle", "--s", "full", "--seed", "2"],
        Some(&serde_json::to_string(&input).unwrap()),
    );
    let mut got: Vec<u32> = serde_json::from_slice(&out.stdout).unwrap();
    got.sort();
    assert_eq!(got, input);
}

#[test]
fn shuffle_errors_exit_with_two() {
    assert_eq!(
        tokgeo(&["shuffle", "--s", "3", "--seed", "1"], Some("[1,2,3]"))
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tokgeo(&["shuffle", "--s", "1", "--seed", "1"], Some("{}"))
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        tokgeo(&["shuffle", "--s", "1", "--seed", "1"], Some("[]"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn toy_emits_a_result() {
    let out = tokgeo(
        &[
            "toy",
            "--model",
            "unit-box",
            "--d",
            "16",
            "--samples",
            "20000",
            "--seed",
            "3",
        ],
        None,
    );
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["model"], "unit-box");
    assert_eq!(v["d_m"], 16);
    assert!((v["reference"].as_f64().unwrap() - 16f64.ln()).abs() < 1e-12);
    assert!((v["expected_entropy"].as_f64().unwrap() - 16f64.ln()).abs() < 0.1);

    let out = tokgeo(
        &[
            "toy",
            "--model",
            "dirichlet",
            "--d",
            "10",
            "--samples",
            "4096",
            "--bits",
        ],
        None,
    );
    let v = json(&out);
    assert_eq!(v["unit"], "bits");
    let h10 = (1..=10).map(|k| 1.0 / k as f64).sum::<f64>() - 1.0;
    assert!((v["reference"].as_f64().unwrap() - h10 / 2f64.ln()).abs() < 1e-12);
}

#[test]
fn synth_analyze_compare_and_correlate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tokgeo(
        &[
            "synth",
            "--out",
            p(&data),
            "--prompts",
            "4",
            "--layers",
            "2,4",
            "--tokens",
            "128",
            "--ambient",
            "8",
            "--vocab",
            "16",
            "--shuffles",
            "1,3",
        ],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let res = tmp.path().join("res");
    let out = tokgeo(
        &[
            "analyze",
            "--manifest",
            p(&manifest),
            "--out",
            p(&res),
            "--metrics",
            "id,no",
            "--scaling",
            "2,4",
            "--knn",
            "2,4",
            "--threads",
            "2",
            "--format",
            "csv",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(res.join("profiles")).unwrap().count(), 12);
    assert!(res.join("csv/id_s4.csv").exists());
    assert!(res.join("csv/overlap_k4.csv").exists());
    assert!(res.join("summary.json").exists());

    let cmp = tmp.path().join("cmp");
    let out = tokgeo(
        &[
            "compare-shuffles",
            "--manifest",
            p(&manifest),
            "--out",
            p(&cmp),
            "--shuffles",
            "1,3,5",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let c: serde_json::Value = serde_json::from_slice(&std::fs::read(cmp.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(c["groups"].as_array().unwrap().len(), 3);
    assert_eq!(c["missing"][0]["shuffle_index"], 5);

    let cor = tmp.path().join("cor");
    let out = tokgeo(
        &[
            "correlate",
            "--manifest",
            p(&manifest),
            "--out",
            p(&cor),
            "--metrics",
            "id",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let c: serde_json::Value = serde_json::from_slice(&std::fs::read(cor.join("correlation.json")).unwrap()).unwrap();
    assert_eq!(c["n_prompts"], 4);
}

#[test]
fn exit_codes_for_partial_and_fatal_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tokgeo(
        &[
            "synth",
            "--out",
            p(&data),
            "--prompts",
            "2",
            "--layers",
            "2",
            "--tokens",
            "64",
            "--ambient",
            "4",
        ],
        None,
    );
    assert!(out.status.success());
    let manifest = data.join("manifest.json");
    std::fs::write(data.join("synth-0000.tgeo"), b"TGEO").unwrap();
    let res = tmp.path().join("res");
    let out = tokgeo(&["analyze", "--manifest", p(&manifest), "--out", p(&res)], None);
    assert_eq!(out.status.code(), Some(1));
    let errors: serde_json::Value = serde_json::from_slice(&std::fs::read(res.join("errors.json")).unwrap()).unwrap();
    assert_eq!(errors["errors"][0]["prompt_id"], "synth-0000");

    let out = tokgeo(
        &[
            "analyze",
            "--manifest",
            p(&manifest),
            "--out",
            p(&res),
            "--scaling",
            "3",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = tokgeo(
        &["analyze", "--manifest", p(&manifest), "--out", p(&res), "--knn", "65"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = tokgeo(
        &["compare-shuffles", "--manifest", p(&manifest), "--out", p(&res)],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = tokgeo(&["correlate", "--manifest", p(&manifest), "--out", p(&res)], None);
    assert_eq!(out.status.code(), Some(2));
    let out = tokgeo(
        &[
            "analyze",
            "--manifest",
            p(&manifest),
            "--out",
            p(&res),
            "--metrics",
            "foo",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}
