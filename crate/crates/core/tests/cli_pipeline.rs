mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use xmodal_curriculum::alignment_lesson::TextImagePair;
use xmodal_curriculum::bench_eval::BenchmarkReport;
use xmodal_curriculum::curriculum::read_plan;
use xmodal_curriculum::ingest::{self, write_embeddings};
use xmodal_curriculum::rng::SeededRng;
use xmodal_curriculum::trainer::LabeledSample;
use xmodal_curriculum::{Domain, SampleId};

const XMC: &str = env!("CARGO_BIN_EXE_xmc");

fn xmc(args: &[&str]) -> (i32, String) {
    let out = Command::new(XMC).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn run_ok(args: &[&str]) {
    let (code, stderr) = xmc(args);
    assert_eq!(code, 0, "xmc {args:?}: {stderr}");
}

struct Inputs {
    dir: PathBuf,
}

impl Inputs {
    fn path(&self, name: &str) -> String {
        self.dir.join(name).to_string_lossy().into_owned()
    }
}

fn write_inputs(dir: &Path) -> Inputs {
    let set = common::embedding_set(1, 24, 16, 5, 1.0);
    write_embeddings(&set, &dir.join("embeddings.jsonl")).unwrap();

    let mut rng = SeededRng::new(2);
    let ir: Vec<SampleId> = set.domain(Domain::Infrared).map(|s| s.id.clone()).collect();
    let pairs: Vec<TextImagePair> = ir
        .iter()
        .map(|id| {
            let image_vector = common::vector(&mut rng, 6, 0.0);
            let text_vector = image_vector.iter().take(4).map(|v| v + 0.3 * rng.normal()).collect();
            TextImagePair { id: id.clone(), image_vector, text_vector }
        })
        .collect();
    ingest::write_jsonl(&dir.join("paired.jsonl"), None::<&()>, &pairs).unwrap();

    let labeled: Vec<LabeledSample> = ir
        .iter()
        .map(|id| {
            let label = rng.below(2);
            let features = vec![label as f64 * 2.0 - 1.0 + rng.normal() * 0.5, rng.normal()];
            LabeledSample { id: id.clone(), features, label }
        })
        .collect();
    ingest::write_jsonl(&dir.join("train.jsonl"), None::<&()>, &labeled).unwrap();

    let anns: Vec<_> = (0..50).map(|i| common::random_annotation(&mut rng, i)).collect();
    ingest::write_jsonl(&dir.join("annotations.jsonl"), None::<&()>, &anns).unwrap();
    std::fs::write(dir.join("vocabulary.txt"), common::VOCABULARY.join("\n")).unwrap();
    std::fs::write(dir.join("scenes.txt"), common::SCENES.join("\n")).unwrap();

    let row = [85.12, 99.79, 51.58, 98.69, 50.79, 99.82, 3.32, 0.25, 0.82];
    let per_task: BTreeMap<&str, f64> = [
        "scene", "recognition", "grounding", "relationship", "reid", "security",
        "location", "aerial_counting", "pedestrian_counting",
    ]
    .into_iter()
    .zip(row)
    .collect();
    std::fs::write(dir.join("per_task.json"), serde_json::to_string(&per_task).unwrap()).unwrap();
    Inputs { dir: dir.to_path_buf() }
}

fn pipeline(inputs: &Inputs, out: &Path) {
    let out = out.to_string_lossy().into_owned();
    let o = |name: &str| format!("{out}/{name}");
    run_ok(&["score-visual", "--embeddings", &inputs.path("embeddings.jsonl"), "--out", &out]);
    run_ok(&["score-alignment", "--paired", &inputs.path("paired.jsonl"), "--seed", "3", "--epochs", "20", "--out", &out]);
    run_ok(&["fuse", "--visual-scores", &o("visual_scores.jsonl"), "--alignment-scores", &o("alignment_scores.jsonl"), "--out", &out]);
    run_ok(&["schedule", "--fused", &o("fused_ranking.jsonl"), "--tiers", "4", "--seed", "9", "--out", &out]);
    run_ok(&[
        "train", "--data", &inputs.path("train.jsonl"), "--plan", &o("plan.jsonl"),
        "--alignment-scores", &o("alignment_scores.jsonl"), "--use-weights",
        "--epochs", "3", "--batch-size", "4", "--seed", "1", "--out", &out,
    ]);
    run_ok(&[
        "generate-pairs", "--annotations", &inputs.path("annotations.jsonl"),
        "--vocabulary", &inputs.path("vocabulary.txt"), "--scenes", &inputs.path("scenes.txt"),
        "--seed", "4", "--retain-rate", "0.5", "--out", &out,
    ]);
    run_ok(&["evaluate", "--per-task", &inputs.path("per_task.json"), "--out", &out]);
    run_ok(&["histogram", "--visual-scores", &o("visual_scores.jsonl"), "--alignment-scores", &o("alignment_scores.jsonl"), "--out", &out]);
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn full_pipeline_is_byte_identical_and_leaves_inputs_alone() {
    let root = tempfile::tempdir().unwrap();
    let input_dir = root.path().join("in");
    std::fs::create_dir(&input_dir).unwrap();
    let inputs = write_inputs(&input_dir);
    let before = snapshot(&input_dir);

    pipeline(&inputs, &root.path().join("run1"));
    pipeline(&inputs, &root.path().join("run2"));
    let a = snapshot(&root.path().join("run1"));
    let b = snapshot(&root.path().join("run2"));
    let names: Vec<&str> = a.keys().map(String::as_str).collect();
    assert_eq!(
        names,
        [
            "alignment_scores.jsonl", "captions.jsonl", "fused_ranking.jsonl", "histogram.json",
            "plan.jsonl", "qa.jsonl", "report.json", "train_report.json", "visual_scores.jsonl",
        ]
    );
    assert_eq!(a, b);
    assert_eq!(snapshot(&input_dir), before);

    let report: BenchmarkReport =
        serde_json::from_slice(&a["report.json"]).unwrap();
    assert!((report.psum - 485.79).abs() < 0.005);
    assert!((report.nsum - 4.39).abs() < 0.005);

    let hist: serde_json::Value = serde_json::from_slice(&a["histogram.json"]).unwrap();
    assert_eq!(hist["d"]["counts"].as_array().unwrap().len(), 50);
    assert_eq!(hist["d"]["edges"].as_array().unwrap().len(), 51);
    assert_eq!(hist["l_prime"]["counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum::<u64>(), 24);

    let captions = String::from_utf8(a["captions.jsonl"].clone()).unwrap();
    assert_eq!(captions.lines().count(), 25);
}

#[test]
fn schedule_over_six_samples_honors_tiers() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<SampleId> = (0..6).map(|i| SampleId::new(format!("s{i}"))).collect();
    let fused = xmodal_curriculum::curriculum::fuse_rankings(&ids, &ids).unwrap();
    let fpath = dir.path().join("fused.jsonl");
    xmodal_curriculum::curriculum::write_fused_ranking(&fpath, &fused).unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    run_ok(&[
        "schedule", "--fused", fpath.to_str().unwrap(), "--tiers", "3",
        "--schedule", "ascending-stratified-random", "--seed", "1", "--out", &out,
    ]);
    let plan = read_plan(&dir.path().join("plan.jsonl")).unwrap();
    assert_eq!(plan.order.len(), 6);
    let tiers: Vec<usize> = plan.order.iter().map(|e| e.tier).collect();
    assert_eq!(tiers, [0, 0, 1, 1, 2, 2]);
    for e in &plan.order {
        let idx: usize = e.id.as_str()[1..].parse().unwrap();
        assert_eq!(idx / 2, e.tier);
    }
}

#[test]
fn config_file_supplies_settings_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<SampleId> = (0..10).map(|i| SampleId::new(format!("s{i}"))).collect();
    let fused = xmodal_curriculum::curriculum::fuse_rankings(&ids, &ids).unwrap();
    let fpath = dir.path().join("fused.jsonl");
    xmodal_curriculum::curriculum::write_fused_ranking(&fpath, &fused).unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!("fused = {}\nout = {}\ntiers = 2\nseed = 5\n", fpath.display(), out.display()),
    )
    .unwrap();
    run_ok(&["schedule", "--config", cfg.to_str().unwrap(), "--tiers", "5"]);
    let plan = read_plan(&out.join("plan.jsonl")).unwrap();
    assert_eq!(plan.header.tiers, 5);
    assert_eq!(plan.header.seed, 5);
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_string_lossy().into_owned();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"a\", \"domain\": \"infrared\"}\n").unwrap();
    let same = dir.path().join("same.jsonl");
    std::fs::write(
        &same,
        "{\"id\":\"a\",\"domain\":\"infrared\",\"vector\":[1.0,2.0]}\n{\"id\":\"b\",\"domain\":\"visible\",\"vector\":[1.0,2.0]}\n",
    )
    .unwrap();

    assert_eq!(xmc(&["score-visual", "--out", &out]).0, 2);
    assert_eq!(xmc(&["score-visual", "--embeddings", "/no/such/file.jsonl", "--out", &out]).0, 3);
    let (code, stderr) = xmc(&["score-visual", "--embeddings", bad.to_str().unwrap(), "--out", &out]);
    assert_eq!(code, 4);
    assert!(stderr.contains("line 1"), "{stderr}");
    assert_eq!(xmc(&["score-visual", "--embeddings", same.to_str().unwrap(), "--bandwidth", "1.0", "--out", &out]).0, 5);
    assert_eq!(xmc(&["score-visual", "--embeddings", same.to_str().unwrap(), "--bandwidth", "wide", "--out", &out]).0, 2);
}
