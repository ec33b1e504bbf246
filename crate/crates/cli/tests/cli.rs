use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use imageshare_core::data::{
    write_annotations, write_dialogues, AnnotationRecord, Dialogue, ImageRef, IntentLabel, Turn,
};
use serde_json::Value;
use tempfile::TempDir;

const LINES: [&str; 6] = [
    "I went to the bakery this morning.",
    "Oh nice, what did you get there?",
    "A strawberry cake with lots of cream on top.",
    "That sounds delicious, I love cake.",
    "We should bake one together next weekend.",
    "Sure, my oven is big enough for two.",
];

/// `n` dialogues; every one but each third has a share turn at index 4.
fn fixture(dir: &Path, n: usize) {
    let mut dialogues = Vec::new();
    let mut anns = Vec::new();
    for i in 0..n {
        let id = format!("d{i:02}");
        let mut turns: Vec<Turn> = LINES.iter().enumerate().map(|(j, t)| Turn::new(j as u8 % 2, *t)).collect();
        let positive = i % 3 != 2;
        if positive {
            turns[4] = Turn::image(0);
            for a in 0..2 {
                anns.push(AnnotationRecord {
                    dialogue_id: id.clone(),
                    annotator_id: format!("a{a}"),
                    intents: BTreeSet::from([IntentLabel::SocialBonding, IntentLabel::VisualClarification]),
                    trigger_sentence: LINES[2].into(),
                    image_description: format!("An image of strawberry cake number {i} with cream"),
                    salient_spans: vec!["strawberry cake".into()],
                });
            }
        }
        dialogues.push(Dialogue {
            dialogue_id: id,
            turns,
            share_turn_index: positive.then_some(4),
            gold_image: positive.then(|| ImageRef::corpus(format!("img{i:02}"), format!("images/{i:02}.jpg"))),
            gold_objects: Default::default(),
        });
    }
    write_dialogues(&dialogues, dir.join("dialogues.jsonl")).unwrap();
    write_annotations(&anns, dir.join("annotations.jsonl")).unwrap();
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(n: usize, extra: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fixture(dir.path(), n);
        let config = format!(
            "[data]\ndialogues = \"dialogues.jsonl\"\nannotations = \"annotations.jsonl\"\n\n\
             [backend]\nkind = \"gold-echo\"\n\n[embedding]\nkind = \"gold\"\ndim = 32\n\n\
             [run]\nout = \"runs\"\n{extra}"
        );
        std::fs::write(dir.path().join("run.toml"), config).unwrap();
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn run(&self, args: &[&str]) -> Output {
        let config = self.path().join("run.toml");
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_imageshare"));
        cmd.arg(args[0]).arg("--config").arg(config).args(&args[1..]).current_dir(self.path());
        cmd.output().unwrap()
    }

    fn run_ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn run_dir(&self) -> PathBuf {
        let runs: Vec<_> = std::fs::read_dir(self.path().join("runs"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "cache" && p.file_name().unwrap() != "indexes")
            .collect();
        assert_eq!(runs.len(), 1, "{runs:?}");
        runs[0].clone()
    }
}

fn jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn decide_with_gold_echo_writes_one_record_per_dialogue() {
    let ws = Workspace::new(3, "");
    ws.run_ok(&["decide"]);
    let records = jsonl(&ws.run_dir().join("stage1.jsonl"));
    assert_eq!(records.len(), 3);
    assert!(ws.run_dir().join("config.json").is_file());
}

#[test]
fn missing_dataset_is_a_config_error_naming_the_field() {
    let ws = Workspace::new(3, "");
    std::fs::remove_file(ws.path().join("dialogues.jsonl")).unwrap();
    let out = ws.run(&["decide"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data.dialogues"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = Workspace::new(3, "bogus = 1\n");
    let out = ws.run(&["decide"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn retrieve_without_index_or_build_flag_fails() {
    let ws = Workspace::new(6, "");
    ws.run_ok(&["decide"]);
    ws.run_ok(&["describe"]);
    let out = ws.run(&["retrieve"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--build-index"));
}

#[test]
fn describe_before_decide_is_a_missing_run() {
    let ws = Workspace::new(3, "");
    let out = ws.run(&["describe"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_on_empty_run_dir_fails() {
    let ws = Workspace::new(3, "");
    let out = ws.run(&["evaluate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_gold_echo_run_scores_perfectly_and_reports() {
    let ws = Workspace::new(9, "");
    ws.run_ok(&["decide"]);
    ws.run_ok(&["describe"]);
    let stdout = ws.run_ok(&["retrieve", "--build-index"]);
    assert!(stdout.contains("R@1 1.0000"), "{stdout}");
    ws.run_ok(&["evaluate"]);
    let dir = ws.run_dir();
    let r = report(&dir);
    assert_eq!(r["decision"]["macro_f1"], 1.0);
    assert_eq!(r["intent_f1"], 1.0);
    assert_eq!(r["sentence_f1"], 1.0);
    assert_eq!(r["retrieval"]["r1"], 1.0);
    assert_eq!(r["refusal_ratio"], 0.0);
    assert!(dir.join("per_instance.csv").is_file());
    assert!(dir.join("report.txt").is_file());

    // The cached index is reused without the build flag.
    ws.run_ok(&["retrieve"]);

    let table = Command::new(env!("CARGO_BIN_EXE_imageshare")).arg("report").arg(&dir).output().unwrap();
    assert!(table.status.success());
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.lines().any(|l| l.starts_with("decision_macro_f1") && l.contains("1.0000")), "{table}");
}

#[test]
fn injected_refusals_show_in_the_report() {
    let ws = Workspace::new(10, "");
    let config = std::fs::read_to_string(ws.path().join("run.toml")).unwrap();
    let config = config.replace("kind = \"gold-echo\"", "kind = \"gold-echo\"\nrefusal_rate = 0.2\nrefusal_seed = 3");
    std::fs::write(ws.path().join("run.toml"), config).unwrap();
    let out = ws.run(&["decide"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("refusal 2"));
    ws.run_ok(&["evaluate"]);
    assert_eq!(report(&ws.run_dir())["refusal_ratio"], 0.2);
}

#[test]
fn rerun_is_byte_identical() {
    let ws = Workspace::new(6, "");
    ws.run_ok(&["decide"]);
    ws.run_ok(&["describe"]);
    let dir = ws.run_dir();
    let first = (std::fs::read(dir.join("stage1.jsonl")).unwrap(), std::fs::read(dir.join("stage2.jsonl")).unwrap());
    ws.run_ok(&["decide"]);
    ws.run_ok(&["describe"]);
    let second = (std::fs::read(dir.join("stage1.jsonl")).unwrap(), std::fs::read(dir.join("stage2.jsonl")).unwrap());
    assert!(first == second);
}

#[test]
fn dry_run_writes_prompts_without_calls() {
    let ws = Workspace::new(4, "");
    ws.run_ok(&["decide", "--dry-run"]);
    let dir = ws.run_dir();
    assert_eq!(jsonl(&dir.join("prompts.stage1.jsonl")).len(), 4);
    assert!(!dir.join("stage1.jsonl").exists());
    let cache = ws.path().join("runs/cache");
    let cached = std::fs::read_dir(&cache).map(|d| d.count()).unwrap_or(0);
    assert!(cached == 0 || std::fs::read_dir(&cache).unwrap().all(|e| e.unwrap().metadata().unwrap().len() == 0));
}

#[test]
fn describe_retrieve_profile_only_covers_positives() {
    let ws = Workspace::new(6, "");
    ws.run_ok(&["describe", "--profile", "describe-retrieve"]);
    let records = jsonl(&ws.run_dir().join("stage2.jsonl"));
    assert_eq!(records.len(), 4);
    let out = ws.run(&["decide", "--profile", "describe-retrieve"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn augment_rejects_gold_echo() {
    let ws = Workspace::new(3, "");
    let out = ws.run(&["augment"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_chat_backend_exits_3() {
    let ws = Workspace::new(3, "");
    let config = std::fs::read_to_string(ws.path().join("run.toml")).unwrap();
    let config = config.replace(
        "kind = \"gold-echo\"",
        "kind = \"openai\"\nmodel = \"m\"\nbase_url = \"http://127.0.0.1:9\"\napi_key = \"k\"\nmax_attempts = 1",
    );
    std::fs::write(ws.path().join("run.toml"), config).unwrap();
    let out = ws.run(&["decide"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
