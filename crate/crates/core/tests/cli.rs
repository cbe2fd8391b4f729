use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use medreport::{Rng, Tensor};

const CONFIG: &str = "\
feature_dim = 8
tag_embed_dim = 8
context_dim = 8
topic_dim = 8
hidden_dim = 8
mlc_hidden_dim = 8
grid = 2
top_m = 2
s_max = 4
t_max = 8
epochs = 2
val_count = 2
test_count = 2
lr_rnn = 0.003
lr_cnn = 0.003
";

const REPORTS: [&str; 8] = [
    "The heart is normal. No effusion.",
    "Lungs are clear. Mild cardiomegaly.",
    "Stable nodule in the left lung. No pneumothorax.",
    "Degenerative changes of the spine. Heart size is normal.",
    "No acute disease. The lungs are clear.",
    "Small right effusion. Heart is enlarged. No pneumothorax.",
    "Clear lungs. Normal heart.",
    "Left base opacity. Stable cardiomegaly.",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medreport"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn medreport")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    raw: PathBuf,
}

fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    std::fs::create_dir(root.join("feats")).unwrap();
    let mut rng = Rng::seeded(5);
    let mut lines = String::new();
    for (i, report) in REPORTS.iter().enumerate() {
        let t = Tensor::new(vec![4, 8], (0..32).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        t.save(root.join(format!("feats/img{i}.hgt"))).unwrap();
        let tags = if i % 2 == 0 { r#"["normal"]"# } else { "[]" };
        lines.push_str(&format!(
            "{{\"id\": \"img{i}\", \"report\": \"{report}\", \"tags\": {tags}, \"features\": \"{}\"}}\n",
            root.join(format!("feats/img{i}.hgt")).display()
        ));
    }
    let raw = root.join("raw.jsonl");
    std::fs::write(&raw, lines).unwrap();
    let config = root.join("run.cfg");
    std::fs::write(&config, CONFIG).unwrap();
    Workspace {
        _dir: dir,
        root,
        config,
        raw,
    }
}

fn preprocess(ws: &Workspace) -> PathBuf {
    let out = ws.root.join("corpus");
    let o = run(&["preprocess", "--config", p(&ws.config), "--corpus", p(&ws.raw), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn train(ws: &Workspace, corpus: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = ws.root.join(name);
    let mut args = vec!["train", "--config", p(&ws.config), "--corpus", p(corpus), "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn full_pipeline() {
    let ws = workspace();
    let corpus = preprocess(&ws);
    for f in ["corpus.jsonl", "vocab.txt", "tags.txt"] {
        assert!(corpus.join(f).exists(), "{f}");
    }
    let lines = std::fs::read_to_string(corpus.join("corpus.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), REPORTS.len());
    assert_eq!(lines.matches("\"split\":\"test\"").count(), 2);

    let run_dir = train(&ws, &corpus, "run", &[]);
    let log = std::fs::read_to_string(run_dir.join("log.csv")).unwrap();
    let mut rows = log.lines();
    assert_eq!(rows.next(), Some("epoch,train_loss,val_loss,l_tag,l_sent,l_word,l_reg"));
    assert_eq!(rows.count(), 2);

    let ck = run_dir.join("checkpoint.hgc");
    let gen = |name: &str| {
        let out = ws.root.join(name);
        let o = run(&["generate", "--corpus", p(&corpus), "--checkpoint", p(&ck), "--out", p(&out), "--split", "test"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let g1 = gen("gen1");
    let g2 = gen("gen2");
    let r1 = std::fs::read(g1.join("reports.jsonl")).unwrap();
    assert_eq!(r1, std::fs::read(g2.join("reports.jsonl")).unwrap());
    let text = String::from_utf8(r1).unwrap();
    assert_eq!(text.lines().count(), 2);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let id = v["id"].as_str().unwrap();
        assert!(g1.join("attention").join(format!("{id}.json")).exists());
        assert_eq!(v["sentences"].as_array().unwrap().len(), v["stop_probs"].as_array().unwrap().len());
    }

    let eval_dir = ws.root.join("eval");
    let o = run(&[
        "evaluate",
        "--candidates",
        p(&g1.join("reports.jsonl")),
        "--references",
        p(&corpus.join("corpus.jsonl")),
        "--out",
        p(&eval_dir),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["num_reports"], 2);
    for key in ["bleu_1", "bleu_4", "rouge_l", "cider_d"] {
        assert!(report[key].as_f64().unwrap() >= 0.0, "{key}");
    }
    let csv = std::fs::read_to_string(eval_dir.join("per_image.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn identical_seeds_give_identical_checkpoints() {
    let ws = workspace();
    let corpus = preprocess(&ws);
    let a = train(&ws, &corpus, "a", &["--seed", "9"]);
    let b = train(&ws, &corpus, "b", &["--seed", "9"]);
    let c = train(&ws, &corpus, "c", &["--seed", "10"]);
    let read = |d: &Path| std::fs::read(d.join("checkpoint.hgc")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(
        std::fs::read(a.join("log.csv")).unwrap(),
        std::fs::read(b.join("log.csv")).unwrap()
    );
}

#[test]
fn zero_epochs_writes_initial_checkpoint_and_empty_log() {
    let ws = workspace();
    let corpus = preprocess(&ws);
    let cfg0 = ws.root.join("zero.cfg");
    std::fs::write(&cfg0, format!("{CONFIG}epochs = 0\n")).unwrap();
    let out = ws.root.join("zero");
    let o = run(&["train", "--config", p(&cfg0), "--corpus", p(&corpus), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = std::fs::read_to_string(out.join("log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    let ck = medreport::Checkpoint::load(out.join("checkpoint.hgc")).unwrap();
    assert_eq!(ck.epoch, 0);
    assert_eq!(ck.adam.step, 0);
}

#[test]
fn evaluate_identical_files_scores_one() {
    let ws = workspace();
    let corpus = preprocess(&ws);
    let refs = corpus.join("corpus.jsonl");
    let o = run(&["evaluate", "--candidates", p(&refs), "--references", p(&refs)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["bleu_1"], 1.0);
    assert_eq!(v["bleu_4"], 1.0);
    assert_eq!(v["rouge_l"], 1.0);
}

#[test]
fn every_command_prints_the_resolved_config() {
    let ws = workspace();
    let o = run(&["stats", "--corpus", p(&ws.raw), "--mode", "visual_only", "--seed", "4"]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("attention_mode = visual_only"));
    assert!(err.contains("seed = 4"));
}

#[test]
fn stats_on_fixture() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_corpus.jsonl");
    let o = run(&["stats", "--corpus", p(&fixture)]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["num_documents"], 4);
    assert_eq!(v["avg_tags_per_image"], 1.75);
    assert_eq!(v["avg_sentences"], 2.0);
    assert_eq!(v["avg_words_per_sentence"], 3.875);
}

#[test]
fn gradcheck_exits_zero() {
    let o = run(&["gradcheck", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("max_rel_error"));
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["explode"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--unknown-flag"]).status.code(), Some(1));
    assert_eq!(run(&["stats", "--corpus", "/no/such/file.jsonl"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let ws = workspace();
    let corpus = preprocess(&ws);
    let bad = ws.root.join("bad.cfg");
    std::fs::write(&bad, "no_such_key = 1\n").unwrap();
    let o = run(&["train", "--config", p(&bad), "--corpus", p(&corpus), "--out", p(&ws.root.join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));

    let wild = ws.root.join("wild.cfg");
    std::fs::write(&wild, format!("{CONFIG}lr_rnn = 1e300\nlr_cnn = 1e300\nepochs = 3\n")).unwrap();
    let o = run(&["train", "--config", p(&wild), "--corpus", p(&corpus), "--out", p(&ws.root.join("y"))]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
