use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hgnn::{checkpoint, records};
use hgnn_core::{decoder, Model, TrainConfig};
use tempfile::TempDir;

const SMALL: &str = "\
# small widths so the tests stay quick
d_word = 8
d_hidden = 8
d_model = 8
d_position = 8
heads = 2
epochs = 2
batch_size = 4
max_response_len = 8
";

fn hgnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hgnn"))
        .args(args)
        .env_remove("HGNN_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Scratch {
    dir: TempDir,
}

impl Scratch {
    fn new() -> Self {
        let s = Scratch {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(s.path("small.cfg"), SMALL).unwrap();
        s
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn synth(&self, name: &str, dialogues: usize, extra: &[&str]) {
        let out = self.arg(name);
        let n = dialogues.to_string();
        let mut args = vec!["synth", "--out", &out, "--dialogues", &n];
        args.extend_from_slice(extra);
        let o = hgnn(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }

    fn train(&self, corpus: &str, out: &str, extra: &[&str]) -> Output {
        let (c, o, cfg) = (self.arg(corpus), self.arg(out), self.arg("small.cfg"));
        let mut args = vec!["train", "--corpus", &c, "--out", &o, "--config", &cfg];
        args.extend_from_slice(extra);
        hgnn(&args)
    }
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn corpus_files_round_trip() {
    let s = Scratch::new();
    s.synth("c.jsonl", 12, &["--seed", "4"]);
    let loaded = records::load_corpus(&s.path("c.jsonl"), 35).unwrap();
    assert_eq!(loaded.records.len(), 12);
    assert!(loaded.rejected.is_empty());
    records::save_corpus(&s.path("d.jsonl"), &loaded.records).unwrap();
    let again = records::load_corpus(&s.path("d.jsonl"), 35).unwrap();
    assert_eq!(again.records, loaded.records);
    assert_eq!(read(&s.path("c.jsonl")), read(&s.path("d.jsonl")));
}

#[test]
fn seed_comes_from_flag_then_environment() {
    let s = Scratch::new();
    s.synth("flag.jsonl", 5, &["--seed", "9"]);
    let env = Command::new(env!("CARGO_BIN_EXE_hgnn"))
        .args(["synth", "--out", &s.arg("env.jsonl"), "--dialogues", "5"])
        .env("HGNN_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(0));
    let both = Command::new(env!("CARGO_BIN_EXE_hgnn"))
        .args(["synth", "--out", &s.arg("both.jsonl"), "--dialogues", "5", "--seed", "1"])
        .env("HGNN_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(both.status.code(), Some(0));
    assert_eq!(read(&s.path("flag.jsonl")), read(&s.path("env.jsonl")));
    assert_ne!(read(&s.path("flag.jsonl")), read(&s.path("both.jsonl")));
}

#[test]
fn inspect_graph_lists_a_single_turn() {
    let s = Scratch::new();
    s.synth("one.jsonl", 1, &["--max-turns", "1"]);
    let o = hgnn(&["inspect-graph", "--corpus", &s.arg("one.jsonl"), "--index", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("nodes 5\n"), "{text}");
    assert!(text.contains("edges 8\n"), "{text}");
    let edges: Vec<&str> = text.lines().filter(|l| l.contains(" -- ")).collect();
    assert_eq!(edges.len(), 8);
    let mut rules: Vec<u8> = edges
        .iter()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    rules.sort_unstable();
    assert_eq!(rules, [2, 3, 4, 5, 8, 9, 10, 11]);
    for t in ["A_u", "A_f", "A_a", "A_e", "A_s"] {
        assert!(text.lines().any(|l| l == t), "{t}");
    }
    let out_of_range = hgnn(&["inspect-graph", "--corpus", &s.arg("one.jsonl"), "--index", "3"]);
    assert_eq!(out_of_range.status.code(), Some(1));
}

#[test]
fn classification_only_training_then_eval() {
    let s = Scratch::new();
    s.synth("c.jsonl", 8, &[]);
    let o = s.train("c.jsonl", "m.ckpt", &["--lambda", "1.0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.starts_with("epoch=")).count(), 2);

    let trained = checkpoint::load(&s.path("m.ckpt")).unwrap();
    let corpus = records::load_corpus(&s.path("c.jsonl"), 35).unwrap().records;
    let fresh = Model::from_corpus(&corpus, trained.config.clone()).unwrap();
    for (name, t) in trained.params.iter() {
        if name.starts_with("dec.") {
            assert_eq!(t, fresh.params.get(name).unwrap(), "{name} moved");
        }
    }
    assert_ne!(
        trained.params.get(hgnn_core::encoder::PREDICTOR).unwrap(),
        fresh.params.get(hgnn_core::encoder::PREDICTOR).unwrap()
    );
    assert_eq!(trained.params.get(decoder::OUTPUT).unwrap(), fresh.params.get(decoder::OUTPUT).unwrap());

    let e = hgnn(&[
        "eval",
        "--ckpt",
        &s.arg("m.ckpt"),
        "--corpus",
        &s.arg("c.jsonl"),
        "--report",
        &s.arg("r.txt"),
    ]);
    assert_eq!(e.status.code(), Some(0), "{}", stderr(&e));
    let report = read(&s.path("r.txt"));
    let value = |key: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((0.0..=1.0).contains(&value("emotion_weighted_f1")));
    assert!(value("ppl").is_finite() && value("ppl") > 1.0);
    let jsonl = read(&s.path("r.jsonl"));
    assert_eq!(jsonl.lines().count(), 8);
    let summary: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(summary["ppl"].as_f64().unwrap(), value("ppl"));
}

#[test]
fn identical_seeds_give_identical_artifacts() {
    let s = Scratch::new();
    s.synth("c.jsonl", 6, &[]);
    let a = s.train("c.jsonl", "a.ckpt", &["--seed", "3", "--checkpoint-every", "1"]);
    let b = s.train("c.jsonl", "b.ckpt", &["--seed", "3"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    assert_eq!(read(&s.path("a.ckpt")), read(&s.path("b.ckpt")));
    assert_eq!(stdout(&a), stdout(&b));
    let config = |o: &Output| -> Vec<String> {
        stderr(o).lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
    };
    assert_eq!(config(&a), config(&b));
    assert_eq!(config(&a).len(), hgnn::settings::KEYS.len());
    assert!(s.path("a.ckpt.epoch1").exists() && s.path("a.ckpt.epoch2").exists());
    assert_eq!(read(&s.path("a.ckpt.epoch2")), read(&s.path("a.ckpt")));

    let c = s.train("c.jsonl", "c.ckpt", &["--seed", "4"]);
    assert_eq!(c.status.code(), Some(0));
    assert_ne!(read(&s.path("a.ckpt")), read(&s.path("c.ckpt")));
}

#[test]
fn checkpoint_load_matches_trained_model() {
    let s = Scratch::new();
    s.synth("c.jsonl", 6, &[]);
    assert_eq!(s.train("c.jsonl", "m.ckpt", &["--ablate", "face", "--homo"]).status.code(), Some(0));
    let m = checkpoint::load(&s.path("m.ckpt")).unwrap();
    assert_eq!(m.config.gnn_mode, hgnn_core::GnnMode::Homo);
    assert!(m.config.ablate.contains(hgnn_core::NodeType::Face));
    checkpoint::save(&s.path("n.ckpt"), &m).unwrap();
    assert_eq!(read(&s.path("m.ckpt")), read(&s.path("n.ckpt")));
    assert_eq!(checkpoint::load(&s.path("n.ckpt")).unwrap(), m);
}

#[test]
fn generate_prints_one_line_per_dialogue() {
    let s = Scratch::new();
    s.synth("c.jsonl", 5, &[]);
    assert_eq!(s.train("c.jsonl", "m.ckpt", &[]).status.code(), Some(0));
    for beam in ["1", "3"] {
        let o = hgnn(&[
            "generate",
            "--ckpt",
            &s.arg("m.ckpt"),
            "--corpus",
            &s.arg("c.jsonl"),
            "--speaker",
            "spk0",
            "--beam",
            beam,
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 5);
    }
}

#[test]
fn gradcheck_passes_on_the_default_setup() {
    let o = hgnn(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let err: f64 = stdout(&o)
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_error = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err <= 1e-4, "{err}");
    assert!(stderr(&o).contains("d_model = 8\n"));
}

#[test]
fn exit_codes() {
    let s = Scratch::new();
    s.synth("c.jsonl", 3, &[]);
    assert_eq!(hgnn(&[]).status.code(), Some(1));
    assert_eq!(hgnn(&["--help"]).status.code(), Some(0));
    assert_eq!(hgnn(&["train", "--corpus", &s.arg("c.jsonl")]).status.code(), Some(1));
    assert_eq!(hgnn(&["synth", "--out", &s.arg("x"), "--dialogues", "many"]).status.code(), Some(1));

    std::fs::write(s.path("bad.cfg"), "heads = four\n").unwrap();
    let o = hgnn(&["train", "--corpus", &s.arg("c.jsonl"), "--out", &s.arg("m"), "--config", &s.arg("bad.cfg")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
    assert_eq!(s.train("c.jsonl", "m", &["--lambda", "2"]).status.code(), Some(1));
    assert_eq!(s.train("c.jsonl", "m", &["--ablate", "ears"]).status.code(), Some(1));

    assert_eq!(s.train("missing.jsonl", "m", &[]).status.code(), Some(2));
    std::fs::write(s.path("junk.jsonl"), "not json\n{\"utterances\": []}\n").unwrap();
    assert_eq!(s.train("junk.jsonl", "m", &[]).status.code(), Some(2));
    std::fs::write(s.path("junk.ckpt"), "HGNN-CKPT-0\n").unwrap();
    let o = hgnn(&["eval", "--ckpt", &s.arg("junk.ckpt"), "--corpus", &s.arg("c.jsonl"), "--report", &s.arg("r")]);
    assert_eq!(o.status.code(), Some(2));

    assert_eq!(hgnn(&["gradcheck", "--tolerance", "0"]).status.code(), Some(3));
}

#[test]
fn resolved_configuration_precedence() {
    let s = Scratch::new();
    let args = hgnn::cli::ConfigArgs {
        config: Some(s.path("small.cfg")),
        lambda: Some(0.25),
        set: vec!["d_model=16".into()],
        ..Default::default()
    };
    let cfg = args.resolve(TrainConfig::default()).unwrap();
    assert_eq!(cfg.d_word, 8);
    assert_eq!(cfg.d_model, 16);
    assert_eq!(cfg.lambda, 0.25);
    assert_eq!(cfg.epochs, 2);
}
