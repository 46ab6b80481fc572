use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chartformer::checkpoint::{load_checkpoint, save_checkpoint, write_checkpoint};
use chartformer::compose::{Model, ModelConfig};
use chartformer::data::Vocab;
use tempfile::TempDir;

const CORPUS: &str = "the cat sat on the mat\n\
                      a dog sat\n\
                      the dog saw a cat on the mat\n\
                      cats sat\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chartformer")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("corpus.txt"), CORPUS).unwrap();
        let f = Self { dir };
        ok(&["vocab", "--corpus", p(&f.path("corpus.txt")), "--output", p(&f.path("vocab.txt")), "--max-words", "7"]);
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, out: &str, seed: &str) -> PathBuf {
        let out = self.path(out);
        ok(&[
            "train",
            "--corpus",
            p(&self.path("corpus.txt")),
            "--vocab",
            p(&self.path("vocab.txt")),
            "--out-dir",
            p(&out),
            "--dim",
            "8",
            "--layers",
            "1",
            "--heads",
            "2",
            "--ffn-dim",
            "16",
            "--epochs",
            "1",
            "--batch-size",
            "2",
            "--seed",
            seed,
        ]);
        out
    }
}

#[test]
fn missing_corpus_is_a_configuration_error() {
    let f = Fixture::new();
    let out = run(&["train", "--corpus", p(&f.path("nope.txt")), "--vocab", p(&f.path("vocab.txt")), "--out-dir", p(&f.path("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert_eq!(run(&["train"]).status.code(), Some(2));
}

#[test]
fn checkpoint_reloads_losslessly() {
    let f = Fixture::new();
    let out = f.train("run", "3");
    assert!(out.join("epoch-000.ckpt").exists());
    let bytes = fs::read(out.join("model.ckpt")).unwrap();
    let model: Model<f32> = load_checkpoint(&out.join("model.ckpt")).unwrap();
    let mut again = Vec::new();
    write_checkpoint(&model, &mut again).unwrap();
    assert_eq!(bytes, again);
    assert_eq!(bytes, fs::read(out.join("epoch-000.ckpt")).unwrap());
}

#[test]
fn same_seed_gives_identical_logs() {
    let f = Fixture::new();
    let a = fs::read_to_string(f.train("a", "5").join("train.log")).unwrap();
    let b = fs::read_to_string(f.train("b", "5").join("train.log")).unwrap();
    let c = fs::read_to_string(f.train("c", "6").join("train.log")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a.lines().next().unwrap().split(", ").count(), 4);
}

#[test]
fn parse_output_shape() {
    let f = Fixture::new();
    let model = f.train("run", "1").join("model.ckpt");
    fs::write(f.path("in.txt"), "cat\n\nthe dog sat on the mat\ncats saw\n").unwrap();
    let args = |extra: &[&'static str]| {
        let mut v = vec![
            "parse".to_string(),
            "--checkpoint".into(),
            p(&model).into(),
            "--vocab".into(),
            p(&f.path("vocab.txt")).into(),
            "--input".into(),
            p(&f.path("in.txt")).into(),
        ];
        v.extend(extra.iter().map(|s| s.to_string()));
        v
    };
    let plain = ok(&args(&[]).iter().map(String::as_str).collect::<Vec<_>>());
    let lines: Vec<&str> = plain.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "(cat)");
    assert_eq!(lines[1], "");

    let words = ok(&args(&["--word-constraint"]).iter().map(String::as_str).collect::<Vec<_>>());
    let lines: Vec<&str> = words.lines().collect();
    assert_eq!(lines.len(), 4);
    let t = chartformer::tree::Tree::parse(lines[3]).unwrap();
    // "cats" is split into pieces but stays one leaf
    assert_eq!(t.leaves(), vec!["cats", "saw"]);
    let t = chartformer::tree::Tree::parse(lines[2]).unwrap();
    assert_eq!(t.leaves(), "the dog sat on the mat".split(' ').collect::<Vec<_>>());

    let pieces = chartformer::tree::Tree::parse(plain.lines().nth(3).unwrap()).unwrap();
    assert!(pieces.leaves().len() > 2, "{pieces}");
}

#[test]
fn vocabulary_mismatch_is_a_configuration_error() {
    let f = Fixture::new();
    let cfg = ModelConfig { dim: 8, layers: 1, heads: 2, ffn_dim: 8, vocab_size: 3, window: 4, dropout: 0.0, init_std: 0.02 };
    save_checkpoint(&Model::<f32>::new(cfg, 0).unwrap(), &f.path("small.ckpt")).unwrap();
    fs::write(f.path("in.txt"), "the cat\n").unwrap();
    let out = run(&[
        "parse",
        "--checkpoint",
        p(&f.path("small.ckpt")),
        "--vocab",
        p(&f.path("vocab.txt")),
        "--input",
        p(&f.path("in.txt")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn uniform_model_pppl_is_vocabulary_size() {
    let f = Fixture::new();
    let v = Vocab::load(&f.path("vocab.txt")).unwrap().len();
    let cfg = ModelConfig { dim: 8, layers: 1, heads: 2, ffn_dim: 8, vocab_size: v, window: 4, dropout: 0.0, init_std: 0.02 };
    save_checkpoint(&Model::<f32>::zeroed(cfg).unwrap(), &f.path("zero.ckpt")).unwrap();
    let out = ok(&[
        "pppl",
        "--checkpoint",
        p(&f.path("zero.ckpt")),
        "--vocab",
        p(&f.path("vocab.txt")),
        "--corpus",
        p(&f.path("corpus.txt")),
        "--per-sentence",
        p(&f.path("pppl.tsv")),
    ]);
    let value: f64 = out.lines().next().unwrap().strip_prefix("pppl, ").unwrap().parse().unwrap();
    assert!((value - v as f64).abs() < 1e-3 * v as f64, "{value} vs {v}");
    assert!(out.contains("sentences, 4"));
    assert_eq!(fs::read_to_string(f.path("pppl.tsv")).unwrap().lines().count(), 5);
}

#[test]
fn identical_tree_files_score_100() {
    let f = Fixture::new();
    fs::write(f.path("t.txt"), "((the cat) (sat (on (the mat))))\n(a (dog sat))\n(cats)\n").unwrap();
    let out = ok(&["eval-f1", "--pred", p(&f.path("t.txt")), "--gold", p(&f.path("t.txt")), "--per-sentence", p(&f.path("f1.tsv"))]);
    assert!(out.contains("f1, 100.0000"), "{out}");
    assert!(out.contains("sentences, 3"));
    assert_eq!(fs::read_to_string(f.path("f1.tsv")).unwrap().lines().count(), 4);
}

#[test]
fn misaligned_leaves_exit_3_with_line() {
    let f = Fixture::new();
    fs::write(f.path("a.txt"), "(a b)\n((a b) c)\n").unwrap();
    fs::write(f.path("b.txt"), "(a b)\n((a b) d)\n").unwrap();
    let out = run(&["eval-f1", "--pred", p(&f.path("a.txt")), "--gold", p(&f.path("b.txt"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    fs::write(f.path("c.txt"), "(a b\n").unwrap();
    let out = run(&["eval-f1", "--pred", p(&f.path("c.txt")), "--gold", p(&f.path("b.txt"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn depcompat_hand_corpus() {
    let f = Fixture::new();
    fs::write(f.path("pred.txt"), "((the dog) barks)\n(the (dog barks))\n").unwrap();
    let conll = "1\tthe\t2\tdet\n2\tdog\t3\tnsubj\n3\tbarks\t0\troot\n\n\
                 1\tthe\t2\tdet\n2\tdog\t3\tnsubj\n3\tbarks\t0\troot\n";
    fs::write(f.path("deps.conll"), conll).unwrap();
    let out = ok(&["eval-depcompat", "--pred", p(&f.path("pred.txt")), "--deps", p(&f.path("deps.conll"))]);
    assert!(out.contains("dep_compat, 0.7500"), "{out}");
}

#[test]
fn export_expands_words_into_pieces() {
    let f = Fixture::new();
    fs::write(f.path("gold.mrg"), "(S (NP (NNS Cats)) (VP (VBD sat)) (. .))\n").unwrap();
    let out = ok(&[
        "export-trees",
        "--input",
        p(&f.path("gold.mrg")),
        "--strip-punct",
        "--lowercase",
        "--vocab",
        p(&f.path("vocab.txt")),
    ]);
    assert_eq!(out.trim(), "((cat ##s) sat)");
    let out = ok(&["export-trees", "--input", p(&f.path("gold.mrg"))]);
    assert_eq!(out.trim(), "(Cats sat .)");
}

#[test]
fn config_file_and_flag_precedence() {
    let f = Fixture::new();
    fs::write(f.path("one.txt"), "a b c d e f\n").unwrap();
    let cfg = format!("vocab = {}\ncorpus = {}\nwindow = 3\ndim = 8\nheads = 2\nlayers = 1\nffn_dim = 8\n", p(&f.path("vocab.txt")), p(&f.path("one.txt")));
    fs::write(f.path("run.cfg"), cfg).unwrap();
    // six tokens: exhaustive chart with m = 6 costs 35 calls
    let out = ok(&["--config", p(&f.path("run.cfg")), "count-calls", "--window", "6"]);
    assert!(out.contains("calls, 35"), "{out}");
    let out = ok(&["--config", p(&f.path("run.cfg")), "count-calls"]);
    assert!(out.contains("window, 3"), "{out}");
    fs::write(f.path("bad.cfg"), "colour = red\n").unwrap();
    assert_eq!(run(&["--config", p(&f.path("bad.cfg")), "count-calls"]).status.code(), Some(2));
}

#[test]
fn synth_writes_sentences_and_trees() {
    let f = Fixture::new();
    let s = ok(&["synth", "--count", "5", "--seed", "2", "--trees", p(&f.path("gold.txt"))]);
    let trees = fs::read_to_string(f.path("gold.txt")).unwrap();
    assert_eq!(s.lines().count(), 5);
    for (line, tree) in s.lines().zip(trees.lines()) {
        let t = chartformer::tree::Tree::parse(tree).unwrap();
        assert_eq!(t.leaves().join(" "), line);
    }
    assert_eq!(s, ok(&["synth", "--count", "5", "--seed", "2"]));
    // derivations are binary; the flat variant dissolves list nodes
    for tree in trees.lines() {
        chartformer::tree::Tree::parse(tree).unwrap().to_binary().unwrap();
    }
    ok(&["synth", "--count", "5", "--seed", "2", "--flat", "--trees", p(&f.path("flat.txt"))]);
    let flat = fs::read_to_string(f.path("flat.txt")).unwrap();
    assert!(flat.lines().zip(trees.lines()).all(|(a, b)| a.len() <= b.len()));
}
