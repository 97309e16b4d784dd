use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spgan::checkpoint;
use spgan::commands::{build_generator, load_data};
use spgan::config::RunConfig;
use spgan::formats;
use spgan_core::pose::TokenSequence;

const TINY: &str = r#"
seed = 3

[paths]
data_dir = "data"
run_dir = "run"

[synth]
vocab_size = 6
motif_len = 4
manual_joints = 2
face_landmarks = 2
n_examples = 30
min_tokens = 4
max_tokens = 5

[generator]
layers = 1
heads = 2
embed_dim = 8
ff_dim = 16

[discriminator]
conv_features = 4
hidden_dim = 4
filter_width = 3

[train]
epochs = 2
batch_size = 4

[eval]
max_frames = 24
"#;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new(extra: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        fs::write(root.join("run.toml"), format!("{TINY}\n{extra}")).unwrap();
        Run { _dir: dir, root }
    }

    fn config(&self) -> PathBuf {
        self.root.join("run.toml")
    }

    fn spgan(&self, args: &[&str]) -> Output {
        let cfg = self.config();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_spgan"));
        cmd.arg(args[0]).arg("--config").arg(&cfg).args(&args[1..]);
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.spgan(args);
        assert!(
            out.status.success(),
            "spgan {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn synth_is_byte_identical_and_reports_scanned_limits() {
    let run = Run::new("");
    let stdout = run.ok(&["synth"]);
    let first: Vec<Vec<u8>> = ["corpus.txt", "vocab.txt", "primitives.txt"]
        .iter()
        .map(|f| read(&run.path(&format!("data/{f}"))))
        .collect();
    run.ok(&["synth", "--out", run.path("again").to_str().unwrap()]);
    for (i, f) in ["corpus.txt", "vocab.txt", "primitives.txt"].iter().enumerate() {
        assert_eq!(first[i], read(&run.path(&format!("again/{f}"))), "{f}");
    }
    // independent scan of the corpus text
    let text = String::from_utf8(first[0].clone()).unwrap();
    let u_max = text
        .lines()
        .filter_map(|l| l.strip_prefix("example "))
        .map(|l| l.rsplit_once("frames=").unwrap().1.parse::<usize>().unwrap())
        .max()
        .unwrap();
    let t_max = text
        .lines()
        .filter_map(|l| l.strip_prefix("tokens "))
        .map(|l| l.split_whitespace().count())
        .max()
        .unwrap();
    assert_eq!(stdout.trim(), format!("U_max {u_max} T_max {t_max}"));
}

#[test]
fn vocabulary_file_has_pad_plus_words() {
    let run = Run::new("");
    fs::write(
        run.config(),
        TINY.replace("vocab_size = 6", "vocab_size = 10").replace("n_examples = 30", "n_examples = 50"),
    )
    .unwrap();
    run.ok(&["synth"]);
    let v = fs::read_to_string(run.path("data/vocab.txt")).unwrap();
    assert_eq!(v.lines().count(), 11);
    assert_eq!(v.lines().next(), Some("<pad>"));
}

#[test]
fn unwritable_output_names_the_path() {
    let run = Run::new("");
    let blocker = run.path("blocker");
    fs::write(&blocker, "file, not a directory").unwrap();
    let out = run.spgan(&["synth", "--out", blocker.join("sub").to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("blocker"), "{err}");
}

#[test]
fn train_without_corpus_is_an_explicit_error() {
    let run = Run::new("");
    let out = run.spgan(&["train"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("corpus.txt") && err.contains("spgan synth"), "{err}");
}

#[test]
fn two_epoch_smoke_run_writes_report_and_checkpoints() {
    let run = Run::new("");
    fs::write(run.config(), TINY.replace("epochs = 2", "epochs = 2\ncheckpoint_every = 1")).unwrap();
    run.ok(&["synth"]);
    run.ok(&["train"]);
    let csv = fs::read_to_string(run.path("run/train.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,l_reg,l_adv,l_d,dp_real,dp_fake");
    assert_eq!(lines.len(), 1 + 2);
    for row in &lines[1..] {
        for v in row.split(',') {
            assert!(v.parse::<f64>().unwrap().is_finite(), "{row}");
        }
    }
    for f in ["epoch_0001.ckpt", "epoch_0002.ckpt", "final.ckpt"] {
        assert!(run.path(&format!("run/{f}")).exists(), "{f}");
    }
    assert_eq!(read(&run.path("run/epoch_0002.ckpt")), read(&run.path("run/final.ckpt")));
}

fn generator_tensors(p: &Path) -> Vec<(String, Vec<u64>)> {
    checkpoint::load(p)
        .unwrap()
        .into_iter()
        .filter(|(n, _)| n.starts_with("gen."))
        .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn zero_lambda_gan_matches_regression_only_checkpoint() {
    let run = Run::new("");
    run.ok(&["synth"]);
    run.ok(&["train", "--lambda-gan", "0", "--out", run.path("adv").to_str().unwrap()]);
    run.ok(&["train", "--no-discriminator", "--out", run.path("reg").to_str().unwrap()]);
    let a = generator_tensors(&run.path("adv/final.ckpt"));
    assert!(!a.is_empty());
    assert_eq!(a, generator_tensors(&run.path("reg/final.ckpt")));
    // with the adversarial term on the generator moves
    run.ok(&["train", "--lambda-gan", "1", "--out", run.path("on").to_str().unwrap()]);
    assert_ne!(a, generator_tensors(&run.path("on/final.ckpt")));
}

#[test]
fn divergent_training_exits_nonzero() {
    let run = Run::new("");
    fs::write(run.config(), TINY.replace("batch_size = 4", "batch_size = 4\nlr = 1e300")).unwrap();
    run.ok(&["synth"]);
    let out = run.spgan(&["train"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn generate_writes_reloadable_rows_and_wellformed_svg() {
    let run = Run::new("");
    run.ok(&["synth"]);
    run.ok(&["train"]);
    let ckpt = run.path("run/final.ckpt");
    let out = run.path("gen/seq.txt");
    let stdout = run.ok(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tokens",
        "w1 w3 w2",
        "--out",
        out.to_str().unwrap(),
    ]);

    let cfg = RunConfig::load(&run.config()).unwrap();
    let data = load_data(&cfg).unwrap();
    let seq = formats::parse_sequence("seq", &fs::read_to_string(&out).unwrap(), data.corpus.layout).unwrap();

    // the same generation through the library stops at the same frame
    let mut gen = build_generator(&cfg, &data).unwrap();
    gen.store_mut().load_named(&checkpoint::load(&ckpt).unwrap()).unwrap();
    let tokens: TokenSequence = data.vocabulary.encode(&["w1", "w3", "w2"]).unwrap();
    let direct = gen.generate(&tokens, cfg.eval.max_frames).unwrap();
    assert_eq!(seq.len(), direct.sequence.len());
    assert!(stdout.starts_with(&format!("{} frames", seq.len())), "{stdout}");
    let values = |s: &spgan_core::pose::PoseSequence| -> Vec<Vec<f64>> {
        s.frames().iter().map(|f| f.values.clone()).collect()
    };
    assert_eq!(values(&seq), values(&direct.sequence));

    let svg = fs::read_to_string(out.with_extension("svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    let panels = doc.descendants().filter(|n| n.has_tag_name("g")).count();
    assert_eq!(panels, seq.len().min(8));
}

#[test]
fn generate_reads_token_files_and_rejects_unknown_words() {
    let run = Run::new("");
    run.ok(&["synth"]);
    run.ok(&["train"]);
    let ckpt = run.path("run/final.ckpt");
    fs::write(run.path("sentence.txt"), "w2\nw2 w5\n").unwrap();
    run.ok(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tokens-file",
        run.path("sentence.txt").to_str().unwrap(),
        "--out",
        run.path("a.txt").to_str().unwrap(),
    ]);
    assert!(run.path("a.svg").exists());
    let out = run.spgan(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tokens",
        "w1 hello",
        "--out",
        run.path("b.txt").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("hello"), "{err}");
}

#[test]
fn ground_truth_eval_prints_the_ceiling() {
    let run = Run::new("");
    run.ok(&["synth"]);
    let stdout = run.ok(&["eval", "--ground-truth", "--split", "dev"]);
    assert_eq!(stdout.trim(), "BLEU-4 1");
    let table = fs::read_to_string(run.path("run/metrics_dev.txt")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(header[1..], ["BLEU-4", "BLEU-3", "BLEU-2", "BLEU-1", "ROUGE"]);
}

#[test]
fn eval_is_repeatable_and_honours_channels() {
    let run = Run::new("");
    run.ok(&["synth"]);
    run.ok(&["train", "--channels", "manual"]);
    let ckpt = run.path("run/final.ckpt");
    let ck = ckpt.to_str().unwrap();
    let a = run.path("a");
    let b = run.path("b");
    run.ok(&["eval", "--checkpoint", ck, "--channels", "manual", "--out", a.to_str().unwrap()]);
    run.ok(&["eval", "--checkpoint", ck, "--channels", "manual", "--out", b.to_str().unwrap()]);
    for f in ["metrics_test.csv", "metrics_test.txt"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    // a manual-only checkpoint does not fit the two-channel generator
    let out = run.spgan(&["eval", "--checkpoint", ck, "--out", a.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match"));
}

#[test]
fn train_is_byte_identical_across_runs() {
    let run = Run::new("");
    run.ok(&["synth"]);
    run.ok(&["train", "--out", run.path("r1").to_str().unwrap()]);
    run.ok(&["train", "--out", run.path("r2").to_str().unwrap()]);
    for f in ["train.csv", "final.ckpt"] {
        assert_eq!(read(&run.path(&format!("r1/{f}"))), read(&run.path(&format!("r2/{f}"))), "{f}");
    }
    // a different seed changes the result
    run.ok(&["train", "--seed", "4", "--out", run.path("r3").to_str().unwrap()]);
    assert_ne!(read(&run.path("r1/final.ckpt")), read(&run.path("r3/final.ckpt")));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let desk = RunConfig::load(&dir.join("desk.toml")).unwrap();
    let mut defaults = RunConfig::default();
    defaults.paths = desk.paths.clone();
    defaults.train.checkpoint_every = desk.train.checkpoint_every;
    assert_eq!(desk, defaults);
    assert!(desk.paths.data_dir.ends_with("out/desk/data"));
    let amb = RunConfig::load(&dir.join("ambiguous.toml")).unwrap();
    assert_eq!(amb.synth.variants, 2);
}
