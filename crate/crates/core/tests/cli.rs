use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hoigen::datamodel::{load_dataset, LoadOptions};
use hoigen::eval::EvalReport;
use hoigen::funcsim::load_clusters;
use hoigen::nn::{load_checkpoint, ModelDims, PredicateModel};
use hoigen::pipeline::{load_hoi_detections, save_hoi_detections, HoiDetection};
use tempfile::TempDir;

const DATA_OPTIONS: &str = "[data]\nfeature_dim = 8\nembedding_dim = 16\n";

fn hoigen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hoigen")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = hoigen(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn opts() -> LoadOptions {
    LoadOptions { feature_dim: 8, embedding_dim: 16, ..Default::default() }
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    /// Synthetic corpus in `data/` plus a pipeline config referencing it.
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = dir.path().join("synth.toml");
        fs::write(&synth, "seed = 3\n[synth]\ntrain_images = 120\ntest_images = 24\n").unwrap();
        run_ok(&["synth", "--config", s(&synth), "--out", s(&dir.path().join("data"))]);
        let f = Fixture { dir };
        f.config("run.toml", extra, "");
        f
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    /// `extra` holds top-level tables, `paths` extra `[paths]` entries.
    fn config(&self, name: &str, extra: &str, paths: &str) -> PathBuf {
        let text = format!(
            "seed = 3\n{extra}\n[paths]\n{paths}annotations = \"data/train.jsonl\"\ntest_annotations = \"data/test.jsonl\"\n\
             detections = \"data/detections.jsonl\"\nembeddings = \"data/embeddings.jsonl\"\n\
             visual_prototypes = \"data/prototypes.jsonl\"\n{DATA_OPTIONS}\
             [funcsim]\nk = 2\n[train]\nepochs = 4\nhidden1 = 16\nhidden2 = 8\nlr0 = 0.01\nbatch_size = 32\n"
        );
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn run(&self, args: &[&str], config: &Path, out: &str) -> Output {
        let mut all = args.to_vec();
        let out = self.path(out);
        all.extend(["--config", s(config), "--out", s(&out)]);
        hoigen(&all)
    }

    fn run_ok(&self, args: &[&str], config: &Path, out: &str) {
        let o = self.run(args, config, out);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn synth_writes_a_complete_corpus() {
    let f = Fixture::new("");
    for name in [
        "train.jsonl",
        "test.jsonl",
        "detections.jsonl",
        "embeddings.jsonl",
        "prototypes.jsonl",
        "split.json",
        "synth.json",
    ] {
        let text = fs::read_to_string(f.path("data").join(name)).unwrap();
        assert!(text.contains("\"config_hash\""), "{name} lacks provenance");
    }
    assert_eq!(load_dataset(&f.path("data/train.jsonl"), &opts()).unwrap().triplets.len(), 120);
}

#[test]
fn cluster_forms_k_groups() {
    let f = Fixture::new("");
    let cfg = f.path("run.toml");
    f.run_ok(&["cluster"], &cfg, "out");
    let clusters = load_clusters(&f.path("out/clusters.json")).unwrap();
    assert_eq!(clusters.k(), 2);
    assert_eq!(clusters.clusters().len(), 2);

    let too_many = f.config("k9.toml", "", "");
    fs::write(&too_many, fs::read_to_string(&too_many).unwrap().replace("k = 2", "k = 9")).unwrap();
    let o = f.run(&["cluster"], &too_many, "bad");
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("clusters"));
}

#[test]
fn augment_counts() {
    let f = Fixture::new("");
    let cfg = f.path("run.toml");
    let missing = f.run(&["augment"], &cfg, "out");
    assert_eq!(code(&missing), 2, "no clusters.json yet");

    f.run_ok(&["cluster"], &cfg, "out");
    let zero = f.config("r0.toml", "[augment]\nr = 0\n", "");
    f.run_ok(&["augment"], &zero, "out");
    let n = |p: &str| load_dataset(&f.path(p), &opts()).unwrap().triplets.len();
    assert_eq!(n("out/augmented.jsonl"), 120);

    // six objects per cluster: every triplet gains five substitutes
    let big = tempfile::tempdir().unwrap();
    let synth = big.path().join("synth.toml");
    fs::write(&synth, "[synth]\nobjects_per_cluster = 6\ntrain_images = 50\ntest_images = 0\n").unwrap();
    run_ok(&["synth", "--config", s(&synth), "--out", s(&big.path().join("data"))]);
    let run = big.path().join("run.toml");
    fs::write(
        &run,
        format!(
            "[paths]\nannotations = \"data/train.jsonl\"\nembeddings = \"data/embeddings.jsonl\"\n\
             visual_prototypes = \"data/prototypes.jsonl\"\n{DATA_OPTIONS}[funcsim]\nk = 2\n"
        ),
    )
    .unwrap();
    let out = big.path().join("out");
    run_ok(&["cluster", "--config", s(&run), "--out", s(&out)]);
    run_ok(&["augment", "--config", s(&run), "--out", s(&out)]);
    let augmented = load_dataset(&out.join("augmented.jsonl"), &opts()).unwrap();
    assert_eq!(augmented.triplets.len(), 6 * 50);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("augment-summary.json")).unwrap()).unwrap();
    assert_eq!(summary["originals"], 50);
    assert_eq!(summary["synthetic"], 250);
}

#[test]
fn train_lowers_loss_and_is_reproducible() {
    let f = Fixture::new("");
    let cfg = f.path("run.toml");
    f.run_ok(&["train"], &cfg, "a");
    f.run_ok(&["train"], &cfg, "b");
    assert_eq!(fs::read(f.path("a/model.json")).unwrap(), fs::read(f.path("b/model.json")).unwrap());
    let ck = load_checkpoint(&f.path("a/model.json")).unwrap();
    assert!(ck.epoch_loss.last().unwrap() < ck.epoch_loss.first().unwrap());

    let zero = f.config("e0.toml", "", "");
    fs::write(&zero, fs::read_to_string(&zero).unwrap().replace("epochs = 4", "epochs = 0")).unwrap();
    f.run_ok(&["train"], &zero, "zero");
    let ck = load_checkpoint(&f.path("zero/model.json")).unwrap();
    let dims = ModelDims { embedding_dim: 16, feature_dim: 8, hidden1: 16, hidden2: 8, predicates: 4 };
    let init = PredicateModel::init(dims, ck.model.predicates.clone(), "person", 3);
    assert_eq!(ck.model, init);
}

#[test]
fn infer_thresholds_and_empty_input() {
    let f = Fixture::new("");
    let cfg = f.path("run.toml");
    f.run_ok(&["train"], &cfg, "out");
    f.run_ok(&["infer"], &cfg, "out");
    assert!(!load_hoi_detections(&f.path("out/hoi_detections.jsonl")).unwrap().is_empty());

    let strict = f.config("strict.toml", "[inference]\ndet_threshold = 1.0\n", "model = \"out/model.json\"\n");
    f.run_ok(&["infer"], &strict, "strict");
    assert!(load_hoi_detections(&f.path("strict/hoi_detections.jsonl")).unwrap().is_empty());

    fs::write(f.path("empty.jsonl"), "").unwrap();
    let empty = f.config("empty.toml", "", "model = \"out/model.json\"\n");
    fs::write(&empty, fs::read_to_string(&empty).unwrap().replace("data/detections.jsonl", "empty.jsonl")).unwrap();
    f.run_ok(&["infer"], &empty, "empty");
    assert!(load_hoi_detections(&f.path("empty/hoi_detections.jsonl")).unwrap().is_empty());
}

#[test]
fn perfect_predictions_score_one() {
    let f = Fixture::new("");
    let test = load_dataset(&f.path("data/test.jsonl"), &opts()).unwrap();
    let perfect: Vec<HoiDetection> = test
        .triplets
        .iter()
        .flat_map(|t| {
            t.predicates.iter().map(|p| HoiDetection {
                image_id: t.image_id.clone(),
                human_box: t.human_box,
                object_box: t.object_box,
                object_class: t.object_class.clone(),
                predicate: p.clone(),
                score: 1.0,
            })
        })
        .collect();
    save_hoi_detections(&f.path("perfect.jsonl"), &perfect, None).unwrap();
    let cfg = f.config("eval.toml", "", "predictions = \"perfect.jsonl\"\nsplit = \"data/split.json\"\n");
    f.run_ok(&["eval"], &cfg, "out");
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(f.path("out/report.json")).unwrap()).unwrap();
    for bucket in ["full", "seen", "unseen"] {
        assert_eq!(report.buckets[bucket].map, Some(1.0), "{bucket}");
    }
    assert!(report.provenance.is_some());
}

#[test]
fn splits_are_seeded_and_infeasible_ones_fail() {
    let f = Fixture::new("[split]\nkind = \"seen_object\"\nn_unseen = 4\n");
    let cfg = f.path("run.toml");
    f.run_ok(&["split"], &cfg, "a");
    f.run_ok(&["split"], &cfg, "b");
    assert_eq!(fs::read(f.path("a/split.json")).unwrap(), fs::read(f.path("b/split.json")).unwrap());

    let too_many = f.config("bad.toml", "[split]\nkind = \"seen_object\"\nn_unseen = 12\n", "");
    assert_eq!(code(&f.run(&["split"], &too_many, "bad")), 4);
}

#[test]
fn towards_scenario_has_full_bias() {
    let f = Fixture::new("");
    let train = load_dataset(&f.path("data/train.jsonl"), &opts()).unwrap();
    let t = &train.triplets[0];
    let predicate = t.predicates.first().unwrap();
    let cfg = f.config(
        "bias.toml",
        &format!(
            "[bias]\nscenario = \"towards\"\n[[bias.pairs]]\npredicate = \"{predicate}\"\nobject = \"{}\"\n",
            t.object_class
        ),
        "",
    );
    f.run_ok(&["bias"], &cfg, "out");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(f.path("out/bias-report.json")).unwrap()).unwrap();
    assert_eq!(report["pairs"][0]["bias"]["scenario"], 1.0);
    assert!(report["pairs"][0]["bias"]["train"].as_f64().unwrap() < 1.0);
    assert!(f.path("out/bias-train.jsonl").is_file());
}

#[test]
fn exit_codes() {
    let f = Fixture::new("");
    assert_eq!(code(&hoigen(&["cluster", "--config", s(&f.path("nope.toml"))])), 2);

    let broken = f.path("broken.toml");
    fs::write(&broken, "[train]\nepochs = \"many\"\n").unwrap();
    assert_eq!(code(&hoigen(&["train", "--config", s(&broken)])), 2);

    let unknown = f.path("unknown.toml");
    fs::write(&unknown, "colour = 1\n").unwrap();
    assert_eq!(code(&hoigen(&["synth", "--config", s(&unknown)])), 2);

    fs::write(f.path("data/bad.jsonl"), "{\"image_id\": \"x\", \"width\": 10, \"height\": 10, \"human_box\": [5, 5, 5, 9], \"object_box\": [1, 1, 2, 2], \"object_class\": \"cup\", \"predicates\": [\"hold\"], \"human_feature\": [0,0,0,0,0,0,0,0]}\n").unwrap();
    let bad = f.config("bad.toml", "", "");
    fs::write(&bad, fs::read_to_string(&bad).unwrap().replace("data/train.jsonl", "data/bad.jsonl")).unwrap();
    assert_eq!(code(&f.run(&["train"], &bad, "out")), 3);

    assert_eq!(code(&hoigen(&["frobnicate"])), 2);
}
