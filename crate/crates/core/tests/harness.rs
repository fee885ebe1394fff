use std::fs;

use mint_core::harness::{
    self, generate_fixtures, mme_cases, ExperimentConfig, FixtureSizes, Lexicon, Mode,
    ANSWER_KEY_FILE, POPE_FILE,
};
use mint_core::metrics::{chair_scores, mme_scores, pope_scores};

fn small_sizes() -> FixtureSizes {
    FixtureSizes {
        images: 30,
        pope_questions: 200,
        mme_cases: 40,
        chair_captions: 30,
    }
}

#[test]
fn answer_key_round_trip() {
    let lex = Lexicon::new(64, 0).unwrap();
    let set = generate_fixtures(11, &small_sizes(), &lex).unwrap();
    let key = &set.key;

    let records: Vec<_> = set
        .pope_predicted
        .iter()
        .map(|p| p.to_record(p.prediction.as_deref().unwrap()))
        .collect();
    let pope = pope_scores(&records).unwrap();
    assert_eq!(pope.value("accuracy"), Some(key.pope.accuracy));
    assert_eq!(pope.value("precision"), Some(key.pope.precision));
    assert_eq!(pope.value("recall"), Some(key.pope.recall));
    assert_eq!(pope.value("f1"), Some(key.pope.f1));
    assert_eq!(pope.count("unparsed"), Some(key.pope.unparsed));
    assert_eq!(pope.count("tp"), Some(key.pope.tp));

    let preds: Vec<String> = set
        .mme_predicted
        .iter()
        .map(|m| m.prediction.clone().unwrap())
        .collect();
    let mme = mme_scores(&mme_cases(&set.mme_predicted, &preds).unwrap()).unwrap();
    assert_eq!(mme.value("accuracy"), Some(key.mme.accuracy));
    assert_eq!(mme.value("accuracy_plus"), Some(key.mme.accuracy_plus));

    let chair = chair_scores(&set.annotations, &set.captions, &set.synonyms).unwrap();
    assert_eq!(chair.value("chair_i"), Some(key.chair.chair_i));
    assert_eq!(chair.value("chair_s"), Some(key.chair.chair_s));
    assert_eq!(chair.value("recall_i"), Some(key.chair.recall_i));
}

#[test]
fn fixtures_are_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        seed: 3,
        output_dir: dir.path().join("a"),
        fixtures: small_sizes(),
        ..ExperimentConfig::default()
    };
    let out = harness::run(Mode::GenFixtures, &cfg).unwrap();
    let first: Vec<Vec<u8>> = out.files.iter().map(|f| fs::read(f).unwrap()).collect();
    harness::run(Mode::GenFixtures, &cfg).unwrap();
    let again: Vec<Vec<u8>> = out.files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, again);

    cfg.seed = 4;
    cfg.output_dir = dir.path().join("b");
    harness::run(Mode::GenFixtures, &cfg).unwrap();
    assert_ne!(
        fs::read(dir.path().join("a").join(POPE_FILE)).unwrap(),
        fs::read(dir.path().join("b").join(POPE_FILE)).unwrap()
    );
    assert!(dir.path().join("b").join(ANSWER_KEY_FILE).exists());
}

#[test]
fn toy_model_evaluations_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let fx = dir.path().join("fx");
    let mut cfg = ExperimentConfig {
        seed: 5,
        output_dir: fx.clone(),
        fixtures: FixtureSizes {
            images: 6,
            pope_questions: 12,
            mme_cases: 6,
            chair_captions: 6,
        },
        ..ExperimentConfig::default()
    };
    harness::run(Mode::GenFixtures, &cfg).unwrap();
    cfg.decode.max_new_tokens = 6;
    cfg.data.annotations = Some(fx.join("annotations.jsonl"));
    cfg.data.synonyms = Some(fx.join("synonyms.json"));
    cfg.data.pope = Some(fx.join("pope.jsonl"));
    cfg.data.mme = Some(fx.join("mme.jsonl"));
    cfg.output_dir = dir.path().join("out");

    for mode in [Mode::EvalPope, Mode::EvalMme, Mode::EvalChair] {
        let out = harness::run(mode, &cfg).unwrap();
        let report: serde_json::Value =
            serde_json::from_slice(&fs::read(&out.files[0]).unwrap()).unwrap();
        assert_eq!(report["mode"], mode.as_str());
        assert_eq!(report["seed"], 5);
        assert!(report["generated"].as_u64().unwrap() > 0);
        let first = fs::read(&out.files[0]).unwrap();
        harness::run(mode, &cfg).unwrap();
        assert_eq!(
            first,
            fs::read(&out.files[0]).unwrap(),
            "{} not reproducible",
            mode.as_str()
        );
    }
}

#[test]
fn neutral_decode_matches_vanilla_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.decode.alpha = 0.0;
    cfg.decode.beta = 0.0;
    cfg.selection.keep_ratio = 1.0;
    cfg.decode.max_new_tokens = 10;
    harness::run(Mode::Decode, &cfg).unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("decode.json")).unwrap()).unwrap();
    assert_eq!(report["matches_vanilla"], true);
    let trace = fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    assert_eq!(
        trace.lines().count(),
        report["tokens"].as_array().unwrap().len()
    );
}

#[test]
fn analyze_and_heatmap_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.analyze.prompts = 3;
    cfg.heatmap.width = 32;
    cfg.heatmap.height = 32;
    cfg.heatmap.layers = Some(vec![1]);
    cfg.heatmap.max_heads = Some(2);

    let out = harness::run(Mode::Analyze, &cfg).unwrap();
    let csv = fs::read_to_string(&out.files[1]).unwrap();
    assert_eq!(csv.lines().count(), 1 + cfg.model.num_layers);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&out.files[0]).unwrap()).unwrap();
    assert_eq!(report["max_new_tokens"], 20);

    let out = harness::run(Mode::Heatmap, &cfg).unwrap();
    let pngs: Vec<_> = out
        .files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "png"))
        .collect();
    assert_eq!(pngs.len(), 3);
    let name = pngs[0].file_name().unwrap().to_str().unwrap();
    assert!(name.starts_with("img_demo_1_mean_"), "{name}");
}
