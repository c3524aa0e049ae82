use spanqa_augment::adapter::token_id;
use spanqa_augment::*;
use spanqa_core::dataset::{split_dataset, QADataset, SplitPlan};
use spanqa_core::extension::AnswerType;
use spanqa_core::filter::{decide, run_training_procedure, FilterConfig, KeepReason, ModelAdapter};
use spanqa_core::question::QAInstance;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn instance(i: usize) -> QAInstance {
    let fillers = [
        "the", "river", "north", "market", "old", "city", "bridge", "was", "built", "near",
    ];
    let mut context: Vec<String> = (0..12)
        .map(|k| fillers[(i * 7 + k * 3) % fillers.len()].to_string())
        .collect();
    let start = 2 + i % 6;
    let len = 1 + i % 3;
    for (k, w) in context[start..start + len].iter_mut().enumerate() {
        *w = format!("Name{}", (i + k) % 4);
    }
    let types = [AnswerType::NE, AnswerType::NP, AnswerType::VP];
    QAInstance {
        id: format!("q{i}"),
        question: words("Who built the bridge"),
        answer_text: context[start..start + len].join(" "),
        context,
        answer_start: start,
        answer_end: start + len,
        answer_type: types[i % 3],
        pseudo_ner_label: "PERSON".into(),
        origin: None,
    }
}

fn dataset(n: usize) -> QADataset {
    QADataset::from_instances((0..n).map(instance).collect())
}

fn config() -> AdapterConfig {
    AdapterConfig {
        model: ToyModelConfig {
            vocab_size: 64,
            seed: 5,
            ..ToyModelConfig::default()
        },
        steps: 10,
        ..AdapterConfig::default()
    }
}

#[test]
fn hashed_ids_skip_specials() {
    for w in ["a", "The", "the", "Estill"] {
        let id = token_id(w, 64);
        assert!((3..64).contains(&id));
    }
    assert_eq!(token_id("The", 64), token_id("the", 64));
}

#[test]
fn predictions_are_well_formed() {
    let mut a = ToyAdapter::new(config()).unwrap();
    let data = dataset(9);
    let preds = a.predict(&data).unwrap();
    assert_eq!(preds.len(), 9);
    for (p, inst) in preds.iter().zip(&data.instances) {
        p.validate().unwrap();
        assert_eq!(p.instance_id, inst.id);
        assert_eq!(p.nbest.len(), 10);
        for e in &p.nbest {
            assert!(e.start < e.end && e.end <= inst.context.len());
            assert!(e.end - e.start <= 30);
            assert_eq!(e.text, inst.context[e.start..e.end].join(" "));
        }
    }
}

#[test]
fn truncation_keeps_offsets_in_context_coordinates() {
    let cfg = AdapterConfig {
        max_seq_len: 10,
        ..config()
    };
    let a = ToyAdapter::new(cfg).unwrap();
    let inst = instance(4);
    let (ids, offset, c_len) = a.encode(&inst);
    assert_eq!(ids.len(), 10);
    assert_eq!(offset, 1 + 3 + 1);
    assert_eq!(c_len, 4);
    let preds = a.predict_dataset(&QADataset::from_instances(vec![inst])).unwrap();
    assert!(preds[0].nbest.iter().all(|e| e.end <= 4));
}

#[test]
fn fine_tuning_moves_toward_gold_and_is_deterministic() {
    let data = dataset(24);
    let cfg = AdapterConfig { steps: 150, ..config() };
    let mut a = ToyAdapter::new(cfg.clone()).unwrap();
    let hits = |a: &mut ToyAdapter| {
        let preds = a.predict(&data).unwrap();
        let fc = FilterConfig {
            k: 3,
            ..FilterConfig::default()
        };
        data.instances
            .iter()
            .zip(&preds)
            .filter(|(i, p)| decide(i, Some(p), &fc).reason == KeepReason::TopK)
            .count()
    };
    let before = hits(&mut a);
    a.fine_tune(&data).unwrap();
    let after = hits(&mut a);
    assert!(after > before, "top-3 hits {before} -> {after}");

    let mut b = ToyAdapter::new(cfg).unwrap();
    b.fine_tune(&data).unwrap();
    assert_eq!(a.params(), b.params());
}

#[test]
fn checkpoints_restore_the_model() {
    let dir = std::env::temp_dir().join(format!("spanqa-adapter-{}", std::process::id()));
    let cfg = AdapterConfig {
        checkpoint_dir: Some(dir.clone()),
        ..config()
    };
    let data = dataset(6);
    let mut a = ToyAdapter::new(cfg.clone()).unwrap();
    a.fine_tune(&data).unwrap();
    let path = a.checkpoint("round-1").unwrap().unwrap();
    let ck = Checkpoint::read(std::fs::File::open(&path).unwrap()).unwrap();
    let mut b = ToyAdapter::from_checkpoint(cfg, &ck).unwrap();
    assert_eq!(a.predict(&data).unwrap(), b.predict(&data).unwrap());
    std::fs::remove_dir_all(dir).unwrap();

    let mut quiet = ToyAdapter::new(config()).unwrap();
    assert_eq!(quiet.checkpoint("x").unwrap(), None);
}

#[test]
fn drives_the_filter_loop() {
    let data = dataset(40);
    let plan = SplitPlan {
        initial_size: 10,
        filter_parts: 3,
        ..SplitPlan::default()
    };
    let mut a = ToyAdapter::new(config()).unwrap();
    let report = run_training_procedure(&data, &plan, &mut a, &FilterConfig::default()).unwrap();
    assert_eq!(report.round_count(), 1 + 3);
    let split = split_dataset(&data, &plan).unwrap();
    for (r, part) in report.rounds.iter().zip(&split.parts) {
        assert!(r.counts.reconciles());
        assert_eq!(r.counts.part_size, part.len());
    }
}
