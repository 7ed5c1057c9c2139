use nvq_core::data::{FeatureStore, VqaExample};
use nvq_core::evalkit::{evaluate, CategoryMap, Category, Protocol};
use nvq_core::seqae::{AeVariant, Autoencoder};
use nvq_core::text::{build_vocab, Provenance, Vocabulary};
use nvq_core::vqa::{
    fusion, train_vqa, vqa_accuracy, Arch, AnswerVocabulary, Head, ModelPredictor, VqaModel, VqaTrainConfig,
};
use nvq_core::CoreError;
use nvq_numkit::{grad_check_many, Matrix, NumError, Rng};
use proptest::prelude::*;
use std::collections::BTreeSet;

fn vocab(text: &str) -> Vocabulary {
    build_vocab([text], 1, Provenance::Train).unwrap()
}

fn answers(list: &[&str]) -> AnswerVocabulary {
    AnswerVocabulary::from_answers(list.iter().map(|s| s.to_string()).collect()).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

/// Scalar-loop LSTM, independent of the tape.
fn oracle_lstm(w: &Matrix, u: &Matrix, b: &Matrix, inputs: &[Vec<f64>]) -> Vec<f64> {
    let n = u.cols();
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    for x in inputs {
        let wx = matvec(w, x);
        let uh = matvec(u, &h);
        let z: Vec<f64> = (0..4 * n).map(|k| wx[k] + uh[k] + b.get(k, 0)).collect();
        for k in 0..n {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[n + k]);
            let o = sigmoid(z[2 * n + k]);
            let g = z[3 * n + k].tanh();
            c[k] = f * c[k] + i * g;
            h[k] = o * c[k].tanh();
        }
    }
    h
}

fn oracle_logits(model: &VqaModel, question: &str, image: &[f64]) -> Vec<f64> {
    let ids = model.vocab().encode(question).ids;
    let row = |id: usize| model.embed.row(id).to_vec();
    match &model.head {
        Head::Arch1 { w_q, w_i, w_qi } => {
            let mut inputs = vec![row(1)];
            inputs.extend(ids.iter().map(|&i| row(i)));
            inputs.push(row(2));
            let x_q = oracle_lstm(&model.lstm.w, &model.lstm.u, &model.lstm.b, &inputs);
            let q = matvec(w_q, &x_q);
            let i = matvec(w_i, image);
            let f: Vec<f64> = q.iter().zip(&i).map(|(a, b)| a.tanh() * b.tanh()).collect();
            matvec(w_qi, &f)
        }
        Head::Arch2 { w_e, w_out } => {
            let mut inputs = vec![matvec(w_e, image)];
            inputs.extend(ids.iter().map(|&i| row(i)));
            let h = oracle_lstm(&model.lstm.w, &model.lstm.u, &model.lstm.b, &inputs);
            matvec(w_out, &h)
        }
    }
}

fn tiny(arch: Arch, seed: u64) -> VqaModel {
    VqaModel::new(
        arch,
        vocab("is there a red dog"),
        answers(&["yes", "no", "red", "2"]),
        (3, 3, 3, 2),
        0.7,
        &mut Rng::new(seed),
    )
    .unwrap()
}

#[test]
fn logits_match_scalar_oracle() {
    for arch in [Arch::Arch1, Arch::Arch2] {
        for seed in 0..5 {
            let m = tiny(arch, seed);
            for q in ["is there a red dog", "", "a wolf"] {
                let got = m.logits(q, &[0.4, -1.1]).unwrap();
                let want = oracle_logits(&m, q, &[0.4, -1.1]);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{arch} `{q}`: {got:?} vs {want:?}");
                }
            }
        }
    }
}

#[test]
fn zero_image_gives_zero_logits_and_first_answer() {
    let m = tiny(Arch::Arch1, 3);
    let l = m.logits("is there a dog", &[0.0, 0.0]).unwrap();
    assert!(l.iter().all(|&v| v == 0.0));
    assert_eq!(m.predict("is there a dog", &[0.0, 0.0], None).unwrap(), "yes");
}

#[test]
fn row_of_ones_sums_fusion() {
    let mut m = VqaModel::new(
        Arch::Arch1,
        vocab("a dog"),
        answers(&["yes"]),
        (3, 3, 4, 2),
        0.7,
        &mut Rng::new(1),
    )
    .unwrap();
    let Head::Arch1 { w_q, w_i, w_qi } = &mut m.head else {
        unreachable!()
    };
    *w_qi = Matrix::filled(1, 4, 1.0);
    let (w_q, w_i) = (w_q.clone(), w_i.clone());
    let x_q = m.question_state("a dog").unwrap();
    let f = fusion(&w_q, &x_q, &w_i, &[0.3, 0.9]).unwrap();
    let l = m.logits("a dog", &[0.3, 0.9]).unwrap();
    assert!((l[0] - f.iter().sum::<f64>()).abs() < 1e-15);
}

#[test]
fn arch2_is_image_sensitive() {
    let m = tiny(Arch::Arch2, 9);
    let a = m.logits("is there a dog", &[1.0, 0.0]).unwrap();
    let b = m.logits("is there a dog", &[0.0, 1.0]).unwrap();
    assert_ne!(a, b);
}

fn gradient_fixture(arch: Arch, seed: u64) -> VqaModel {
    let mut m = VqaModel::new(
        arch,
        vocab("red dog runs far"),
        answers(&["yes", "no", "red", "2"]),
        (2, 2, 2, 3),
        1.0,
        &mut Rng::new(seed),
    )
    .unwrap();
    m.lstm.u = m.lstm.u.scale(2.0);
    m
}

#[test]
fn loss_gradients_match_finite_differences() {
    for arch in [Arch::Arch1, Arch::Arch2] {
        for seed in 0..3 {
            let m = gradient_fixture(arch, seed);
            let ids = m.vocab().encode("red dog runs").ids;
            let points: Vec<Matrix> = m.tensors().into_iter().cloned().collect();
            let report = grad_check_many(
                |t, v| {
                    m.loss_with(t, v, &ids, &[0.8, -0.5, 0.3], 2)
                        .map_err(|e| NumError::Contract(e.to_string()))
                },
                &points,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(report.pass, "{arch} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn init_from_ae_copies_encoder() {
    let v = vocab("is there a red dog");
    let ae = Autoencoder::new(AeVariant::MultimodalA2, v.clone(), 3, 3, 2, 0.5, &mut Rng::new(4)).unwrap();
    let bundle = ae.export_encoder();
    for arch in [Arch::Arch1, Arch::Arch2] {
        let mut m = VqaModel::new(arch, v.clone(), answers(&["yes", "no"]), (3, 3, 3, 2), 0.5, &mut Rng::new(5))
            .unwrap();
        let before = m.logits("is there a dog", &[0.5, 0.5]).unwrap();
        m.init_from_ae(&bundle).unwrap();
        assert_eq!(m.embed, bundle.embed);
        assert_eq!(m.lstm, bundle.encoder);
        if let Head::Arch2 { w_e, .. } = &m.head {
            assert_eq!(Some(w_e), bundle.img_proj.as_ref());
        }
        assert_ne!(m.logits("is there a dog", &[0.5, 0.5]).unwrap(), before);
    }
}

#[test]
fn init_from_ae_refuses_foreign_vocabularies() {
    let train = vocab("is there a red dog");
    let mut oracle = train.clone().with_provenance(Provenance::Oracle);
    oracle.push("wolf", 0);
    let ae = Autoencoder::new(AeVariant::Text, oracle, 3, 3, 0, 0.5, &mut Rng::new(4)).unwrap();
    let mut m = VqaModel::new(Arch::Arch1, train.clone(), answers(&["yes"]), (3, 3, 3, 2), 0.5, &mut Rng::new(5))
        .unwrap();
    assert!(matches!(m.init_from_ae(&ae.export_encoder()), Err(CoreError::Provenance(_))));

    let other = vocab("is there a blue cat");
    let ae = Autoencoder::new(AeVariant::Text, other, 3, 3, 0, 0.5, &mut Rng::new(4)).unwrap();
    assert!(matches!(m.init_from_ae(&ae.export_encoder()), Err(CoreError::Provenance(_))));

    let ae = Autoencoder::new(AeVariant::Text, train, 4, 3, 0, 0.5, &mut Rng::new(4)).unwrap();
    assert!(matches!(
        m.init_from_ae(&ae.export_encoder()),
        Err(CoreError::ShapeMismatch { ref tensor, .. }) if tensor == "embed"
    ));
}

fn memorization_fixture() -> (Vec<VqaExample>, FeatureStore, Vocabulary) {
    let nouns = ["dog", "cat", "cow", "car", "bus", "cup"];
    let colors = ["red", "blue", "green", "white", "black"];
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut examples = Vec::new();
    let mut rng = Rng::new(77);
    for i in 0..30 {
        let noun = nouns[i % 6];
        let color = colors[(i * 7 / 6) % 5];
        let image_id = format!("img{i}");
        ids.push(image_id.clone());
        rows.push((0..6).map(|_| rng.normal()).collect::<Vec<f64>>());
        examples.push(VqaExample {
            qid: format!("q{i}"),
            image_id,
            question: format!("what color is the {noun}"),
            answers: vec![color.to_string(); 10],
            choices: None,
            question_type: "other".into(),
        });
    }
    let store = FeatureStore::new(ids, Matrix::from_rows(&rows).unwrap()).unwrap();
    let v = build_vocab(examples.iter().map(|e| e.question.as_str()), 1, Provenance::Train).unwrap();
    (examples, store, v)
}

fn fresh(arch: Arch, v: &Vocabulary, ans: &AnswerVocabulary, std: f64) -> VqaModel {
    VqaModel::new(arch, v.clone(), ans.clone(), (8, 16, 16, 6), std, &mut Rng::new(3)).unwrap()
}

#[test]
fn memorizes_thirty_examples() {
    let (examples, store, v) = memorization_fixture();
    let ans = AnswerVocabulary::build(&examples, 1000).unwrap();
    for arch in [Arch::Arch1, Arch::Arch2] {
        let mut m = fresh(arch, &v, &ans, 0.3);
        let config = VqaTrainConfig {
            epochs: 500,
            batch_size: 10,
            lr: 0.01,
            clip: Some(5.0),
            patience: 500,
            seed: 1,
        };
        train_vqa(&mut m, &examples, &[], &store, &config).unwrap();
        assert_eq!(vqa_accuracy(&m, &examples, &store).unwrap(), 1.0, "{arch}");
    }
}

#[test]
fn initial_loss_is_log_answer_count() {
    let (examples, store, v) = memorization_fixture();
    let ans = AnswerVocabulary::build(&examples, 1000).unwrap();
    let mut m = fresh(Arch::Arch1, &v, &ans, 0.01);
    let config = VqaTrainConfig {
        epochs: 1,
        batch_size: 30,
        lr: 1e-9,
        clip: None,
        patience: 1,
        seed: 1,
    };
    let curves = train_vqa(&mut m, &examples, &[], &store, &config).unwrap();
    let uniform = (ans.len() as f64).ln();
    assert!((curves.train_loss[0] - uniform).abs() / uniform < 0.01);
}

#[test]
fn training_is_reproducible_and_counts_oov() {
    let (mut examples, store, v) = memorization_fixture();
    let ans = AnswerVocabulary::build(&examples[..25], 1000).unwrap();
    examples[29].answers = vec!["purple".into(); 10];
    let config = VqaTrainConfig {
        epochs: 6,
        batch_size: 8,
        lr: 0.01,
        clip: Some(5.0),
        patience: 2,
        seed: 5,
    };
    let run = || {
        let mut m = fresh(Arch::Arch2, &v, &ans, 0.3);
        let c = train_vqa(&mut m, &examples[..24], &examples[24..], &store, &config).unwrap();
        (m, c)
    };
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    let mut m = fresh(Arch::Arch2, &v, &ans, 0.3);
    let c = train_vqa(&mut m, &examples, &[], &store, &config).unwrap();
    assert_eq!(c.skipped_oov, 1);
    assert_eq!(c.used, 29);
    assert!(train_vqa(&mut m, &[], &[], &store, &config).is_err());
}

#[test]
fn checkpoint_round_trip() {
    for arch in [Arch::Arch1, Arch::Arch2] {
        let m = tiny(arch, 2);
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        assert_eq!(VqaModel::load(dir.path()).unwrap(), m);
    }
}

#[test]
fn multiple_choice_never_loses_to_open_ended() {
    let (mut examples, store, v) = memorization_fixture();
    let ans = AnswerVocabulary::build(&examples, 1000).unwrap();
    for (i, ex) in examples.iter_mut().enumerate() {
        let mut choices = vec![ex.answers[0].clone(), "yes".into(), "4".into()];
        choices.rotate_left(i % 3);
        ex.choices = Some(choices);
    }
    let none = BTreeSet::new();
    for seed in 0..4 {
        let m = VqaModel::new(Arch::Arch1, v.clone(), ans.clone(), (8, 8, 8, 6), 0.8, &mut Rng::new(seed)).unwrap();
        let p = ModelPredictor { model: &m, features: &store };
        let oeq = evaluate(&p, &examples, Protocol::Oeq, &none, &none, &CategoryMap::default()).unwrap();
        let mcq = evaluate(&p, &examples, Protocol::Mcq, &none, &none, &CategoryMap::default()).unwrap();
        assert!(mcq.accuracy(Category::Overall).unwrap() >= oeq.accuracy(Category::Overall).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_is_symmetric(seed in 0u64..10_000) {
        let mut rng = Rng::new(seed);
        let w_q = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let w_i = Matrix::random_normal(4, 3, 1.0, &mut rng);
        let x_q: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let x_i: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        prop_assert_eq!(fusion(&w_q, &x_q, &w_i, &x_i).unwrap(), fusion(&w_i, &x_i, &w_q, &x_q).unwrap());
    }

    #[test]
    fn prediction_ignores_positive_rescaling(
        scores in prop::collection::vec(-5.0f64..5.0, 4),
        scale in 0.01f64..100.0,
        pick in prop::collection::vec(0usize..6, 0..4),
    ) {
        let a = answers(&["w", "x", "y", "z"]);
        let pool = ["w", "x", "y", "z", "q", "r"];
        let choices: Vec<String> = pick.iter().map(|&i| pool[i].to_string()).collect();
        let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
        prop_assert_eq!(
            nvq_core::vqa::choose(&a, &scores, None),
            nvq_core::vqa::choose(&a, &scaled, None)
        );
        if !choices.is_empty() {
            prop_assert_eq!(
                nvq_core::vqa::choose(&a, &scores, Some(&choices)),
                nvq_core::vqa::choose(&a, &scaled, Some(&choices))
            );
        }
    }

    #[test]
    fn train_vocabulary_is_blind_to_novel_words(seed in 0u64..1000, novel in "[b-z]{4,8}") {
        let v = vocab("is there a red dog");
        prop_assume!(!v.contains(&novel));
        for arch in [Arch::Arch1, Arch::Arch2] {
            let m = VqaModel::new(arch, v.clone(), answers(&["yes", "no"]), (3, 4, 3, 2), 0.5, &mut Rng::new(seed)).unwrap();
            let a = m.logits(&format!("is there a {novel}"), &[0.2, -0.7]).unwrap();
            let b = m.logits("is there a <unk>", &[0.2, -0.7]).unwrap();
            prop_assert_eq!(
                a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
