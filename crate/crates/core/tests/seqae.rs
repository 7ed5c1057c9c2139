use nvq_core::embed::EmbeddingMatrix;
use nvq_core::seqae::{
    pretrain_schedule, train_ae, AeExample, AeSample, AeShape, AeTrainConfig, AeVariant, Autoencoder,
    EncoderBundle, PretrainInputs, PretrainSetting,
};
use nvq_core::text::{build_vocab, Provenance, Vocabulary, UNK_ID};
use nvq_core::CoreError;
use nvq_numkit::{grad_check_many, Matrix, NumError, Rng};
use proptest::prelude::*;

fn vocab(sentences: &[&str]) -> Vocabulary {
    build_vocab(sentences.iter().copied(), 1, Provenance::Train).unwrap()
}

/// Random fixture with recurrent weights large enough that no gradient
/// coordinate sits at the finite-difference roundoff floor.
fn conditioned_ae(variant: AeVariant, v: &Vocabulary, d: usize, seed: u64) -> Autoencoder {
    let mut ae = Autoencoder::new(variant, v.clone(), d, d, 3, 1.0, &mut Rng::new(seed)).unwrap();
    ae.out_w = ae.out_w.scale(5.0);
    ae.encoder.w = ae.encoder.w.scale(0.6);
    ae.encoder.u = ae.encoder.u.scale(2.0);
    ae.decoder.w = ae.decoder.w.scale(0.8);
    ae.decoder.u = ae.decoder.u.scale(2.0);
    ae
}

fn grad_check_variant(variant: AeVariant, seed: u64) {
    let v = vocab(&["red dog runs far"]);
    assert_eq!(v.len(), 7);
    let ae = conditioned_ae(variant, &v, 4, seed);
    let image = variant.is_multimodal().then(|| vec![0.8, -0.3, 0.5]);
    let ex = AeExample::new(v.encode("dog runs far").ids, image);
    let points: Vec<Matrix> = ae.tensors().into_iter().cloned().collect();
    let report = grad_check_many(
        |t, vars| {
            ae.loss_with(t, vars, &ex)
                .map_err(|e| NumError::Contract(e.to_string()))
        },
        &points,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.pass, "{variant} seed {seed}: {report:?}");
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for variant in [AeVariant::Text, AeVariant::MultimodalA1, AeVariant::MultimodalA2] {
        for seed in 0..3 {
            grad_check_variant(variant, seed);
        }
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let text = words.join(" ");
    let v = vocab(&[text.as_str()]);
    let ae = Autoencoder::new(AeVariant::Text, v.clone(), 8, 8, 0, 0.01, &mut Rng::new(5)).unwrap();
    let ex = AeExample::new(v.encode("w1 w2 w3 w4 w5").ids, None);
    let loss = ae.loss(&ex).unwrap();
    let uniform = (v.len() as f64).ln();
    assert!((loss - uniform).abs() / uniform < 0.01, "{loss} vs {uniform}");
}

fn fixture_sentences(n: usize) -> Vec<String> {
    let subjects = ["dog", "cat", "horse", "cow", "sheep"];
    let verbs = ["runs", "sleeps", "eats", "jumps", "sits"];
    let places = ["home", "outside", "there", "here"];
    (0..n)
        .map(|i| {
            format!(
                "the {} {} {}",
                subjects[i % 5],
                verbs[(i / 5) % 5],
                places[(i / 25 + i) % 4]
            )
        })
        .collect()
}

fn train_fixture(n: usize, epochs: usize, batch: usize, lr: f64) -> (Autoencoder, Vec<AeExample>, Vec<f64>) {
    let sentences = fixture_sentences(n);
    let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
    let v = vocab(&refs);
    let mut ae = Autoencoder::new(AeVariant::Text, v.clone(), 16, 24, 0, 0.3, &mut Rng::new(3)).unwrap();
    let data: Vec<AeExample> = refs.iter().map(|s| AeExample::new(v.encode(s).ids, None)).collect();
    let config = AeTrainConfig {
        epochs,
        batch_size: batch,
        lr,
        clip: Some(5.0),
        seed: 11,
    };
    let curve = train_ae(&mut ae, &data, &config).unwrap();
    (ae, data, curve)
}

#[test]
fn overfits_ten_sentences() {
    let (ae, data, _) = train_fixture(10, 200, 5, 0.01);
    let acc = ae.reconstruction_accuracy(&data).unwrap();
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn loss_is_non_increasing_on_full_batch() {
    let (_, _, curve) = train_fixture(50, 40, 50, 0.003);
    for w in curve.windows(2) {
        assert!(w[1] <= w[0], "{curve:?}");
    }
}

#[test]
fn single_token_sentences_are_memorized() {
    let v = vocab(&["alpha beta gamma"]);
    let mut ae = Autoencoder::new(AeVariant::Text, v.clone(), 16, 16, 0, 0.3, &mut Rng::new(1)).unwrap();
    let data: Vec<AeExample> = ["alpha", "beta", "gamma"]
        .iter()
        .map(|s| AeExample::new(v.encode(s).ids, None))
        .collect();
    let config = AeTrainConfig {
        epochs: 300,
        batch_size: 3,
        lr: 0.01,
        clip: Some(5.0),
        seed: 2,
    };
    let curve = train_ae(&mut ae, &data, &config).unwrap();
    assert!(*curve.last().unwrap() < 0.01, "{:?}", curve.last());
}

#[test]
fn training_is_deterministic() {
    let (a, _, ca) = train_fixture(12, 3, 4, 0.01);
    let (b, _, cb) = train_fixture(12, 3, 4, 0.01);
    assert_eq!(ca.last().unwrap().to_bits(), cb.last().unwrap().to_bits());
    assert_eq!(a, b);
}

#[test]
fn empty_corpus_is_rejected() {
    let v = vocab(&["a"]);
    let mut ae = Autoencoder::new(AeVariant::Text, v, 4, 4, 0, 0.1, &mut Rng::new(1)).unwrap();
    assert!(train_ae(&mut ae, &[], &AeTrainConfig::new(1)).is_err());
}

#[test]
fn empty_sentence_encodes_framing_only() {
    let v = vocab(&["a dog"]);
    let ae = Autoencoder::new(AeVariant::Text, v, 4, 4, 0, 0.3, &mut Rng::new(1)).unwrap();
    let enc = ae.encode(&[], None).unwrap();
    assert_eq!(enc.h_enc.len(), 4);
    assert!(enc.fusion.is_none());
    assert_eq!(ae.decoder_init(&enc), enc.h_enc);
}

#[test]
fn bundle_round_trip_is_bit_identical() {
    let v = vocab(&["a dog runs"]);
    for variant in [AeVariant::Text, AeVariant::MultimodalA2] {
        let ae = Autoencoder::new(variant, v.clone(), 4, 5, 3, 0.3, &mut Rng::new(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = ae.export_encoder();
        bundle.save(dir.path()).unwrap();
        let back = EncoderBundle::load(dir.path()).unwrap();
        assert_eq!(back, bundle);
    }
}

#[test]
fn bundle_with_wrong_tensor_shape_names_it() {
    let v = vocab(&["a dog runs"]);
    let ae = Autoencoder::new(AeVariant::Text, v, 4, 5, 0, 0.3, &mut Rng::new(8)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ae.export_encoder().save(dir.path()).unwrap();
    Matrix::zeros(20, 3).save(dir.path().join("encoder_u.nvqm")).unwrap();
    match EncoderBundle::load(dir.path()) {
        Err(CoreError::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "encoder_u"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

fn samples(lines: &[&str]) -> Vec<AeSample> {
    lines.iter().map(|s| AeSample::text(*s)).collect()
}

fn shape() -> AeShape {
    AeShape {
        variant: AeVariant::Text,
        d_e: 4,
        d_h: 6,
        d_i: 0,
        init_std: 0.1,
    }
}

fn small_config() -> AeTrainConfig {
    AeTrainConfig {
        epochs: 3,
        batch_size: 4,
        lr: 0.01,
        clip: Some(5.0),
        seed: 4,
    }
}

#[test]
fn oracle_and_train_vocabularies() {
    let train = vocab(&["the dog runs", "the cat sleeps"]);
    let mut oracle = train.clone().with_provenance(Provenance::Oracle);
    oracle.push("wolf", 0);
    let corpus = samples(&["the wolf runs", "the dog sleeps"]);
    let out = pretrain_schedule(
        &PretrainInputs {
            setting: PretrainSetting::Oracle,
            vocab: &oracle,
            stage1_vocab: None,
            external: None,
            samples: &corpus,
        },
        shape(),
        &small_config(),
    )
    .unwrap();
    assert!(out.ae.vocab().contains("wolf"));
    assert_eq!(out.ae.vocab().len(), train.len() + 1);
    assert_eq!(out.ae.vocab().provenance(), Provenance::Oracle);

    let out = pretrain_schedule(
        &PretrainInputs {
            setting: PretrainSetting::Train,
            vocab: &train,
            stage1_vocab: None,
            external: None,
            samples: &corpus,
        },
        shape(),
        &small_config(),
    )
    .unwrap();
    assert!(!out.ae.vocab().contains("wolf"));
    assert_eq!(out.ae.examples(&corpus[..1])[0].ids[1], UNK_ID);
}

#[test]
fn gen_expanded_trains_seeded_rows() {
    let words = ["the", "dog", "cat", "runs", "sleeps", "big", "small", "wolf", "fox"];
    let mut ext_vocab = Vocabulary::reserved(Provenance::External);
    for w in words {
        ext_vocab.push(w, 0);
    }
    let mut rng = Rng::new(21);
    let mut vectors = Matrix::random_normal(ext_vocab.len(), 3, 1.0, &mut rng);
    for r in 0..3 {
        vectors.row_mut(r).fill(0.0);
    }
    let external = EmbeddingMatrix::new(ext_vocab, vectors).unwrap();
    let train = vocab(&["the dog runs big", "the cat sleeps small"]);
    let mut general = train.clone().with_provenance(Provenance::General);
    general.push("fox", 0);
    general.push("wolf", 0);
    let corpus = samples(&[
        "the wolf runs",
        "the fox sleeps",
        "the dog runs big",
        "the cat sleeps small",
        "the big wolf",
        "the small fox",
    ]);
    let out = pretrain_schedule(
        &PretrainInputs {
            setting: PretrainSetting::GenExpanded,
            vocab: &general,
            stage1_vocab: Some(&train),
            external: Some(&external),
            samples: &corpus,
        },
        shape(),
        &small_config(),
    )
    .unwrap();
    let expansion = out.expansion.unwrap();
    assert_eq!(expansion.words, vec!["fox", "wolf"]);
    assert_eq!(out.ae.vocab().provenance(), Provenance::GeneralExpanded);
    for w in ["fox", "wolf"] {
        let row = out.ae.embed.row(out.ae.vocab().id(w));
        assert_ne!(row, expansion.row(w).unwrap(), "{w} was not trained");
    }
    assert_eq!(out.stage1_losses.len(), 3);
}

#[test]
fn gen_expanded_needs_external_table() {
    let train = vocab(&["the dog"]);
    let err = pretrain_schedule(
        &PretrainInputs {
            setting: PretrainSetting::GenExpanded,
            vocab: &train,
            stage1_vocab: Some(&train),
            external: None,
            samples: &samples(&["the dog"]),
        },
        shape(),
        &small_config(),
    )
    .unwrap_err();
    assert!(err.is_config());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn a1_decoder_init_is_skip_sum(seed in 0u64..1000, x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let v = vocab(&["a red dog runs"]);
        let ae = Autoencoder::new(AeVariant::MultimodalA1, v.clone(), 4, 5, 3, 0.5, &mut Rng::new(seed)).unwrap();
        let enc = ae.encode(&v.encode("a red dog").ids, Some(&x)).unwrap();
        let fusion = enc.fusion.clone().unwrap();
        let h0 = ae.decoder_init(&enc);
        for i in 0..h0.len() {
            prop_assert_eq!(h0[i], enc.h_enc[i] + fusion[i]);
        }
    }
}
