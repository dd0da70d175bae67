use hgnn_core::corpus::{synthesize_corpus, UNK_SPEAKER};
use hgnn_core::encoder::{
    self, contextualize, hgnn_bias, hgnn_forward, hgnn_weight, initial_features, lookup_node_embeddings,
    predict_emotion, project_modality, Modality,
};
use hgnn_core::nn::{feed_forward, Ctx};
use hgnn_core::{
    DialogueRecord, Emotion, GnnMode, HeteroGraph, Model, NodeType, NodeTypeSet, SpeakerRoster, SynthSpec, Tape,
    Tensor, TrainConfig,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> TrainConfig {
    TrainConfig {
        dropout: 0.0,
        ..TrainConfig::gradient_check_scale()
    }
}

fn synth(n: usize, turns: usize, seed: u64) -> Vec<DialogueRecord> {
    synthesize_corpus(&SynthSpec {
        n_dialogues: n,
        min_turns: turns,
        max_turns: turns,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn model_for(corpus: &[DialogueRecord], cfg: TrainConfig) -> Model {
    Model::from_corpus(corpus, cfg).unwrap()
}

fn randomize(t: &mut Tensor, rng: &mut ChaCha8Rng) {
    t.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
}

/// Encoder output for `model` on `d` with a given graph and optional row permutation of `H0`.
fn run_hgnn(model: &Model, d: &DialogueRecord, graph: &HeteroGraph, perm: Option<&[usize]>, mode: GnnMode) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let base = model.build_graph(d).unwrap();
    let h0 = initial_features(&mut ctx, d, &base, &model.vocab, &model.speakers).unwrap();
    let h0 = match perm {
        Some(p) => ctx.tape.row_lookup(h0, p.to_vec()).unwrap(),
        None => h0,
    };
    let h = hgnn_forward(&mut ctx, graph, h0, mode).unwrap();
    let p = predict_emotion(&mut ctx, h).unwrap();
    (tape.value(h).clone(), tape.value(p).clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tied_hetero_equals_homo(seed in any::<u64>(), turns in 1usize..5) {
        let corpus = synth(1, turns, seed);
        let d = &corpus[0];
        let hetero = model_for(&corpus, small_config());
        let mut homo_cfg = small_config();
        homo_cfg.gnn_mode = GnnMode::Homo;
        let mut homo = model_for(&corpus, homo_cfg);
        let mut tied = hetero.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in 0..hetero.config.gnn_layers {
            let mut w = Tensor::zeros(8, 8);
            randomize(&mut w, &mut rng);
            let mut b = Tensor::zeros(1, 8);
            randomize(&mut b, &mut rng);
            for t in NodeType::ALL {
                tied.params.set(&hgnn_weight(layer, Some(t)), w.clone()).unwrap();
                tied.params.set(&hgnn_bias(layer, Some(t)), b.clone()).unwrap();
            }
            homo.params.set(&hgnn_weight(layer, None), w).unwrap();
            homo.params.set(&hgnn_bias(layer, None), b).unwrap();
        }
        for (name, value) in tied.params.iter() {
            if homo.params.contains(name) && !name.starts_with("enc.hgnn") {
                homo.params.set(name, value.clone()).unwrap();
            }
        }
        let g = tied.build_graph(d).unwrap();
        let (a, _) = run_hgnn(&tied, d, &g, None, GnnMode::Hetero);
        let (b, _) = run_hgnn(&homo, d, &g, None, GnnMode::Homo);
        prop_assert!(a.max_abs_diff(&b) <= 1e-12, "diff {}", a.max_abs_diff(&b));
    }

    #[test]
    fn node_permutation_is_equivariant(seed in any::<u64>(), turns in 1usize..5) {
        let corpus = synth(1, turns, seed);
        let d = &corpus[0];
        let model = model_for(&corpus, small_config());
        let g = model.build_graph(d).unwrap();
        let mut perm: Vec<usize> = (0..g.node_count()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (h, p) = run_hgnn(&model, d, &g, None, GnnMode::Hetero);
        let (hp, pp) = run_hgnn(&model, d, &g.permuted(&perm).unwrap(), Some(&perm), GnnMode::Hetero);
        for (new, &old) in perm.iter().enumerate() {
            for c in 0..h.cols() {
                prop_assert!((hp.get(new, c) - h.get(old, c)).abs() < 1e-12);
            }
        }
        prop_assert!(p.max_abs_diff(&pp) < 1e-12);
    }

    #[test]
    fn emotion_distribution_is_positive_and_normalized(seed in any::<u64>(), turns in 1usize..6) {
        let corpus = synth(1, turns, seed);
        let model = model_for(&corpus, small_config());
        let p = model.predict_distribution(&corpus[0]).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn every_encoder_parameter_gets_gradient() {
    let corpus = synth(1, 3, 11);
    let model = model_for(&corpus, small_config());
    let step = model.step(&corpus[0], None).unwrap();
    for (name, g) in &step.grads {
        if name.starts_with("enc.") || name.starts_with("emb") {
            assert!(g.values().iter().any(|&v| v != 0.0), "{name} has no gradient");
        }
    }
}

#[test]
fn zero_predictor_gives_uniform_distribution() {
    let corpus = synth(1, 2, 3);
    let mut model = model_for(&corpus, small_config());
    model.params.set(encoder::PREDICTOR, Tensor::zeros(7, 8)).unwrap();
    let p = model.predict_distribution(&corpus[0]).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 7.0).abs() < 1e-15));
}

#[test]
fn meanpool_of_identical_rows_is_that_row() {
    let mut tape = Tape::new();
    let row = [0.3, -1.2, 4.0];
    let x = tape.constant(Tensor::from_rows(&[&row, &row, &row]));
    let m = tape.mean_rows(x).unwrap();
    for (a, b) in tape.value(m).values().iter().zip(row) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn single_utterance_attention_is_its_own_value() {
    let corpus = synth(1, 1, 5);
    let model = model_for(&corpus, small_config());
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut h = Tensor::zeros(1, 16);
    randomize(&mut h, &mut rng);
    let hv = ctx.constant(h.clone());
    let x = contextualize(&mut ctx, hv).unwrap();
    let wv = model.params.get("enc.context.wv").unwrap();
    let wo = model.params.get("enc.context.wo").unwrap();
    let expected = h.matmul(wv).unwrap().matmul(wo).unwrap();
    assert!(tape.value(x).max_abs_diff(&expected) < 1e-14);
}

#[test]
fn swapping_history_changes_positions() {
    let corpus = synth(1, 3, 8);
    let model = model_for(&corpus, small_config());
    let mut swapped = corpus[0].clone();
    swapped.utterances.swap(0, 2);
    let xu = |d: &DialogueRecord| {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
        let x = encoder::encode_utterances(&mut ctx, d, &model.vocab).unwrap();
        tape.value(x).clone()
    };
    let a = xu(&corpus[0]);
    let b = xu(&swapped);
    let row0_same = (0..a.cols()).all(|c| (a.get(0, c) - b.get(2, c)).abs() < 1e-12);
    assert!(!row0_same);
}

#[test]
fn two_by_two_attention_by_hand() {
    let mut cfg = small_config();
    cfg.d_hidden = 1;
    cfg.d_position = 1;
    cfg.d_model = 2;
    cfg.heads = 1;
    let corpus = synth(1, 1, 0);
    let mut model = model_for(&corpus, cfg);
    for leaf in ["wq", "wk", "wv", "wo"] {
        model.params.set(&format!("enc.context.{leaf}"), Tensor::identity(2)).unwrap();
    }
    let h = Tensor::from_rows(&[&[1.0, 0.0], &[0.5, 2.0]]);
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let hv = ctx.constant(h);
    let x = contextualize(&mut ctx, hv).unwrap();
    let s = 1.0 / 2f64.sqrt();
    // Row 0 scores: [1, 0.5] * s; row 1: [0.5, 4.25] * s.
    let w = |a: f64, b: f64| {
        let (ea, eb) = ((a * s).exp(), (b * s).exp());
        (ea / (ea + eb), eb / (ea + eb))
    };
    let (p00, p01) = w(1.0, 0.5);
    let (p10, p11) = w(0.5, 4.25);
    let expected = [
        p00 * 1.0 + p01 * 0.5,
        p01 * 2.0,
        p10 * 1.0 + p11 * 0.5,
        p11 * 2.0,
    ];
    for (a, b) in tape.value(x).values().iter().zip(expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn modality_projection_shapes_and_zero_map() {
    let corpus = synth(1, 3, 2);
    let mut model = model_for(&corpus, small_config());
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let y = project_modality(&mut ctx, corpus[0].faces.as_ref().unwrap(), Modality::Face).unwrap();
    assert_eq!(tape.value(y).shape(), (3, 8));

    for b in ["enc.ffn_audio.b1", "enc.ffn_audio.b2"] {
        model.params.set(b, Tensor::zeros(1, 8)).unwrap();
    }
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let y = project_modality(&mut ctx, &[vec![0.0; 8], vec![0.0; 8]], Modality::Audio).unwrap();
    assert!(tape.value(y).values().iter().all(|&v| v == 0.0));

    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    assert!(project_modality(&mut ctx, &[vec![0.0; 5]], Modality::Audio).is_err());
}

#[test]
fn feed_forward_by_hand() {
    let mut cfg = small_config();
    cfg.d_model = 3;
    cfg.heads = 1;
    let corpus = synth(1, 1, 0);
    let mut model = model_for(&corpus, cfg);
    model.params.set("enc.ffn_out.w1", Tensor::identity(3)).unwrap();
    model.params.set("enc.ffn_out.b1", Tensor::row(&[0.0, -1.0, 0.5])).unwrap();
    model.params.set("enc.ffn_out.w2", Tensor::identity(3)).unwrap();
    model.params.set("enc.ffn_out.b2", Tensor::row(&[1.0, 1.0, 1.0])).unwrap();
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let x = ctx.constant(Tensor::from_rows(&[&[1.0, 2.0, -3.0], &[-1.0, 0.5, 0.0]]));
    let y = feed_forward(&mut ctx, "enc.ffn_out", x).unwrap();
    // relu(x + b1) + b2
    let expected = [2.0, 2.0, 1.0, 1.0, 1.0, 1.5];
    assert_eq!(tape.value(y).values(), expected);
}

#[test]
fn emotion_and_speaker_tables() {
    let mut corpus = synth(1, 3, 4);
    corpus[0].emotions = vec![Emotion::Joy, Emotion::Sadness, Emotion::Joy];
    let model = model_for(&corpus, small_config());
    assert_eq!(model.params.get(encoder::EMOTION_TABLE).unwrap().rows(), 7);
    assert_eq!(model.params.get(encoder::SPEAKER_TABLE).unwrap().rows(), 13);
    let g = model.build_graph(&corpus[0]).unwrap();
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let (e, _) = lookup_node_embeddings(&mut ctx, &corpus[0], &g, &model.speakers).unwrap();
    let e = tape.value(e.unwrap()).clone();
    assert_eq!(e.row_slice(0), e.row_slice(2));
    assert_ne!(e.row_slice(0), e.row_slice(1));

    assert_eq!(model.speakers.id("nobody-we-know"), UNK_SPEAKER);
    let mut stranger = corpus[0].clone();
    stranger.speakers = vec!["x1".into(), "x2".into(), "x1".into()];
    let g = model.build_graph(&stranger).unwrap();
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let (_, s) = lookup_node_embeddings(&mut ctx, &stranger, &g, &model.speakers).unwrap();
    let unk = model.params.get(encoder::SPEAKER_TABLE).unwrap().row_slice(UNK_SPEAKER).to_vec();
    let s = tape.value(s.unwrap()).clone();
    assert_eq!(s.rows(), 2);
    assert!((0..2).all(|r| s.row_slice(r) == unk.as_slice()));
}

#[test]
fn zero_graph_weights_give_output_ffn_of_zero() {
    let corpus = synth(1, 2, 9);
    let mut model = model_for(&corpus, small_config());
    let names: Vec<String> = model.params.names().filter(|n| n.starts_with("enc.hgnn")).map(String::from).collect();
    for n in names {
        let (r, c) = model.params.get(&n).unwrap().shape();
        model.params.set(&n, Tensor::zeros(r, c)).unwrap();
    }
    let g = model.build_graph(&corpus[0]).unwrap();
    let (h, _) = run_hgnn(&model, &corpus[0], &g, None, GnnMode::Hetero);
    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let zero = ctx.constant(Tensor::zeros(1, 8));
    let f = feed_forward(&mut ctx, encoder::OUT_FFN, zero).unwrap();
    let f = tape.value(f).clone();
    for r in 0..h.rows() {
        assert_eq!(h.row_slice(r), f.row_slice(0));
    }
}

#[test]
fn two_node_graph_by_hand() {
    // One utterance and its emotion node only: 2 nodes, one edge, self-loops on.
    let mut cfg = small_config();
    cfg.d_model = 2;
    cfg.heads = 1;
    cfg.gnn_layers = 1;
    cfg.ablate = NodeTypeSet::of(&[NodeType::Face, NodeType::Audio, NodeType::Speaker]);
    let corpus = synth(1, 1, 0);
    let mut model = model_for(&corpus, cfg);
    let wu = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]);
    let we = Tensor::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]);
    let bu = Tensor::row(&[0.1, 0.0]);
    let be = Tensor::row(&[0.0, -0.2]);
    model.params.set(&hgnn_weight(0, Some(NodeType::Utterance)), wu).unwrap();
    model.params.set(&hgnn_weight(0, Some(NodeType::Emotion)), we).unwrap();
    model.params.set(&hgnn_bias(0, Some(NodeType::Utterance)), bu).unwrap();
    model.params.set(&hgnn_bias(0, Some(NodeType::Emotion)), be).unwrap();
    model.params.set("enc.ffn_out.w1", Tensor::identity(2)).unwrap();
    model.params.set("enc.ffn_out.w2", Tensor::identity(2)).unwrap();
    let g = HeteroGraph::build(&corpus[0], model.graph_options()).unwrap();
    assert_eq!(g.node_count(), 2);

    let mut tape = Tape::new();
    let mut ctx = Ctx::eval(&mut tape, &model.params, &model.config);
    let h0 = ctx.constant(Tensor::from_rows(&[&[1.0, 2.0], &[3.0, -1.0]]));
    let h = hgnn_forward(&mut ctx, &g, h0, GnnMode::Hetero).unwrap();
    // A_u keeps column 0, A_e keeps column 1; every entry of A is 1.
    // A_u H W_u = [[1, 4], [1, 4]]; A_e H W_e = [[1, 3], [1, 3]].
    // Row 0 (utterance) + b_u = [2.1, 7]; row 1 (emotion) + b_e = [2, 6.8].
    // The output layer is relu(relu(x) + 0) + 0 with identity weights.
    let expected = [2.1, 7.0, 2.0, 6.8];
    for (a, b) in tape.value(h).values().iter().zip(expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn text_only_corpus_encodes() {
    let mut corpus = synth(2, 2, 1);
    for d in &mut corpus {
        d.faces = None;
        d.audios = None;
    }
    let model = model_for(&corpus, small_config());
    let g = model.build_graph(&corpus[0]).unwrap();
    assert_eq!(g.count_of(NodeType::Face), 0);
    model.predict_emotion(&corpus[0]).unwrap();
    let roster = SpeakerRoster::from_names(vec![], 13).unwrap();
    assert_eq!(roster.id("anyone"), UNK_SPEAKER);
}
