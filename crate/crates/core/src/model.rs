//! The full model: parameter layout, the joint objective, and generation.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{GnnMode, TrainConfig};
use crate::corpus::{DialogueRecord, SpeakerRoster, Vocab, EOS, UNK};
use crate::decoder::{self, decode_step, emotion_mix, sequence_nll};
use crate::emotion::{Emotion, EMOTION_COUNT};
use crate::encoder::{self, hgnn_bias, hgnn_weight, hgnn_forward, initial_features, predict_emotion};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_only, GradCheckReport};
use crate::graph::{GraphOptions, HeteroGraph, NodeType};
use crate::nn::{name, Ctx};
use crate::params::{xavier_with, ParamStore};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Xavier,
    Zeros,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

fn spec(name: impl Into<String>, rows: usize, cols: usize, init: Init) -> ParamSpec {
    ParamSpec {
        name: name.into(),
        rows,
        cols,
        init,
    }
}

fn ffn_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, width: usize) {
    let [w1, b1, w2, b2] = encoder::ffn_names(prefix);
    out.push(spec(w1, input, width, Init::Xavier));
    out.push(spec(b1, 1, width, Init::Zeros));
    out.push(spec(w2, width, width, Init::Xavier));
    out.push(spec(b2, 1, width, Init::Zeros));
}

fn attention_specs(out: &mut Vec<ParamSpec>, prefix: &str, input: usize, d: usize) {
    for leaf in ["wq", "wk", "wv"] {
        out.push(spec(name(prefix, leaf), input, d, Init::Xavier));
    }
    out.push(spec(name(prefix, "wo"), d, d, Init::Xavier));
}

/// Every trainable tensor for a configuration and vocabulary size, in
/// initialization order.
pub fn param_layout(cfg: &TrainConfig, vocab_size: usize) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let dh = cfg.d_hidden;
    let mut out = vec![
        spec(encoder::WORD_EMB, vocab_size, cfg.d_word, Init::Xavier),
        spec(encoder::LSTM_W, cfg.d_word + dh, 4 * dh, Init::Xavier),
        spec(encoder::LSTM_B, 1, 4 * dh, Init::Zeros),
        spec(encoder::POSITION, cfg.max_turns, cfg.d_position, Init::Xavier),
    ];
    attention_specs(&mut out, encoder::CONTEXT_ATTN, dh + cfg.d_position, d);
    if cfg.utterance_residual {
        out.push(spec(encoder::CONTEXT_RESIDUAL, dh + cfg.d_position, d, Init::Xavier));
    }
    ffn_specs(&mut out, encoder::FACE_FFN, cfg.face_dim, d);
    ffn_specs(&mut out, encoder::AUDIO_FFN, cfg.audio_dim, d);
    out.push(spec(encoder::EMOTION_TABLE, EMOTION_COUNT, d, Init::Xavier));
    out.push(spec(encoder::SPEAKER_TABLE, cfg.speaker_slots, d, Init::Xavier));
    for layer in 0..cfg.gnn_layers {
        match cfg.gnn_mode {
            GnnMode::Hetero => {
                for t in NodeType::ALL {
                    out.push(spec(hgnn_weight(layer, Some(t)), d, d, Init::Xavier));
                    out.push(spec(hgnn_bias(layer, Some(t)), 1, d, Init::Zeros));
                }
            }
            GnnMode::Homo => {
                out.push(spec(hgnn_weight(layer, None), d, d, Init::Xavier));
                out.push(spec(hgnn_bias(layer, None), 1, d, Init::Zeros));
            }
        }
    }
    ffn_specs(&mut out, encoder::OUT_FFN, d, d);
    out.push(spec(encoder::PREDICTOR, EMOTION_COUNT, d, Init::Xavier));

    out.push(spec(decoder::TOKEN_EMB, vocab_size, d, Init::Xavier));
    out.push(spec(decoder::POSITION, cfg.max_response_len + 1, d, Init::Xavier));
    attention_specs(&mut out, decoder::SELF_ATTN, d, d);
    attention_specs(&mut out, decoder::CROSS_ATTN, d, d);
    ffn_specs(&mut out, decoder::FFN, d, d);
    out.push(spec(decoder::GATE_W, 3 * d, d, Init::Xavier));
    out.push(spec(decoder::GATE_B, 1, d, Init::Zeros));
    out.push(spec(decoder::OUTPUT, vocab_size, d, Init::Xavier));
    out
}

/// Encoder outputs for one dialogue.
pub struct Encoded {
    pub graph: HeteroGraph,
    pub h_enc: Var,
    /// Predicted `1 x 7` emotion distribution.
    pub distribution: Var,
}

/// Handles to the parts of the joint objective.
pub struct JointLoss {
    pub total: Var,
    pub generation: Var,
    pub classification: Option<Var>,
    pub distribution: Var,
    pub emotion_mix: Var,
    pub speaker: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub generation: f64,
    pub classification: f64,
    /// Tokens scored by the generation loss, EOS included.
    pub tokens: usize,
}

/// Loss values and gradients of one dialogue.
#[derive(Clone, Debug)]
pub struct DialogueStep {
    pub values: LossValues,
    pub grads: Gradients,
    pub predicted: Emotion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generation {
    /// Generated tokens without BOS and EOS.
    pub tokens: Vec<usize>,
    /// True when the length cap was hit before EOS.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub speakers: SpeakerRoster,
    pub params: ParamStore,
}

fn one_hot(e: Emotion) -> Tensor {
    let mut t = Tensor::zeros(1, EMOTION_COUNT);
    t.set(0, e.index(), 1.0);
    t
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Model {
    /// Fresh Xavier-initialized parameters, seeded by `config.seed`.
    pub fn new(config: TrainConfig, vocab: Vocab, speakers: SpeakerRoster) -> Result<Self> {
        config.validate()?;
        if speakers.capacity() != config.speaker_slots {
            return Err(Error::Config(alloc::format!(
                "speaker roster has {} slots, configuration expects {}",
                speakers.capacity(),
                config.speaker_slots
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        for p in param_layout(&config, vocab.len()) {
            let value = match p.init {
                Init::Xavier => xavier_with(p.rows, p.cols, &mut rng),
                Init::Zeros => Tensor::zeros(p.rows, p.cols),
            };
            params.insert(p.name, value)?;
        }
        Ok(Model {
            config,
            vocab,
            speakers,
            params,
        })
    }

    /// Builds the vocabulary and speaker roster from `corpus`, then initializes.
    pub fn from_corpus(corpus: &[DialogueRecord], config: TrainConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Contract("cannot build a vocabulary from an empty corpus".into()));
        }
        let vocab = Vocab::build(corpus, config.min_token_count);
        let speakers = SpeakerRoster::build(corpus, config.speaker_slots, config.min_speaker_count)?;
        Self::new(config, vocab, speakers)
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            self_loops: self.config.self_loops,
            exclude: self.config.ablate,
        }
    }

    pub fn build_graph(&self, dialogue: &DialogueRecord) -> Result<HeteroGraph> {
        HeteroGraph::build(dialogue, self.graph_options())
    }

    pub fn encode(&self, ctx: &mut Ctx<'_>, dialogue: &DialogueRecord) -> Result<Encoded> {
        let graph = self.build_graph(dialogue)?;
        let h0 = initial_features(ctx, dialogue, &graph, &self.vocab, &self.speakers)?;
        let h_enc = hgnn_forward(ctx, &graph, h0, self.config.gnn_mode)?;
        let distribution = predict_emotion(ctx, h_enc)?;
        Ok(Encoded {
            graph,
            h_enc,
            distribution,
        })
    }

    /// `(E_p, S_p)`. In golden-emotion mode the mixture weights are the
    /// one-hot gold label; with `detach_p_for_decoder` they are a constant
    /// copy of the prediction.
    pub fn emotion_context(
        &self,
        ctx: &mut Ctx<'_>,
        distribution: Var,
        dialogue: &DialogueRecord,
    ) -> Result<(Var, Var)> {
        let weights = if self.config.golden_emotion {
            let gold = dialogue.response_emotion.ok_or_else(|| {
                Error::malformed("response_emotion", "golden-emotion mode needs the gold label")
            })?;
            ctx.constant(one_hot(gold))
        } else if self.config.detach_p_for_decoder {
            ctx.tape.detach(distribution)
        } else {
            distribution
        };
        let emb1 = ctx.p(encoder::EMOTION_TABLE)?;
        let e_p = emotion_mix(ctx.tape, weights, emb1)?;
        let emb2 = ctx.p(encoder::SPEAKER_TABLE)?;
        let s_p = ctx
            .tape
            .row_lookup(emb2, vec![self.speakers.id(&dialogue.next_speaker)])?;
        Ok((e_p, s_p))
    }

    pub fn response_tokens(&self, dialogue: &DialogueRecord) -> Vec<usize> {
        let ids = self.vocab.encode(&dialogue.response);
        if ids.contains(&UNK) {
            log::debug!("response contains out-of-vocabulary tokens, scored as UNK");
        }
        ids
    }

    /// `(1 - lambda) * L_gen + lambda * L_cls` recorded on `ctx.tape`.
    pub fn joint_loss(&self, ctx: &mut Ctx<'_>, dialogue: &DialogueRecord) -> Result<JointLoss> {
        let lambda = self.config.lambda;
        let enc = self.encode(ctx, dialogue)?;
        let (e_p, s_p) = self.emotion_context(ctx, enc.distribution, dialogue)?;
        let response = self.response_tokens(dialogue);
        let generation = sequence_nll(ctx, &response, enc.h_enc, e_p, s_p)?;
        let classification = match dialogue.response_emotion {
            Some(gold) => {
                let logp = ctx.tape.log(enc.distribution)?;
                Some(ctx.tape.neg_pick(logp, vec![gold.index()])?)
            }
            None if lambda > 0.0 => {
                return Err(Error::malformed(
                    "response_emotion",
                    "classification loss needs the gold response emotion",
                ))
            }
            None => None,
        };
        let scaled_gen = ctx.tape.scale(generation, 1.0 - lambda)?;
        let total = match classification {
            Some(cls) => {
                let scaled_cls = ctx.tape.scale(cls, lambda)?;
                ctx.tape.add(scaled_gen, scaled_cls)?
            }
            None => scaled_gen,
        };
        Ok(JointLoss {
            total,
            generation,
            classification,
            distribution: enc.distribution,
            emotion_mix: e_p,
            speaker: s_p,
        })
    }

    /// Central-difference check of the joint objective's gradient over every
    /// named parameter (or only those listed).
    pub fn gradient_check(
        &self,
        dialogue: &DialogueRecord,
        eps: f64,
        only: Option<&[&str]>,
    ) -> Result<GradCheckReport> {
        let f = |tape: &mut Tape, params: &ParamStore| {
            let mut ctx = Ctx::eval(tape, params, &self.config);
            Ok(self.joint_loss(&mut ctx, dialogue)?.total)
        };
        grad_check_only(f, &self.params, eps, only)
    }

    /// Forward and backward for one dialogue. Dropout is applied when a seed is given.
    pub fn step(&self, dialogue: &DialogueRecord, dropout_seed: Option<u64>) -> Result<DialogueStep> {
        let mut tape = Tape::new();
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let mut ctx = match rng.as_mut() {
            Some(r) if self.config.dropout > 0.0 => Ctx::train(&mut tape, &self.params, &self.config, r),
            _ => Ctx::eval(&mut tape, &self.params, &self.config),
        };
        let loss = self.joint_loss(&mut ctx, dialogue)?;
        let values = LossValues {
            total: tape.value(loss.total).item(),
            generation: tape.value(loss.generation).item(),
            classification: loss.classification.map_or(0.0, |c| tape.value(c).item()),
            tokens: self.response_tokens(dialogue).len().min(self.config.max_response_len) + 1,
        };
        if !values.total.is_finite() {
            return Err(Error::Numerical {
                param: String::from("loss"),
                detail: alloc::format!("joint loss is {}", values.total),
            });
        }
        let predicted = Emotion::from_index(argmax(tape.value(loss.distribution).values()))
            .expect("seven classes");
        let grads = tape.backward(loss.total)?;
        Ok(DialogueStep {
            values,
            grads,
            predicted,
        })
    }

    /// Loss values without dropout or gradients.
    pub fn losses(&self, dialogue: &DialogueRecord) -> Result<LossValues> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.params, &self.config);
        let loss = self.joint_loss(&mut ctx, dialogue)?;
        Ok(LossValues {
            total: tape.value(loss.total).item(),
            generation: tape.value(loss.generation).item(),
            classification: loss.classification.map_or(0.0, |c| tape.value(c).item()),
            tokens: self.response_tokens(dialogue).len().min(self.config.max_response_len) + 1,
        })
    }

    /// The predicted response-emotion distribution.
    pub fn predict_distribution(&self, dialogue: &DialogueRecord) -> Result<[f64; EMOTION_COUNT]> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.params, &self.config);
        let enc = self.encode(&mut ctx, dialogue)?;
        let mut out = [0.0; EMOTION_COUNT];
        out.copy_from_slice(tape.value(enc.distribution).values());
        Ok(out)
    }

    pub fn predict_emotion(&self, dialogue: &DialogueRecord) -> Result<Emotion> {
        let p = self.predict_distribution(dialogue)?;
        Ok(Emotion::from_index(argmax(&p)).expect("seven classes"))
    }

    /// Encoder output and decoder conditioning as plain values.
    pub fn conditioning(&self, dialogue: &DialogueRecord) -> Result<Conditioning> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.params, &self.config);
        let enc = self.encode(&mut ctx, dialogue)?;
        let (e_p, s_p) = self.emotion_context(&mut ctx, enc.distribution, dialogue)?;
        Ok(Conditioning {
            h_enc: tape.value(enc.h_enc).clone(),
            distribution: tape.value(enc.distribution).clone(),
            emotion_mix: tape.value(e_p).clone(),
            speaker: tape.value(s_p).clone(),
        })
    }

    /// Next-token distribution after `prefix` (which starts with BOS).
    pub fn next_token_distribution(&self, cond: &Conditioning, prefix: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.params, &self.config);
        let (h, e, s) = cond.bind(&mut ctx);
        decode_step(&mut ctx, prefix, h, e, s)
    }

    /// Teacher-forced step distributions for every position of `inputs`.
    pub fn step_distributions(&self, cond: &Conditioning, inputs: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::eval(&mut tape, &self.params, &self.config);
        let (h, e, s) = cond.bind(&mut ctx);
        let probs = decoder::step_distributions(&mut ctx, inputs, h, e, s)?;
        Ok(tape.value(probs).clone())
    }

    /// Generates a response for the dialogue's `next_speaker`.
    pub fn generate(&self, dialogue: &DialogueRecord, decoding: Decoding) -> Result<Generation> {
        let cond = self.conditioning(dialogue)?;
        let out = match decoding {
            Decoding::Greedy => self.greedy(&cond)?,
            Decoding::Beam(k) => self.beam(&cond, k.max(1))?,
        };
        if out.truncated {
            log::warn!(
                "generation reached the {}-token cap without EOS",
                self.config.max_response_len
            );
        }
        Ok(out)
    }

    fn greedy(&self, cond: &Conditioning) -> Result<Generation> {
        let mut prefix = vec![crate::corpus::BOS];
        loop {
            let dist = self.next_token_distribution(cond, &prefix)?;
            let next = argmax(dist.values());
            if next == EOS || prefix.len() > self.config.max_response_len {
                return Ok(Generation {
                    tokens: prefix[1..].to_vec(),
                    truncated: next != EOS,
                });
            }
            prefix.push(next);
        }
    }

    /// Beam search over cumulative log-probability; finished hypotheses
    /// are ranked by log-probability per generated token (EOS included).
    fn beam(&self, cond: &Conditioning, width: usize) -> Result<Generation> {
        let mut live: Vec<(Vec<usize>, f64)> = vec![(vec![crate::corpus::BOS], 0.0)];
        let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut capped: Vec<Vec<usize>> = Vec::new();
        while !live.is_empty() && finished.len() < width {
            let mut candidates: Vec<(Vec<usize>, f64, bool)> = Vec::new();
            for (prefix, score) in &live {
                let dist = self.next_token_distribution(cond, prefix)?;
                let mut order: Vec<usize> = (0..dist.len()).collect();
                // Stable sort keeps the lowest id first among ties, as argmax does.
                order.sort_by(|&a, &b| dist.values()[b].total_cmp(&dist.values()[a]));
                for &tok in order.iter().take(width) {
                    let s = score + libm::log(dist.values()[tok]);
                    let mut next = prefix.clone();
                    next.push(tok);
                    candidates.push((next, s, tok == EOS));
                }
            }
            candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
            live.clear();
            for (mut seq, s, done) in candidates.into_iter().take(width) {
                if done {
                    finished.push((seq, s));
                } else if seq.len() > self.config.max_response_len + 1 {
                    seq.pop();
                    capped.push(seq);
                } else {
                    live.push((seq, s));
                }
            }
        }
        let normalized = |seq: &Vec<usize>, s: f64| s / (seq.len() - 1) as f64;
        let best = finished
            .iter()
            .max_by(|a, b| normalized(&a.0, a.1).total_cmp(&normalized(&b.0, b.1)));
        Ok(match best {
            Some((seq, _)) => Generation {
                tokens: seq[1..seq.len() - 1].to_vec(),
                truncated: false,
            },
            None => Generation {
                tokens: capped.first().map_or_else(Vec::new, |s| s[1..].to_vec()),
                truncated: true,
            },
        })
    }
}

/// Values the decoder conditions on, computed once per dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub h_enc: Tensor,
    pub distribution: Tensor,
    pub emotion_mix: Tensor,
    pub speaker: Tensor,
}

impl Conditioning {
    fn bind(&self, ctx: &mut Ctx<'_>) -> (Var, Var, Var) {
        (
            ctx.constant(self.h_enc.clone()),
            ctx.constant(self.emotion_mix.clone()),
            ctx.constant(self.speaker.clone()),
        )
    }
}
