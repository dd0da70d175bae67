//! Heterogeneous graph encoder: node initialization, stacked type-aware
//! graph convolutions, and the response-emotion predictor.

use alloc::vec::Vec;

use crate::config::{Activation, GnnMode};
use crate::corpus::{DialogueRecord, SpeakerRoster, Vocab, PAD};
use crate::error::{Error, Result};
use crate::graph::{HeteroGraph, NodeType};
use crate::nn::{feed_forward, multi_head, name, Ctx};
use crate::tape::Var;
use crate::tensor::Tensor;

pub const WORD_EMB: &str = "enc.word_emb";
pub const LSTM_W: &str = "enc.lstm.w";
pub const LSTM_B: &str = "enc.lstm.b";
pub const POSITION: &str = "enc.position";
pub const CONTEXT_ATTN: &str = "enc.context";
pub const CONTEXT_RESIDUAL: &str = "enc.context.residual";
pub const FACE_FFN: &str = "enc.ffn_face";
pub const AUDIO_FFN: &str = "enc.ffn_audio";
pub const OUT_FFN: &str = "enc.ffn_out";
pub const PREDICTOR: &str = "enc.w_p";
/// Emotion table, shared with the decoder's emotion mixture.
pub const EMOTION_TABLE: &str = "emb1";
/// Speaker table, shared with the decoder's personality vector.
pub const SPEAKER_TABLE: &str = "emb2";

pub fn hgnn_weight(layer: usize, t: Option<NodeType>) -> alloc::string::String {
    match t {
        Some(t) => alloc::format!("enc.hgnn.{layer}.{}.w", t.symbol()),
        None => alloc::format!("enc.hgnn.{layer}.w"),
    }
}

pub fn hgnn_bias(layer: usize, t: Option<NodeType>) -> alloc::string::String {
    match t {
        Some(t) => alloc::format!("enc.hgnn.{layer}.{}.b", t.symbol()),
        None => alloc::format!("enc.hgnn.{layer}.b"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Face,
    Audio,
}

/// Token ids of one history utterance: unknown words map to UNK, an empty
/// utterance becomes a single PAD token, and anything past `max_len` is cut.
pub fn utterance_tokens(vocab: &Vocab, text: &str, max_len: usize) -> Vec<usize> {
    let mut ids = vocab.encode(text);
    if ids.is_empty() {
        ids.push(PAD);
    }
    if ids.len() > max_len {
        log::warn!(
            "utterance of {} tokens truncated to {max_len}",
            ids.len()
        );
        ids.truncate(max_len);
    }
    ids
}

/// Final hidden state of a four-gate LSTM over `tokens`, as a `1 x d_hidden` row.
pub fn lstm_last_hidden(ctx: &mut Ctx<'_>, tokens: &[usize]) -> Result<Var> {
    let dh = ctx.cfg.d_hidden;
    let emb = ctx.p(WORD_EMB)?;
    let w = ctx.p(LSTM_W)?;
    let b = ctx.p(LSTM_B)?;
    let mut h = ctx.constant(Tensor::zeros(1, dh));
    let mut c = ctx.constant(Tensor::zeros(1, dh));
    for &tok in tokens {
        let x = ctx.tape.row_lookup(emb, alloc::vec![tok])?;
        let xh = ctx.tape.concat_cols(&[x, h])?;
        let z = ctx.tape.affine(xh, w, b)?;
        let i = ctx.tape.slice_cols(z, 0, dh)?;
        let f = ctx.tape.slice_cols(z, dh, dh)?;
        let g = ctx.tape.slice_cols(z, 2 * dh, dh)?;
        let o = ctx.tape.slice_cols(z, 3 * dh, dh)?;
        let i = ctx.tape.sigmoid(i)?;
        let f = ctx.tape.sigmoid(f)?;
        let g = ctx.tape.tanh(g)?;
        let o = ctx.tape.sigmoid(o)?;
        let keep = ctx.tape.elem_mul(f, c)?;
        let write = ctx.tape.elem_mul(i, g)?;
        c = ctx.tape.add(keep, write)?;
        let squashed = ctx.tape.tanh(c)?;
        h = ctx.tape.elem_mul(o, squashed)?;
    }
    Ok(h)
}

/// Position rows for `n` utterances: the latest utterance gets position 1,
/// the first gets position `n`. Returned as zero-based table rows.
pub fn position_rows(n: usize) -> Vec<usize> {
    (0..n).map(|i| n - 1 - i).collect()
}

/// `X_u`: LSTM summaries of every utterance, each concatenated with its
/// position embedding and contextualized by multi-head self-attention.
pub fn encode_utterances(ctx: &mut Ctx<'_>, dialogue: &DialogueRecord, vocab: &Vocab) -> Result<Var> {
    let n = dialogue.utterances.len();
    if n > ctx.cfg.max_turns {
        return Err(Error::malformed(
            "utterances",
            alloc::format!("{n} turns exceed the maximum of {}", ctx.cfg.max_turns),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for text in &dialogue.utterances {
        let tokens = utterance_tokens(vocab, text, ctx.cfg.max_utterance_len);
        rows.push(lstm_last_hidden(ctx, &tokens)?);
    }
    let hidden = ctx.tape.concat_rows(&rows)?;
    let table = ctx.p(POSITION)?;
    let pe = ctx.tape.row_lookup(table, position_rows(n))?;
    let h_u = ctx.tape.concat_cols(&[hidden, pe])?;
    contextualize(ctx, h_u)
}

/// Self-attention over the stacked `[h; PE]` rows, optionally with a
/// projected skip connection and layer norm.
pub fn contextualize(ctx: &mut Ctx<'_>, h_u: Var) -> Result<Var> {
    let attended = multi_head(ctx, CONTEXT_ATTN, h_u, h_u, false)?;
    if !ctx.cfg.utterance_residual {
        return Ok(attended);
    }
    let w = ctx.p(CONTEXT_RESIDUAL)?;
    let skip = ctx.tape.matmul(h_u, w)?;
    let sum = ctx.tape.add(attended, skip)?;
    ctx.tape.layer_norm_rows(sum)
}

/// Projects raw per-utterance modality vectors into the node space.
pub fn project_modality(ctx: &mut Ctx<'_>, vectors: &[Vec<f64>], which: Modality) -> Result<Var> {
    let (expected, prefix, label) = match which {
        Modality::Face => (ctx.cfg.face_dim, FACE_FFN, "face"),
        Modality::Audio => (ctx.cfg.audio_dim, AUDIO_FFN, "audio"),
    };
    if vectors.is_empty() {
        return Err(Error::Contract(alloc::format!("no {label} vectors")));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != expected) {
        return Err(Error::Config(alloc::format!(
            "{label} vectors have width {}, expected {expected}",
            v.len()
        )));
    }
    let data: Vec<f64> = vectors.iter().flatten().copied().collect();
    let raw = ctx.constant(Tensor::new(vectors.len(), expected, data)?);
    feed_forward(ctx, prefix, raw)
}

/// `(X_e, X_s)`: emotion rows per utterance and one row per graph speaker
/// node. Either is `None` when the graph has no nodes of that type.
pub fn lookup_node_embeddings(
    ctx: &mut Ctx<'_>,
    dialogue: &DialogueRecord,
    graph: &HeteroGraph,
    roster: &SpeakerRoster,
) -> Result<(Option<Var>, Option<Var>)> {
    let emotions = if graph.count_of(NodeType::Emotion) > 0 {
        let table = ctx.p(EMOTION_TABLE)?;
        let idx = dialogue.emotions.iter().map(|e| e.index()).collect();
        Some(ctx.tape.row_lookup(table, idx)?)
    } else {
        None
    };
    let speakers = if graph.count_of(NodeType::Speaker) > 0 {
        let table = ctx.p(SPEAKER_TABLE)?;
        let idx = graph.speakers().iter().map(|s| roster.id(s)).collect();
        Some(ctx.tape.row_lookup(table, idx)?)
    } else {
        None
    };
    Ok((emotions, speakers))
}

/// Stacks the initial node features in graph order.
pub fn initial_features(
    ctx: &mut Ctx<'_>,
    dialogue: &DialogueRecord,
    graph: &HeteroGraph,
    vocab: &Vocab,
    roster: &SpeakerRoster,
) -> Result<Var> {
    let mut blocks = alloc::vec![encode_utterances(ctx, dialogue, vocab)?];
    if graph.count_of(NodeType::Face) > 0 {
        let faces = dialogue.faces.as_deref().unwrap_or_default();
        blocks.push(project_modality(ctx, faces, Modality::Face)?);
    }
    if graph.count_of(NodeType::Audio) > 0 {
        let audios = dialogue.audios.as_deref().unwrap_or_default();
        blocks.push(project_modality(ctx, audios, Modality::Audio)?);
    }
    let (e, s) = lookup_node_embeddings(ctx, dialogue, graph, roster)?;
    blocks.extend(e);
    blocks.extend(s);
    ctx.tape.concat_rows(&blocks)
}

/// Stacked graph convolutions followed by the output feed-forward layer.
///
/// Hetero mode computes `act(sum_t A_t H W_t + B)` per layer where row `i` of
/// `B` is the bias of node `i`'s own type; homo mode uses `act(A H W + b)`.
/// With all type weights and biases tied, the two coincide.
pub fn hgnn_forward(ctx: &mut Ctx<'_>, graph: &HeteroGraph, h0: Var, mode: GnnMode) -> Result<Var> {
    let n = graph.node_count();
    let rows = ctx.tape.value(h0).rows();
    if rows != n {
        return Err(Error::Contract(alloc::format!(
            "initial features have {rows} rows for {n} graph nodes"
        )));
    }
    let normalize = ctx.cfg.normalize_adjacency;
    let orientation = ctx.cfg.mask_orientation;
    let present: Vec<NodeType> = NodeType::ALL
        .into_iter()
        .filter(|&t| graph.count_of(t) > 0)
        .collect();
    let type_rows: Vec<usize> = graph.nodes().iter().map(|node| node.kind.index()).collect();

    let masks: Vec<(NodeType, Var)> = match mode {
        GnnMode::Hetero => present
            .iter()
            .map(|&t| (t, ctx.constant(graph.type_adjacency_tensor(t, orientation, normalize))))
            .collect(),
        GnnMode::Homo => Vec::new(),
    };
    let full = match mode {
        GnnMode::Homo => Some(ctx.constant(graph.adjacency_tensor(normalize))),
        GnnMode::Hetero => None,
    };

    let mut h = ctx.dropout(h0)?;
    for layer in 0..ctx.cfg.gnn_layers {
        let pre = match mode {
            GnnMode::Hetero => {
                let mut acc: Option<Var> = None;
                for &(t, a_t) in &masks {
                    let w = ctx.p(&hgnn_weight(layer, Some(t)))?;
                    let hw = ctx.tape.matmul(h, w)?;
                    let msg = ctx.tape.matmul(a_t, hw)?;
                    acc = Some(match acc {
                        Some(prev) => ctx.tape.add(prev, msg)?,
                        None => msg,
                    });
                }
                let biases = NodeType::ALL
                    .into_iter()
                    .map(|t| ctx.p(&hgnn_bias(layer, Some(t))))
                    .collect::<Result<Vec<_>>>()?;
                let table = ctx.tape.concat_rows(&biases)?;
                let bias = ctx.tape.row_lookup(table, type_rows.clone())?;
                let acc = acc.expect("utterance nodes always present");
                ctx.tape.add(acc, bias)?
            }
            GnnMode::Homo => {
                let w = ctx.p(&hgnn_weight(layer, None))?;
                let b = ctx.p(&hgnn_bias(layer, None))?;
                let hw = ctx.tape.matmul(h, w)?;
                let msg = ctx.tape.matmul(full.expect("homo adjacency"), hw)?;
                let bias = ctx.tape.repeat_rows(b, n)?;
                ctx.tape.add(msg, bias)?
            }
        };
        h = match ctx.cfg.activation {
            Activation::Relu => ctx.tape.relu(pre)?,
            Activation::Tanh => ctx.tape.tanh(pre)?,
        };
    }
    feed_forward(ctx, OUT_FFN, h)
}

/// `softmax(W_p . mean(H_enc))` as a `1 x 7` row.
pub fn predict_emotion(ctx: &mut Ctx<'_>, h_enc: Var) -> Result<Var> {
    let mean = ctx.tape.mean_rows(h_enc)?;
    let w = ctx.p(PREDICTOR)?;
    let wt = ctx.tape.transpose(w)?;
    let logits = ctx.tape.matmul(mean, wt)?;
    ctx.tape.softmax_rows(logits)
}

pub(crate) fn ffn_names(prefix: &str) -> [alloc::string::String; 4] {
    [
        name(prefix, "w1"),
        name(prefix, "b1"),
        name(prefix, "w2"),
        name(prefix, "b2"),
    ]
}
