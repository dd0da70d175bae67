//! Emotion- and personality-aware response decoder.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{BOS, EOS};
use crate::error::{Error, Result};
use crate::nn::{feed_forward, multi_head, Ctx};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const TOKEN_EMB: &str = "dec.tok_emb";
pub const POSITION: &str = "dec.position";
pub const SELF_ATTN: &str = "dec.self_attn";
pub const CROSS_ATTN: &str = "dec.cross_attn";
pub const FFN: &str = "dec.ffn";
pub const GATE_W: &str = "dec.w_g";
pub const GATE_B: &str = "dec.b_g";
pub const OUTPUT: &str = "dec.w_o";

/// `E_p = sum_c P[c] * EMB1[c]` for a `1 x 7` distribution.
pub fn emotion_mix(tape: &mut Tape, distribution: Var, emb1: Var) -> Result<Var> {
    tape.matmul(distribution, emb1)
}

/// Gate fusion over `t` decoder rows:
/// `g = sigmoid([O; E_g; S_g] W_g + b_g)` and `O + g*E_g + (1-g)*S_g`,
/// with `E_g`, `S_g` the mixture and speaker rows repeated `t` times.
/// Returns `(O_es, g)`.
pub fn gate_fuse(ctx: &mut Ctx<'_>, o: Var, e_p: Var, s_p: Var) -> Result<(Var, Var)> {
    let (t, d) = ctx.tape.value(o).shape();
    let e_g = ctx.tape.repeat_rows(e_p, t)?;
    let s_g = ctx.tape.repeat_rows(s_p, t)?;
    let w = ctx.p(GATE_W)?;
    let b = ctx.p(GATE_B)?;
    let joined = ctx.tape.concat_cols(&[o, e_g, s_g])?;
    let z = ctx.tape.affine(joined, w, b)?;
    let g = ctx.tape.sigmoid(z)?;
    let ones = ctx.constant(Tensor::filled(t, d, 1.0));
    let not_g = ctx.tape.sub(ones, g)?;
    let emo = ctx.tape.elem_mul(g, e_g)?;
    let spk = ctx.tape.elem_mul(not_g, s_g)?;
    let fused = ctx.tape.add(o, emo)?;
    Ok((ctx.tape.add(fused, spk)?, g))
}

/// Token logits-to-probabilities for every position of `inputs`. Row `t` is
/// the distribution of the token following `inputs[..=t]`.
pub fn step_distributions(
    ctx: &mut Ctx<'_>,
    inputs: &[usize],
    h_enc: Var,
    e_p: Var,
    s_p: Var,
) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::Contract("decoder prefix is empty".into()));
    }
    let capacity = ctx.params.get(POSITION)?.rows();
    if inputs.len() > capacity {
        return Err(Error::Contract(alloc::format!(
            "decoder prefix of {} tokens exceeds {capacity} positions",
            inputs.len()
        )));
    }
    let emb = ctx.p(TOKEN_EMB)?;
    let pos = ctx.p(POSITION)?;
    let tok = ctx.tape.row_lookup(emb, inputs.to_vec())?;
    let at = ctx.tape.row_lookup(pos, (0..inputs.len()).collect())?;
    let r = ctx.tape.add(tok, at)?;
    let r = ctx.dropout(r)?;

    let residual = ctx.cfg.decoder_residual;
    let mut h_r = multi_head(ctx, SELF_ATTN, r, r, true)?;
    if residual {
        let s = ctx.tape.add(r, h_r)?;
        h_r = ctx.tape.layer_norm_rows(s)?;
    }
    let mut c = multi_head(ctx, CROSS_ATTN, h_r, h_enc, false)?;
    if residual {
        let s = ctx.tape.add(h_r, c)?;
        c = ctx.tape.layer_norm_rows(s)?;
    }
    let mut o = feed_forward(ctx, FFN, c)?;
    if residual {
        let s = ctx.tape.add(c, o)?;
        o = ctx.tape.layer_norm_rows(s)?;
    }
    let (fused, _) = gate_fuse(ctx, o, e_p, s_p)?;
    let w_o = ctx.p(OUTPUT)?;
    let w_t = ctx.tape.transpose(w_o)?;
    let logits = ctx.tape.matmul(fused, w_t)?;
    ctx.tape.softmax_rows(logits)
}

/// Teacher-forced inputs and targets for a response: `BOS y_1 .. y_J` and
/// `y_1 .. y_J EOS`. Responses longer than `max_len` are cut to `max_len`.
pub fn teacher_forcing(response: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let body = if response.len() > max_len {
        log::warn!(
            "response of {} tokens truncated to {max_len}",
            response.len()
        );
        &response[..max_len]
    } else {
        response
    };
    let mut inputs = vec![BOS];
    inputs.extend_from_slice(body);
    let mut targets = body.to_vec();
    targets.push(EOS);
    (inputs, targets)
}

/// `-sum_t log P(y_t | y_<t)` under teacher forcing, EOS included.
pub fn sequence_nll(
    ctx: &mut Ctx<'_>,
    response: &[usize],
    h_enc: Var,
    e_p: Var,
    s_p: Var,
) -> Result<Var> {
    let (inputs, targets) = teacher_forcing(response, ctx.cfg.max_response_len);
    let probs = step_distributions(ctx, &inputs, h_enc, e_p, s_p)?;
    let logp = ctx.tape.log(probs)?;
    ctx.tape.neg_pick(logp, targets)
}

/// Distribution of the next token after `prefix`, which must start with BOS.
pub fn decode_step(
    ctx: &mut Ctx<'_>,
    prefix: &[usize],
    h_enc: Var,
    e_p: Var,
    s_p: Var,
) -> Result<Tensor> {
    if prefix.first() != Some(&BOS) {
        return Err(Error::Contract("decoder prefix must start with BOS".into()));
    }
    let probs = step_distributions(ctx, prefix, h_enc, e_p, s_p)?;
    let value = ctx.tape.value(probs);
    Ok(Tensor::row(value.row_slice(value.rows() - 1)))
}
