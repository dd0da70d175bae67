//! Layers shared by the encoder and decoder.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::error::Result;
use crate::params::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Everything a forward pass needs. Dropout is active only when an RNG is
/// supplied.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a ParamStore,
    pub cfg: &'a TrainConfig,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl<'a> Ctx<'a> {
    pub fn eval(tape: &'a mut Tape, params: &'a ParamStore, cfg: &'a TrainConfig) -> Self {
        Ctx {
            tape,
            params,
            cfg,
            rng: None,
        }
    }

    pub fn train(
        tape: &'a mut Tape,
        params: &'a ParamStore,
        cfg: &'a TrainConfig,
        rng: &'a mut ChaCha8Rng,
    ) -> Self {
        Ctx {
            tape,
            params,
            cfg,
            rng: Some(rng),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn p(&mut self, name: &str) -> Result<Var> {
        self.params.bind(self.tape, name)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        match self.rng.as_deref_mut() {
            Some(rng) => self.tape.dropout(x, self.cfg.dropout, rng),
            None => Ok(x),
        }
    }
}

pub(crate) fn name(prefix: &str, leaf: &str) -> String {
    alloc::format!("{prefix}.{leaf}")
}

/// Position-wise `affine -> ReLU -> affine` with parameters `{prefix}.w1/b1/w2/b2`.
pub fn feed_forward(ctx: &mut Ctx<'_>, prefix: &str, x: Var) -> Result<Var> {
    let w1 = ctx.p(&name(prefix, "w1"))?;
    let b1 = ctx.p(&name(prefix, "b1"))?;
    let w2 = ctx.p(&name(prefix, "w2"))?;
    let b2 = ctx.p(&name(prefix, "b2"))?;
    let h = ctx.tape.affine(x, w1, b1)?;
    let h = ctx.tape.relu(h)?;
    let h = ctx.dropout(h)?;
    ctx.tape.affine(h, w2, b2)
}

/// Scaled dot-product attention with `heads` heads and parameters
/// `{prefix}.wq/wk/wv/wo`. Queries come from `query`, keys and values from
/// `memory`. With `causal`, query row `i` attends to memory rows `0..=i`.
pub fn multi_head(
    ctx: &mut Ctx<'_>,
    prefix: &str,
    query: Var,
    memory: Var,
    causal: bool,
) -> Result<Var> {
    let heads = ctx.cfg.heads;
    let d = ctx.cfg.d_model;
    let dk = d / heads;
    let wq = ctx.p(&name(prefix, "wq"))?;
    let wk = ctx.p(&name(prefix, "wk"))?;
    let wv = ctx.p(&name(prefix, "wv"))?;
    let wo = ctx.p(&name(prefix, "wo"))?;
    let q = ctx.tape.matmul(query, wq)?;
    let k = ctx.tape.matmul(memory, wk)?;
    let v = ctx.tape.matmul(memory, wv)?;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                ctx.tape.slice_cols(q, h * dk, dk)?,
                ctx.tape.slice_cols(k, h * dk, dk)?,
                ctx.tape.slice_cols(v, h * dk, dk)?,
            )
        };
        let kt = ctx.tape.transpose(kh)?;
        let scores = ctx.tape.matmul(qh, kt)?;
        let scores = ctx.tape.scale(scores, scale)?;
        let weights = if causal {
            ctx.tape.causal_softmax_rows(scores)?
        } else {
            ctx.tape.softmax_rows(scores)?
        };
        outs.push(ctx.tape.matmul(weights, vh)?);
    }
    let joined = ctx.tape.concat_cols(&outs)?;
    ctx.tape.matmul(joined, wo)
}
