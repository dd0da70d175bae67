//! Model and training configuration.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::graph::{MaskOrientation, NodeType, NodeTypeSet};
use crate::params::AdamConfig;

/// Nonlinearity applied after each graph convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

/// Per-type weights, or one shared weight per layer (ablation baseline).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GnnMode {
    Hetero,
    Homo,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the classification loss in the joint objective.
    pub lambda: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Word embedding width of the utterance LSTM.
    pub d_word: usize,
    /// LSTM hidden width.
    pub d_hidden: usize,
    /// Shared node width.
    pub d_model: usize,
    /// Utterance position embedding width.
    pub d_position: usize,
    pub heads: usize,
    pub gnn_layers: usize,
    pub face_dim: usize,
    pub audio_dim: usize,
    /// Rows of the speaker table, including the unknown-speaker row.
    pub speaker_slots: usize,
    pub self_loops: bool,
    pub mask_orientation: MaskOrientation,
    /// Row-normalize each type-wise adjacency.
    pub normalize_adjacency: bool,
    pub activation: Activation,
    pub gnn_mode: GnnMode,
    /// Node types removed from the graph.
    pub ablate: NodeTypeSet,
    /// Replace the predicted emotion mixture with the gold label.
    pub golden_emotion: bool,
    /// Treat the predicted distribution as a constant inside the decoder's mixture.
    pub detach_p_for_decoder: bool,
    pub utterance_residual: bool,
    pub decoder_residual: bool,
    pub dropout: f64,
    pub max_turns: usize,
    /// Maximum tokens kept per history utterance.
    pub max_utterance_len: usize,
    /// Maximum generated response length, EOS excluded.
    pub max_response_len: usize,
    pub min_token_count: usize,
    pub min_speaker_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.5,
            adam: AdamConfig::default(),
            batch_size: 16,
            epochs: 30,
            seed: 1,
            d_word: 16,
            d_hidden: 32,
            d_model: 32,
            d_position: 32,
            heads: 4,
            gnn_layers: 2,
            face_dim: 8,
            audio_dim: 8,
            speaker_slots: 13,
            self_loops: true,
            mask_orientation: MaskOrientation::Sender,
            normalize_adjacency: false,
            activation: Activation::Relu,
            gnn_mode: GnnMode::Hetero,
            ablate: NodeTypeSet::empty(),
            golden_emotion: false,
            detach_p_for_decoder: false,
            utterance_residual: false,
            decoder_residual: false,
            dropout: 0.1,
            max_turns: 35,
            max_utterance_len: 50,
            max_response_len: 50,
            min_token_count: 1,
            min_speaker_count: 1,
        }
    }
}

impl TrainConfig {
    /// The full-size dimensions: word embeddings of 128, hidden and node widths of 256.
    pub fn full_scale() -> Self {
        TrainConfig {
            d_word: 128,
            d_hidden: 256,
            d_model: 256,
            d_position: 256,
            ..Self::default()
        }
    }

    /// Small widths for finite-difference checks, dropout off.
    pub fn gradient_check_scale() -> Self {
        TrainConfig {
            d_word: 8,
            d_hidden: 8,
            d_model: 8,
            d_position: 8,
            heads: 2,
            gnn_layers: 2,
            dropout: 0.0,
            max_turns: 8,
            max_response_len: 12,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(alloc::format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(alloc::format!(
                "heads {} must divide d_model {}",
                self.heads, self.d_model
            ));
        }
        for (name, v) in [
            ("d_word", self.d_word),
            ("d_hidden", self.d_hidden),
            ("d_model", self.d_model),
            ("d_position", self.d_position),
            ("face_dim", self.face_dim),
            ("audio_dim", self.audio_dim),
            ("batch_size", self.batch_size),
            ("max_turns", self.max_turns),
            ("max_utterance_len", self.max_utterance_len),
            ("max_response_len", self.max_response_len),
        ] {
            if v == 0 {
                return fail(alloc::format!("{name} must be positive"));
            }
        }
        if self.speaker_slots < 1 {
            return fail("speaker_slots must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.ablate.contains(NodeType::Utterance) {
            return fail("utterance nodes cannot be ablated".into());
        }
        if !(self.adam.lr > 0.0 && self.adam.eps > 0.0) {
            return fail("learning rate and eps must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
        TrainConfig::full_scale().validate().unwrap();
    }

    #[test]
    fn heads_must_divide_width() {
        let c = TrainConfig {
            heads: 3,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn lambda_range() {
        for bad in [-0.1, 1.5] {
            let c = TrainConfig {
                lambda: bad,
                ..TrainConfig::default()
            };
            assert!(c.validate().is_err());
        }
    }
}
