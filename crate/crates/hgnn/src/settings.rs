//! Flat `key = value` configuration files for [`TrainConfig`].
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so that typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use hgnn_core::{Activation, GnnMode, MaskOrientation, NodeType, NodeTypeSet, TrainConfig};

use crate::{Error, Result};

/// Every key, in the order [`render`] writes them.
pub const KEYS: [&str; 33] = [
    "lambda",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "epochs",
    "seed",
    "d_word",
    "d_hidden",
    "d_model",
    "d_position",
    "heads",
    "gnn_layers",
    "face_dim",
    "audio_dim",
    "speaker_slots",
    "self_loops",
    "mask_orientation",
    "normalize_adjacency",
    "activation",
    "gnn_mode",
    "ablate",
    "golden_emotion",
    "detach_p_for_decoder",
    "utterance_residual",
    "decoder_residual",
    "dropout",
    "max_turns",
    "max_utterance_len",
    "max_response_len",
    "min_token_count",
    "min_speaker_count",
];

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn flag(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

/// Parses a comma-separated list of node type names; `none` or an empty
/// value means no ablation.
pub fn parse_node_types(value: &str) -> std::result::Result<NodeTypeSet, String> {
    let mut set = NodeTypeSet::empty();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty() && *p != "none") {
        let t = NodeType::from_name(part).ok_or_else(|| format!("unknown node type {part:?}"))?;
        set = set.with(t);
    }
    Ok(set)
}

pub fn node_types_to_string(set: NodeTypeSet) -> String {
    if set.is_empty() {
        return "none".into();
    }
    set.iter().map(NodeType::name).collect::<Vec<_>>().join(",")
}

/// Sets one key on `cfg`.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "lambda" => cfg.lambda = num(key, value)?,
        "lr" => cfg.adam.lr = num(key, value)?,
        "beta1" => cfg.adam.beta1 = num(key, value)?,
        "beta2" => cfg.adam.beta2 = num(key, value)?,
        "adam_eps" => cfg.adam.eps = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "d_word" => cfg.d_word = num(key, value)?,
        "d_hidden" => cfg.d_hidden = num(key, value)?,
        "d_model" => cfg.d_model = num(key, value)?,
        "d_position" => cfg.d_position = num(key, value)?,
        "heads" => cfg.heads = num(key, value)?,
        "gnn_layers" => cfg.gnn_layers = num(key, value)?,
        "face_dim" => cfg.face_dim = num(key, value)?,
        "audio_dim" => cfg.audio_dim = num(key, value)?,
        "speaker_slots" => cfg.speaker_slots = num(key, value)?,
        "self_loops" => cfg.self_loops = flag(key, value)?,
        "mask_orientation" => {
            cfg.mask_orientation = match value {
                "sender" => MaskOrientation::Sender,
                "receiver" => MaskOrientation::Receiver,
                _ => return Err(format!("{key}: expected sender or receiver, got {value:?}")),
            }
        }
        "normalize_adjacency" => cfg.normalize_adjacency = flag(key, value)?,
        "activation" => {
            cfg.activation = match value {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                _ => return Err(format!("{key}: expected relu or tanh, got {value:?}")),
            }
        }
        "gnn_mode" => {
            cfg.gnn_mode = match value {
                "hetero" => GnnMode::Hetero,
                "homo" => GnnMode::Homo,
                _ => return Err(format!("{key}: expected hetero or homo, got {value:?}")),
            }
        }
        "ablate" => cfg.ablate = parse_node_types(value)?,
        "golden_emotion" => cfg.golden_emotion = flag(key, value)?,
        "detach_p_for_decoder" => cfg.detach_p_for_decoder = flag(key, value)?,
        "utterance_residual" => cfg.utterance_residual = flag(key, value)?,
        "decoder_residual" => cfg.decoder_residual = flag(key, value)?,
        "dropout" => cfg.dropout = num(key, value)?,
        "max_turns" => cfg.max_turns = num(key, value)?,
        "max_utterance_len" => cfg.max_utterance_len = num(key, value)?,
        "max_response_len" => cfg.max_response_len = num(key, value)?,
        "min_token_count" => cfg.min_token_count = num(key, value)?,
        "min_speaker_count" => cfg.min_speaker_count = num(key, value)?,
        _ => return Err(format!("unknown key {key:?}")),
    }
    Ok(())
}

/// Every key with its value, one `key = value` per line.
pub fn render(cfg: &TrainConfig) -> String {
    let on = |b: bool| if b { "true" } else { "false" };
    let values: [String; 33] = [
        cfg.lambda.to_string(),
        cfg.adam.lr.to_string(),
        cfg.adam.beta1.to_string(),
        cfg.adam.beta2.to_string(),
        cfg.adam.eps.to_string(),
        cfg.batch_size.to_string(),
        cfg.epochs.to_string(),
        cfg.seed.to_string(),
        cfg.d_word.to_string(),
        cfg.d_hidden.to_string(),
        cfg.d_model.to_string(),
        cfg.d_position.to_string(),
        cfg.heads.to_string(),
        cfg.gnn_layers.to_string(),
        cfg.face_dim.to_string(),
        cfg.audio_dim.to_string(),
        cfg.speaker_slots.to_string(),
        on(cfg.self_loops).into(),
        match cfg.mask_orientation {
            MaskOrientation::Sender => "sender",
            MaskOrientation::Receiver => "receiver",
        }
        .into(),
        on(cfg.normalize_adjacency).into(),
        match cfg.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
        .into(),
        match cfg.gnn_mode {
            GnnMode::Hetero => "hetero",
            GnnMode::Homo => "homo",
        }
        .into(),
        node_types_to_string(cfg.ablate),
        on(cfg.golden_emotion).into(),
        on(cfg.detach_p_for_decoder).into(),
        on(cfg.utterance_residual).into(),
        on(cfg.decoder_residual).into(),
        cfg.dropout.to_string(),
        cfg.max_turns.to_string(),
        cfg.max_utterance_len.to_string(),
        cfg.max_response_len.to_string(),
        cfg.min_token_count.to_string(),
        cfg.min_speaker_count.to_string(),
    ];
    let mut out = String::new();
    for (k, v) in KEYS.iter().zip(values) {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}

/// The `(line, key, value)` entries of a config text.
pub fn entries(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("config", i + 1, "expected key = value"))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Applies every entry of `text` on top of `cfg`.
pub fn apply_text(cfg: &mut TrainConfig, text: &str) -> Result<()> {
    for (line, k, v) in entries(text)? {
        apply(cfg, &k, &v).map_err(|m| Error::format("config", line, m))?;
    }
    Ok(())
}

pub fn load(path: &Path, base: TrainConfig) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = base;
    apply_text(&mut cfg, &text)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_round_trips() {
        let mut cfg = TrainConfig::full_scale();
        cfg.ablate = NodeTypeSet::of(&[NodeType::Face, NodeType::Speaker]);
        cfg.lambda = 0.125;
        cfg.mask_orientation = MaskOrientation::Receiver;
        let mut back = TrainConfig::default();
        apply_text(&mut back, &render(&cfg)).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(render(&cfg).lines().count(), KEYS.len());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut cfg = TrainConfig::default();
        let err = apply_text(&mut cfg, "# c\nlambda = 0.2\nheads = four\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(apply_text(&mut cfg, "nonsense").is_err());
        assert!(apply_text(&mut cfg, "colour = blue").is_err());
        assert_eq!(cfg.lambda, 0.2);
    }

    #[test]
    fn node_type_lists() {
        let s = parse_node_types("face, audio").unwrap();
        assert!(s.contains(NodeType::Face) && s.contains(NodeType::Audio));
        assert_eq!(node_types_to_string(s), "face,audio");
        assert!(parse_node_types("none").unwrap().is_empty());
        assert!(parse_node_types("ears").is_err());
    }
}
