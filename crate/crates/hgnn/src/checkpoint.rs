//! Versioned text checkpoints.
//!
//! ```text
//! HGNN-CKPT-1
//! [config]
//! lambda = 0.5
//! ...
//! [vocab] 2
//! "hello"
//! "world"
//! [speakers] 1 13
//! "alice"
//! [tensors] 1
//! enc.w 2 3
//! 0.1 0.2 0.3 0.4 0.5 0.6
//! [end]
//! ```
//!
//! Words and speaker names are JSON string literals. Tensor values are
//! written with the shortest representation that parses back to the same
//! `f64`.

use std::fmt::Write as _;
use std::path::Path;

use hgnn_core::{Model, SpeakerRoster, Tensor, TrainConfig, Vocab};

use crate::{settings, Error, Result};

pub const MAGIC: &str = "HGNN-CKPT-1";

pub fn to_string(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    out.push_str("[config]\n");
    out.push_str(&settings::render(&model.config));
    let quote = |s: &str| serde_json::to_string(s).expect("strings serialize");
    let words = model.vocab.words();
    let _ = writeln!(out, "[vocab] {}", words.len());
    for w in words {
        let _ = writeln!(out, "{}", quote(w));
    }
    let names = model.speakers.names();
    let _ = writeln!(out, "[speakers] {} {}", names.len(), model.speakers.capacity());
    for n in names {
        let _ = writeln!(out, "{}", quote(n));
    }
    let _ = writeln!(out, "[tensors] {}", model.params.len());
    for (name, t) in model.params.iter() {
        let _ = writeln!(out, "{name} {} {}", t.rows(), t.cols());
        let values: Vec<String> = t.values().iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{}", values.join(" "));
    }
    out.push_str("[end]\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(self.fail("unexpected end of file")),
        }
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::format("checkpoint", self.line, message)
    }

    fn header(&mut self, tag: &str) -> Result<Vec<usize>> {
        let l = self.next()?;
        let rest = l
            .strip_prefix(tag)
            .ok_or_else(|| self.fail(format!("expected {tag}")))?;
        rest.split_whitespace()
            .map(|n| n.parse().map_err(|_| self.fail(format!("bad count {n:?}"))))
            .collect()
    }

    fn strings(&mut self, count: usize) -> Result<Vec<String>> {
        (0..count)
            .map(|_| {
                let l = self.next()?;
                serde_json::from_str(l).map_err(|e| self.fail(e.to_string()))
            })
            .collect()
    }
}

pub fn from_str(text: &str) -> Result<Model> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(lines.fail(format!("missing {MAGIC} header")));
    }
    if lines.next()? != "[config]" {
        return Err(lines.fail("expected [config]"));
    }
    let mut config = TrainConfig::default();
    let mut seen = 0;
    while seen < settings::KEYS.len() {
        let l = lines.next()?;
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| lines.fail("expected key = value"))?;
        settings::apply(&mut config, k.trim(), v.trim()).map_err(|m| lines.fail(m))?;
        seen += 1;
    }
    let n = lines.header("[vocab]")?;
    let [n_words] = n[..] else {
        return Err(lines.fail("expected one vocabulary count"));
    };
    let vocab = Vocab::from_tokens(lines.strings(n_words)?);
    let n = lines.header("[speakers]")?;
    let [n_names, capacity] = n[..] else {
        return Err(lines.fail("expected speaker count and capacity"));
    };
    let speakers = SpeakerRoster::from_names(lines.strings(n_names)?, capacity)?;
    let n = lines.header("[tensors]")?;
    let [n_tensors] = n[..] else {
        return Err(lines.fail("expected one tensor count"));
    };
    let mut model = Model::new(config, vocab, speakers)?;
    if n_tensors != model.params.len() {
        return Err(lines.fail(format!(
            "{n_tensors} tensors stored, the configuration defines {}",
            model.params.len()
        )));
    }
    for _ in 0..n_tensors {
        let head: Vec<&str> = lines.next()?.split_whitespace().collect();
        let [name, rows, cols] = head[..] else {
            return Err(lines.fail("expected: name rows cols"));
        };
        let rows: usize = rows.parse().map_err(|_| lines.fail("bad row count"))?;
        let cols: usize = cols.parse().map_err(|_| lines.fail("bad column count"))?;
        if !model.params.contains(name) {
            return Err(lines.fail(format!("unknown tensor {name:?}")));
        }
        let values = lines
            .next()?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| lines.fail(format!("bad value {v:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let expected = model.params.get(name)?.shape();
        if expected != (rows, cols) || values.len() != rows * cols {
            return Err(lines.fail(format!(
                "{name} is {rows}x{cols} with {} values, expected {}x{}",
                values.len(),
                expected.0,
                expected.1
            )));
        }
        model.params.set(name, Tensor::new(rows, cols, values)?)?;
    }
    if lines.next()? != "[end]" {
        return Err(lines.fail("expected [end]"));
    }
    Ok(model)
}

pub fn save(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hgnn_core::corpus::synthesize_corpus;
    use hgnn_core::SynthSpec;

    fn model() -> Model {
        let corpus = synthesize_corpus(&SynthSpec {
            n_dialogues: 4,
            ..SynthSpec::default()
        })
        .unwrap();
        Model::from_corpus(&corpus, TrainConfig::gradient_check_scale()).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back = from_str(&to_string(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_files_report_a_line() {
        let m = model();
        let text = to_string(&m);
        assert!(from_str(&text.replacen(MAGIC, "HGNN-CKPT-0", 1)).is_err());
        let truncated: String = text.lines().take(50).collect::<Vec<_>>().join("\n");
        let err = from_str(&truncated).unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let bad = text.replacen("[end]", "[fin]", 1);
        assert!(from_str(&bad).is_err());
    }
}
