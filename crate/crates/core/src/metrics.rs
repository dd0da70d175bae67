//! Automatic evaluation: perplexity, distinct-n, corpus BLEU, and
//! support-weighted emotion F1.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::corpus::DialogueRecord;
use crate::emotion::{Emotion, EMOTION_COUNT};
use crate::error::{Error, Result};
use crate::model::Model;

/// `exp(total NLL / total tokens)` under teacher forcing, EOS counted.
pub fn perplexity(model: &Model, corpus: &[DialogueRecord]) -> Result<f64> {
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for d in corpus {
        let v = model.losses(d)?;
        nll += v.generation;
        tokens += v.tokens;
    }
    if tokens == 0 {
        return Err(Error::Contract("perplexity of an empty corpus".into()));
    }
    Ok(libm::exp(nll / tokens as f64))
}

/// Distinct n-grams over all n-grams across `responses`; 0 when there are none.
pub fn distinct_n<T: Ord + Clone>(responses: &[Vec<T>], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut seen: BTreeSet<&[T]> = BTreeSet::new();
    let mut total = 0usize;
    for r in responses {
        for gram in r.windows(n) {
            seen.insert(gram);
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        seen.len() as f64 / total as f64
    }
}

fn ngram_counts<T: Ord + Clone>(tokens: &[T], n: usize) -> BTreeMap<&[T], usize> {
    let mut counts = BTreeMap::new();
    for g in tokens.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuBreakdown {
    pub bleu: f64,
    pub brevity_penalty: f64,
    /// Clipped matches and totals for each order `1..=max_n`.
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub candidate_len: usize,
    pub reference_len: usize,
}

/// Corpus BLEU with one reference per candidate, uniform weights up to
/// `max_n`, add-one smoothing on orders above one, and the brevity penalty.
pub fn bleu<T: Ord + Clone>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<BleuBreakdown> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(alloc::format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Contract("BLEU order must be positive".into()));
    }
    let mut matches = alloc::vec![0usize; max_n];
    let mut totals = alloc::vec![0usize; max_n];
    let mut c_len = 0;
    let mut r_len = 0;
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=max_n {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = if n == 0 {
            (matches[0] as f64, totals[0] as f64)
        } else {
            (matches[n] as f64 + 1.0, totals[n] as f64 + 1.0)
        };
        if m == 0.0 || t == 0.0 {
            log_sum = f64::NEG_INFINITY;
            break;
        }
        log_sum += libm::log(m / t);
    }
    let bp = if c_len == 0 {
        0.0
    } else if c_len >= r_len {
        1.0
    } else {
        libm::exp(1.0 - r_len as f64 / c_len as f64)
    };
    let bleu = if log_sum.is_finite() {
        bp * libm::exp(log_sum / max_n as f64)
    } else {
        0.0
    };
    Ok(BleuBreakdown {
        bleu,
        brevity_penalty: bp,
        matches,
        totals,
        candidate_len: c_len,
        reference_len: r_len,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmotionScores {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub per_class: [ClassScores; EMOTION_COUNT],
    pub samples: usize,
}

/// Per-class precision, recall and F1, with F1 averaged by gold support.
/// Classes absent from `golds` carry zero weight.
pub fn emotion_weighted_f1(predictions: &[Emotion], golds: &[Emotion]) -> Result<EmotionScores> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(alloc::format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    let mut tp = [0usize; EMOTION_COUNT];
    let mut support = [0usize; EMOTION_COUNT];
    let mut predicted = [0usize; EMOTION_COUNT];
    for (&p, &g) in predictions.iter().zip(golds) {
        support[g.index()] += 1;
        predicted[p.index()] += 1;
        if p == g {
            tp[g.index()] += 1;
        }
    }
    let mut per_class = [ClassScores::default(); EMOTION_COUNT];
    let mut weighted = 0.0;
    for c in 0..EMOTION_COUNT {
        let precision = if predicted[c] > 0 {
            tp[c] as f64 / predicted[c] as f64
        } else {
            0.0
        };
        let recall = if support[c] > 0 {
            tp[c] as f64 / support[c] as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class[c] = ClassScores {
            precision,
            recall,
            f1,
            support: support[c],
            predicted: predicted[c],
        };
        weighted += f1 * support[c] as f64;
    }
    let n = golds.len();
    let correct: usize = tp.iter().sum();
    Ok(EmotionScores {
        weighted_f1: if n > 0 { weighted / n as f64 } else { 0.0 },
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        per_class,
        samples: n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ppl: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub bleu: f64,
    pub emotion: EmotionScores,
    pub dialogues: usize,
    /// Dialogues without a gold response emotion, left out of the F1.
    pub unlabeled: usize,
    pub generated_tokens: usize,
    pub truncated: usize,
}

/// Runs every metric on `corpus` with greedy or beam decoding.
pub fn evaluate(model: &Model, corpus: &[DialogueRecord], decoding: crate::model::Decoding) -> Result<EvalReport> {
    let ppl = perplexity(model, corpus)?;
    let mut candidates = Vec::with_capacity(corpus.len());
    let mut references = Vec::with_capacity(corpus.len());
    let mut predictions = Vec::new();
    let mut golds = Vec::new();
    let mut truncated = 0;
    for d in corpus {
        let g = model.generate(d, decoding)?;
        truncated += usize::from(g.truncated);
        candidates.push(g.tokens);
        references.push(model.response_tokens(d));
        if let Some(gold) = d.response_emotion {
            predictions.push(model.predict_emotion(d)?);
            golds.push(gold);
        }
    }
    let emotion = emotion_weighted_f1(&predictions, &golds)?;
    Ok(EvalReport {
        ppl,
        dist1: distinct_n(&candidates, 1),
        dist2: distinct_n(&candidates, 2),
        bleu: bleu(&candidates, &references, 4)?.bleu,
        dialogues: corpus.len(),
        unlabeled: corpus.len() - golds.len(),
        generated_tokens: candidates.iter().map(Vec::len).sum(),
        truncated,
        emotion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn distinct_hand_counts() {
        assert!((distinct_n(&[toks("a a b")], 1) - 2.0 / 3.0).abs() < 1e-12);
        let same = vec![toks("x"); 4];
        assert!((distinct_n(&same, 1) - 0.25).abs() < 1e-12);
        assert_eq!(distinct_n(&[toks("a b"), toks("c d")], 1), 1.0);
        assert_eq!(distinct_n::<&str>(&[vec![]], 2), 0.0);
    }

    #[test]
    fn bleu_perfect_and_disjoint() {
        let c = vec![toks("the cat sat on the mat")];
        assert!((bleu(&c, &c, 4).unwrap().bleu - 1.0).abs() < 1e-12);
        let r = vec![toks("a b c d e f")];
        assert!(bleu(&c, &r, 4).unwrap().bleu < 0.05);
    }

    #[test]
    fn bleu_short_candidate_hand_value() {
        let b = bleu(&[toks("the cat")], &[toks("the cat sat")], 4).unwrap();
        let bp = (1.0f64 - 1.5).exp();
        assert!((b.brevity_penalty - bp).abs() < 1e-12);
        assert_eq!(b.matches, vec![2, 1, 0, 0]);
        assert_eq!(b.totals, vec![2, 1, 0, 0]);
        // p1 = 2/2, p2 = (1+1)/(1+1), p3 = p4 = (0+1)/(0+1).
        assert!((b.bleu - bp).abs() < 1e-12);
    }

    #[test]
    fn empty_candidate_counts_as_zero_match() {
        let b = bleu(&[vec![], toks("a b")], &[toks("a b"), toks("a b")], 2).unwrap();
        assert_eq!(b.candidate_len, 2);
        assert_eq!(b.reference_len, 4);
    }

    #[test]
    fn weighted_f1_one_class_predictor() {
        let golds: Vec<Emotion> = Emotion::ALL.to_vec();
        let preds = vec![Emotion::Joy; 7];
        let s = emotion_weighted_f1(&preds, &golds).unwrap();
        assert!((s.weighted_f1 - 1.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_perfect_and_single() {
        let golds = vec![Emotion::Fear, Emotion::Joy, Emotion::Joy];
        assert_eq!(emotion_weighted_f1(&golds, &golds).unwrap().weighted_f1, 1.0);
        let one = [Emotion::Anger];
        assert_eq!(emotion_weighted_f1(&one, &one).unwrap().weighted_f1, 1.0);
    }
}
