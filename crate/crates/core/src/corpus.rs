//! Dialogue records, vocabularies, speaker rosters and the planted-signal
//! corpus generator.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::emotion::{Emotion, EMOTION_COUNT};
use crate::error::{Error, Result};

/// One training example: the dialogue history with its aligned modalities,
/// the next speaker, and the gold response with its emotion.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueRecord {
    pub utterances: Vec<String>,
    pub faces: Option<Vec<Vec<f64>>>,
    pub audios: Option<Vec<Vec<f64>>>,
    pub emotions: Vec<Emotion>,
    pub speakers: Vec<String>,
    pub next_speaker: String,
    pub response: String,
    pub response_emotion: Option<Emotion>,
}

impl DialogueRecord {
    pub fn turns(&self) -> usize {
        self.utterances.len()
    }

    /// Checks the structural invariants. `max_turns` bounds the history length.
    pub fn validate(&self, max_turns: usize) -> Result<()> {
        let n = self.utterances.len();
        if n == 0 {
            return Err(Error::malformed("utterances", "dialogue has no history"));
        }
        if n > max_turns {
            return Err(Error::malformed(
                "utterances",
                alloc::format!("{n} turns exceed the maximum of {max_turns}"),
            ));
        }
        if self.emotions.len() != n {
            return Err(Error::malformed(
                "emotions",
                alloc::format!("{} labels for {n} utterances", self.emotions.len()),
            ));
        }
        if self.speakers.len() != n {
            return Err(Error::malformed(
                "speakers",
                alloc::format!("{} speakers for {n} utterances", self.speakers.len()),
            ));
        }
        for (field, vectors) in [("faces", &self.faces), ("audios", &self.audios)] {
            let Some(vs) = vectors else { continue };
            if vs.len() != n {
                return Err(Error::malformed(
                    field,
                    alloc::format!("{} vectors for {n} utterances", vs.len()),
                ));
            }
            let dim = vs[0].len();
            if dim == 0 || vs.iter().any(|v| v.len() != dim) {
                return Err(Error::malformed(field, "vectors must share one non-zero width"));
            }
            if vs.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::malformed(field, "non-finite value"));
            }
        }
        Ok(())
    }

    pub fn has_faces(&self) -> bool {
        self.faces.is_some()
    }

    pub fn has_audios(&self) -> bool {
        self.audios.is_some()
    }
}

/// Lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(ToString::to_string)
        .collect()
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    /// Tokens seen at least `min_count` times in utterances and responses,
    /// ordered by descending frequency and then lexicographically.
    pub fn build(corpus: &[DialogueRecord], min_count: usize) -> Vocab {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for d in corpus {
            for text in d.utterances.iter().chain(core::iter::once(&d.response)) {
                for tok in tokenize(text) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count.max(1) && !RESERVED.contains(&t.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    /// Reserved entries followed by `tokens` in the given order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Vocab {
        let mut v = Vocab {
            tokens: RESERVED.iter().map(|s| s.to_string()).collect(),
            ids: BTreeMap::new(),
        };
        for (i, t) in RESERVED.iter().enumerate() {
            v.ids.insert(t.to_string(), i);
        }
        for t in tokens {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with spaces, dropping reserved markers.
    pub fn decode(&self, ids: &[usize]) -> String {
        let words: Vec<&str> = ids
            .iter()
            .filter(|&&i| i >= RESERVED.len())
            .map(|&i| self.token(i))
            .collect();
        words.join(" ")
    }
}

/// Maps speaker names to rows of the speaker embedding table. Row 0 is the
/// shared unknown-speaker row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpeakerRoster {
    names: Vec<String>,
    capacity: usize,
}

pub const UNK_SPEAKER: usize = 0;

impl SpeakerRoster {
    /// Keeps the `capacity - 1` most frequent speakers with at least
    /// `min_count` appearances.
    pub fn build(corpus: &[DialogueRecord], capacity: usize, min_count: usize) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::Config("speaker table needs at least the unknown row".into()));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for d in corpus {
            for s in d.speakers.iter().chain(core::iter::once(&d.next_speaker)) {
                *counts.entry(s.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let names = ranked
            .into_iter()
            .take(capacity - 1)
            .map(|(n, _)| n.to_string())
            .collect();
        Ok(SpeakerRoster { names, capacity })
    }

    pub fn from_names(names: Vec<String>, capacity: usize) -> Result<Self> {
        if names.len() + 1 > capacity {
            return Err(Error::Config(alloc::format!(
                "{} named speakers do not fit a table of {capacity} rows",
                names.len()
            )));
        }
        Ok(SpeakerRoster { names, capacity })
    }

    /// Number of rows in the speaker table.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .map_or(UNK_SPEAKER, |i| i + 1)
    }
}

/// Parameters of the planted-signal generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_dialogues: usize,
    pub n_speakers: usize,
    /// Number of distinct filler words used for history utterances.
    pub vocab_pool: usize,
    pub seed: u64,
    /// Seed of the labeling projections. Corpora sharing it share one
    /// labeling function, which is what makes separate train and test sets
    /// comparable.
    pub signal_seed: u64,
    pub face_dim: usize,
    pub audio_dim: usize,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Required gap between the winning and runner-up projection scores.
    pub margin: f64,
    /// Standard deviation of face/audio vectors on turns before the last.
    pub history_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_dialogues: 100,
            n_speakers: 4,
            vocab_pool: 40,
            seed: 0,
            signal_seed: 0x5eed,
            face_dim: 8,
            audio_dim: 8,
            min_turns: 1,
            max_turns: 3,
            min_words: 3,
            max_words: 6,
            margin: 0.5,
            history_scale: 0.25,
        }
    }
}

const EMOTION_WORDS: [[&str; 2]; EMOTION_COUNT] = [
    ["furious", "stop"],
    ["gross", "yuck"],
    ["scared", "help"],
    ["great", "yay"],
    ["sorry", "sigh"],
    ["wow", "really"],
    ["okay", "sure"],
];

/// The response a synthetic dialogue carries for a given emotion and
/// responding speaker.
pub fn template_response(emotion: Emotion, speaker: &str) -> String {
    let [a, b] = EMOTION_WORDS[emotion.index()];
    alloc::format!("{a} {b} {speaker}")
}

/// The fixed labeling function: row `k` scores emotion `k` from `[face; audio]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSignal {
    projections: Vec<Vec<f64>>,
}

impl PlantedSignal {
    pub fn new(face_dim: usize, audio_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = face_dim + audio_dim;
        let projections = (0..EMOTION_COUNT)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
                let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        PlantedSignal { projections }
    }

    pub fn scores(&self, face: &[f64], audio: &[f64]) -> [f64; EMOTION_COUNT] {
        let mut out = [0.0; EMOTION_COUNT];
        for (k, p) in self.projections.iter().enumerate() {
            out[k] = face.iter().chain(audio).zip(p).map(|(x, w)| x * w).sum();
        }
        out
    }

    pub fn label(&self, face: &[f64], audio: &[f64]) -> Emotion {
        let s = self.scores(face, audio);
        let best = (0..EMOTION_COUNT)
            .max_by(|&a, &b| s[a].total_cmp(&s[b]))
            .expect("seven scores");
        Emotion::from_index(best).expect("index in range")
    }

    fn margin(&self, face: &[f64], audio: &[f64]) -> f64 {
        let mut s = self.scores(face, audio);
        s.sort_by(|a, b| b.total_cmp(a));
        s[0] - s[1]
    }
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // Box-Muller; `1 - u` keeps the log argument in (0, 1].
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * standard_normal(rng)).collect()
}

/// Generates dialogues whose response emotion is the planted label of the
/// last turn's face and audio vectors. History text and history emotion
/// labels are drawn independently of it, so only the modality nodes carry
/// the signal. Labels are balanced across the seven classes.
pub fn synthesize_corpus(spec: &SynthSpec) -> Result<Vec<DialogueRecord>> {
    if spec.n_speakers == 0 || spec.vocab_pool == 0 || spec.face_dim == 0 || spec.audio_dim == 0 {
        return Err(Error::Config("synthesis needs speakers, words and modality widths".into()));
    }
    if spec.min_turns == 0 || spec.min_turns > spec.max_turns || spec.min_words == 0 || spec.min_words > spec.max_words {
        return Err(Error::Config("invalid turn or word ranges".into()));
    }
    let signal = PlantedSignal::new(spec.face_dim, spec.audio_dim, spec.signal_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels: Vec<usize> = (0..spec.n_dialogues).map(|i| i % EMOTION_COUNT).collect();
    labels.shuffle(&mut rng);

    let speakers: Vec<String> = (0..spec.n_speakers).map(|i| alloc::format!("spk{i}")).collect();
    let words: Vec<String> = (0..spec.vocab_pool).map(|i| alloc::format!("w{i}")).collect();

    let mut corpus = Vec::with_capacity(spec.n_dialogues);
    for &label in &labels {
        let n = rng.gen_range(spec.min_turns..=spec.max_turns);
        let utterances = (0..n)
            .map(|_| {
                let len = rng.gen_range(spec.min_words..=spec.max_words);
                let toks: Vec<&str> = (0..len)
                    .map(|_| words[rng.gen_range(0..words.len())].as_str())
                    .collect();
                toks.join(" ")
            })
            .collect();
        let emotions = (0..n)
            .map(|_| Emotion::ALL[rng.gen_range(0..EMOTION_COUNT)])
            .collect();
        let turn_speakers: Vec<String> = (0..n)
            .map(|_| speakers[rng.gen_range(0..speakers.len())].clone())
            .collect();
        let next_speaker = speakers[rng.gen_range(0..speakers.len())].clone();

        let mut faces: Vec<Vec<f64>> = (0..n - 1)
            .map(|_| normal_vec(&mut rng, spec.face_dim, spec.history_scale))
            .collect();
        let mut audios: Vec<Vec<f64>> = (0..n - 1)
            .map(|_| normal_vec(&mut rng, spec.audio_dim, spec.history_scale))
            .collect();
        let target = Emotion::from_index(label).expect("label in range");
        let (face, audio) = loop {
            let f = normal_vec(&mut rng, spec.face_dim, 1.0);
            let a = normal_vec(&mut rng, spec.audio_dim, 1.0);
            if signal.label(&f, &a) == target && signal.margin(&f, &a) >= spec.margin {
                break (f, a);
            }
        };
        faces.push(face);
        audios.push(audio);

        corpus.push(DialogueRecord {
            utterances,
            faces: Some(faces),
            audios: Some(audios),
            emotions,
            speakers: turn_speakers,
            response: template_response(target, &next_speaker),
            next_speaker,
            response_emotion: Some(target),
        });
    }
    Ok(corpus)
}

/// Draws the label of the last turn the way the generator does.
pub fn planted_label(spec: &SynthSpec, record: &DialogueRecord) -> Option<Emotion> {
    let signal = PlantedSignal::new(spec.face_dim, spec.audio_dim, spec.signal_seed);
    let f = record.faces.as_ref()?.last()?;
    let a = record.audios.as_ref()?.last()?;
    Some(signal.label(f, a))
}

/// Per-class label counts, indexed by emotion.
pub fn label_histogram(corpus: &[DialogueRecord]) -> [usize; EMOTION_COUNT] {
    let mut h = [0; EMOTION_COUNT];
    for d in corpus {
        if let Some(e) = d.response_emotion {
            h[e.index()] += 1;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use alloc::vec;
    use super::*;

    fn record(n: usize) -> DialogueRecord {
        DialogueRecord {
            utterances: vec!["hi there".into(); n],
            faces: None,
            audios: None,
            emotions: vec![Emotion::Neutral; n],
            speakers: vec!["a".into(); n],
            next_speaker: "b".into(),
            response: "ok".into(),
            response_emotion: Some(Emotion::Joy),
        }
    }

    #[test]
    fn tokenize_lowercases_and_is_idempotent() {
        let t = tokenize("  Hello  WORLD\tagain ");
        assert_eq!(t, vec!["hello", "world", "again"]);
        assert_eq!(tokenize(&t.join(" ")), t);
    }

    #[test]
    fn validate_reports_field() {
        let mut r = record(2);
        r.emotions.pop();
        assert!(matches!(
            r.validate(35),
            Err(Error::MalformedRecord { field: "emotions", .. })
        ));
        let mut r = record(2);
        r.faces = Some(vec![vec![0.0; 3]]);
        assert!(matches!(
            r.validate(35),
            Err(Error::MalformedRecord { field: "faces", .. })
        ));
        assert!(record(0).validate(35).is_err());
        assert!(record(4).validate(3).is_err());
        assert!(record(3).validate(3).is_ok());
    }

    #[test]
    fn vocab_threshold_and_order() {
        let mut r = record(1);
        r.utterances = vec!["a a b".into()];
        r.response = "c".into();
        let v = Vocab::build(&[r.clone()], 2);
        assert_eq!(v.words(), &["a".to_string()]);
        assert_eq!(v.id("b"), UNK);
        let v1 = Vocab::build(&[r.clone()], 1);
        assert_eq!(v1.words(), &["a".to_string(), "b".into(), "c".into()]);
        assert_eq!(v1, Vocab::build(&[r], 1));
        assert_eq!((PAD, UNK, BOS, EOS), (0, 1, 2, 3));
    }

    #[test]
    fn roster_maps_unknown_to_row_zero() {
        let mut r = record(3);
        r.speakers = vec!["x".into(), "x".into(), "y".into()];
        let roster = SpeakerRoster::build(&[r], 13, 1).unwrap();
        assert_eq!(roster.capacity(), 13);
        assert_eq!(roster.id("x"), 1);
        assert_eq!(roster.id("nobody"), UNK_SPEAKER);
    }

    #[test]
    fn synthesis_is_deterministic_and_planted() {
        let spec = SynthSpec {
            n_dialogues: 50,
            ..SynthSpec::default()
        };
        let a = synthesize_corpus(&spec).unwrap();
        assert_eq!(a, synthesize_corpus(&spec).unwrap());
        for d in &a {
            d.validate(35).unwrap();
            assert_eq!(planted_label(&spec, d), d.response_emotion);
            assert_eq!(
                d.response,
                template_response(d.response_emotion.unwrap(), &d.next_speaker)
            );
        }
    }

    #[test]
    fn same_text_different_modalities_different_labels() {
        let spec = SynthSpec {
            n_dialogues: 14,
            ..SynthSpec::default()
        };
        let corpus = synthesize_corpus(&spec).unwrap();
        let a = &corpus[0];
        let other = corpus
            .iter()
            .find(|d| d.response_emotion != a.response_emotion)
            .unwrap();
        let mut b = a.clone();
        b.faces = other.faces.clone();
        b.audios = other.audios.clone();
        assert_eq!(a.utterances, b.utterances);
        assert_ne!(planted_label(&spec, a), planted_label(&spec, &b));
    }

    #[test]
    fn labels_close_to_uniform() {
        let spec = SynthSpec {
            n_dialogues: 1000,
            ..SynthSpec::default()
        };
        let h = label_histogram(&synthesize_corpus(&spec).unwrap());
        for c in h {
            let share = c as f64 / 1000.0;
            assert!((share - 1.0 / 7.0).abs() <= 0.1 / 7.0, "{h:?}");
        }
    }
}
