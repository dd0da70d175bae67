//! Heterogeneous dialogue graph construction.
//!
//! Node order is fixed: all utterance nodes, then face, audio and emotion
//! nodes (one of each per utterance), then one node per distinct speaker in
//! order of first appearance. Edges follow eleven rules:
//!
//! | rule | endpoints |
//! |------|-----------|
//! | 1  | two utterances, adjacent or same speaker |
//! | 2  | utterance and its face |
//! | 3  | utterance and its audio |
//! | 4  | utterance and its emotion |
//! | 5  | utterance and its speaker |
//! | 6  | two faces, adjacent or same speaker |
//! | 7  | two audios, adjacent or same speaker |
//! | 8  | face and its speaker |
//! | 9  | audio and its speaker |
//! | 10 | face and emotion of the same utterance |
//! | 11 | audio and emotion of the same utterance |

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::corpus::DialogueRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeType {
    Utterance,
    Face,
    Audio,
    Emotion,
    Speaker,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Utterance,
        NodeType::Face,
        NodeType::Audio,
        NodeType::Emotion,
        NodeType::Speaker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            NodeType::Utterance => 'u',
            NodeType::Face => 'f',
            NodeType::Audio => 'a',
            NodeType::Emotion => 'e',
            NodeType::Speaker => 's',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeType::Utterance => "utterance",
            NodeType::Face => "face",
            NodeType::Audio => "audio",
            NodeType::Emotion => "emotion",
            NodeType::Speaker => "speaker",
        }
    }

    pub fn from_name(s: &str) -> Option<NodeType> {
        Self::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// A small bit set of node types.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NodeTypeSet(u8);

impl NodeTypeSet {
    pub const fn empty() -> Self {
        NodeTypeSet(0)
    }

    pub fn of(types: &[NodeType]) -> Self {
        types.iter().fold(Self::empty(), |s, &t| s.with(t))
    }

    pub fn with(self, t: NodeType) -> Self {
        NodeTypeSet(self.0 | (1 << t.index()))
    }

    pub fn contains(self, t: NodeType) -> bool {
        self.0 & (1 << t.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = NodeType> {
        NodeType::ALL.into_iter().filter(move |&t| self.contains(t))
    }
}

/// Which endpoint's type selects the type-wise adjacency an edge falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskOrientation {
    /// Column mask: `A_t[i, j] = A[i, j]` when node `j` has type `t`.
    Sender,
    /// Row mask: `A_t[i, j] = A[i, j]` when node `i` has type `t`.
    Receiver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphNode {
    pub kind: NodeType,
    /// Utterance index for utterance, face, audio and emotion nodes; index
    /// into [`HeteroGraph::speakers`] for speaker nodes.
    pub source: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphOptions {
    pub self_loops: bool,
    pub exclude: NodeTypeSet,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            self_loops: true,
            exclude: NodeTypeSet::empty(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    nodes: Vec<GraphNode>,
    adjacency: Vec<u8>,
    turns: usize,
    speakers: Vec<String>,
    /// Rules that produced each undirected edge, keyed by `(min, max)` node id.
    rules: BTreeMap<(usize, usize), Vec<u8>>,
    self_loops: bool,
}

impl HeteroGraph {
    /// Builds the graph of a dialogue history. Face and audio nodes exist
    /// only when the record carries those modalities and they are not
    /// excluded.
    pub fn build(dialogue: &DialogueRecord, opts: GraphOptions) -> Result<Self> {
        let n = dialogue.utterances.len();
        if n == 0 {
            return Err(Error::malformed("utterances", "dialogue has no history"));
        }
        for (field, len) in [
            ("emotions", dialogue.emotions.len()),
            ("speakers", dialogue.speakers.len()),
            ("faces", dialogue.faces.as_ref().map_or(n, Vec::len)),
            ("audios", dialogue.audios.as_ref().map_or(n, Vec::len)),
        ] {
            if len != n {
                return Err(Error::malformed(
                    field,
                    alloc::format!("{len} entries for {n} utterances"),
                ));
            }
        }
        if opts.exclude.contains(NodeType::Utterance) {
            return Err(Error::Config("utterance nodes cannot be excluded".into()));
        }

        let present = |t: NodeType| {
            !opts.exclude.contains(t)
                && match t {
                    NodeType::Face => dialogue.faces.is_some(),
                    NodeType::Audio => dialogue.audios.is_some(),
                    _ => true,
                }
        };

        let mut speakers: Vec<String> = Vec::new();
        let mut speaker_of = Vec::with_capacity(n);
        for s in &dialogue.speakers {
            let k = match speakers.iter().position(|x| x == s) {
                Some(k) => k,
                None => {
                    speakers.push(s.clone());
                    speakers.len() - 1
                }
            };
            speaker_of.push(k);
        }

        let mut nodes = Vec::new();
        // first[t] is the id of the first node of type t, if present.
        let mut first = [None; 5];
        for t in [NodeType::Utterance, NodeType::Face, NodeType::Audio, NodeType::Emotion] {
            if present(t) {
                first[t.index()] = Some(nodes.len());
                nodes.extend((0..n).map(|i| GraphNode { kind: t, source: i }));
            }
        }
        if present(NodeType::Speaker) {
            first[NodeType::Speaker.index()] = Some(nodes.len());
            nodes.extend((0..speakers.len()).map(|k| GraphNode {
                kind: NodeType::Speaker,
                source: k,
            }));
        }

        let size = nodes.len();
        let mut g = HeteroGraph {
            nodes,
            adjacency: vec![0; size * size],
            turns: n,
            speakers,
            rules: BTreeMap::new(),
            self_loops: opts.self_loops,
        };
        let id = |t: NodeType, i: usize| first[t.index()].map(|base| base + i);
        let spk = |i: usize| id(NodeType::Speaker, speaker_of[i]);

        for i in 0..n {
            let u = id(NodeType::Utterance, i);
            let f = id(NodeType::Face, i);
            let a = id(NodeType::Audio, i);
            let e = id(NodeType::Emotion, i);
            let s = spk(i);
            g.connect(u, f, 2);
            g.connect(u, a, 3);
            g.connect(u, e, 4);
            g.connect(u, s, 5);
            g.connect(f, s, 8);
            g.connect(a, s, 9);
            g.connect(f, e, 10);
            g.connect(a, e, 11);
            for j in (i + 1)..n {
                if j == i + 1 || speaker_of[i] == speaker_of[j] {
                    g.connect(u, id(NodeType::Utterance, j), 1);
                    g.connect(f, id(NodeType::Face, j), 6);
                    g.connect(a, id(NodeType::Audio, j), 7);
                }
            }
        }
        if opts.self_loops {
            for i in 0..size {
                g.adjacency[i * size + i] = 1;
            }
        }
        Ok(g)
    }

    fn connect(&mut self, a: Option<usize>, b: Option<usize>, rule: u8) {
        let (Some(a), Some(b)) = (a, b) else { return };
        let n = self.nodes.len();
        self.adjacency[a * n + b] = 1;
        self.adjacency[b * n + a] = 1;
        let key = (a.min(b), a.max(b));
        let rules = self.rules.entry(key).or_default();
        if !rules.contains(&rule) {
            rules.push(rule);
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn turns(&self) -> usize {
        self.turns
    }

    /// Distinct speakers of the history, in order of first appearance.
    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn count_of(&self, t: NodeType) -> usize {
        self.nodes.iter().filter(|n| n.kind == t).count()
    }

    #[inline]
    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.nodes.len() + j] == 1
    }

    /// The symmetric 0/1 adjacency, row-major.
    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    /// Undirected non-loop edges `(i, j)` with `i < j` and the rules behind each.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), &[u8])> {
        self.rules.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn edge_count(&self) -> usize {
        self.rules.len()
    }

    /// `A_t` as a 0/1 matrix.
    pub fn type_adjacency(&self, t: NodeType, orientation: MaskOrientation) -> Vec<u8> {
        let n = self.nodes.len();
        let mut out = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                let masked = match orientation {
                    MaskOrientation::Sender => self.nodes[j].kind,
                    MaskOrientation::Receiver => self.nodes[i].kind,
                };
                if masked == t {
                    out[i * n + j] = self.adjacency[i * n + j];
                }
            }
        }
        out
    }

    /// `A_t` as a real matrix, optionally with each non-empty row scaled to sum to one.
    pub fn type_adjacency_tensor(
        &self,
        t: NodeType,
        orientation: MaskOrientation,
        normalize: bool,
    ) -> Tensor {
        to_tensor(&self.type_adjacency(t, orientation), self.nodes.len(), normalize)
    }

    pub fn adjacency_tensor(&self, normalize: bool) -> Tensor {
        to_tensor(&self.adjacency, self.nodes.len(), normalize)
    }

    /// Reorders nodes so that new node `k` is old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::Contract("not a permutation of the node ids".into()));
        }
        let mut inverse = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut adjacency = vec![0; n * n];
        for i in 0..n {
            for j in 0..n {
                adjacency[i * n + j] = self.adjacency[perm[i] * n + perm[j]];
            }
        }
        let rules = self
            .rules
            .iter()
            .map(|(&(a, b), r)| {
                let (x, y) = (inverse[a], inverse[b]);
                ((x.min(y), x.max(y)), r.clone())
            })
            .collect();
        Ok(HeteroGraph {
            nodes: perm.iter().map(|&p| self.nodes[p]).collect(),
            adjacency,
            turns: self.turns,
            speakers: self.speakers.clone(),
            rules,
            self_loops: self.self_loops,
        })
    }

    pub fn node_label(&self, id: usize) -> String {
        let node = self.nodes[id];
        match node.kind {
            NodeType::Speaker => alloc::format!("s[{}]", self.speakers[node.source]),
            k => alloc::format!("{}{}", k.symbol(), node.source + 1),
        }
    }
}

fn to_tensor(grid: &[u8], n: usize, normalize: bool) -> Tensor {
    let mut data: Vec<f64> = grid.iter().map(|&v| f64::from(v)).collect();
    if normalize {
        for row in data.chunks_mut(n) {
            let sum: f64 = row.iter().sum();
            if sum > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
    }
    Tensor::new(n, n, data).expect("non-empty graph")
}

/// Renders a square 0/1 grid, one row per line.
pub struct Grid<'a> {
    pub cells: &'a [u8],
    pub size: usize,
}

impl fmt::Display for Grid<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.size) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    f.write_str(" ")?;
                }
                write!(f, "{v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emotion::Emotion;

    fn dialogue(speakers: &[&str]) -> DialogueRecord {
        let n = speakers.len();
        DialogueRecord {
            utterances: vec!["x".into(); n],
            faces: Some(vec![vec![0.0; 2]; n]),
            audios: Some(vec![vec![0.0; 2]; n]),
            emotions: vec![Emotion::Neutral; n],
            speakers: speakers.iter().map(|s| s.to_string()).collect(),
            next_speaker: "z".into(),
            response: "y".into(),
            response_emotion: Some(Emotion::Joy),
        }
    }

    #[test]
    fn single_turn_has_five_nodes_and_eight_edges() {
        let g = HeteroGraph::build(&dialogue(&["s1"]), GraphOptions::default()).unwrap();
        assert_eq!(g.node_count(), 5);
        assert_eq!(g.edge_count(), 8);
        let mut rules: Vec<u8> = g.edges().flat_map(|(_, r)| r.iter().copied()).collect();
        rules.sort();
        assert_eq!(rules, vec![2, 3, 4, 5, 8, 9, 10, 11]);
    }

    #[test]
    fn speaker_column_of_single_turn() {
        let g = HeteroGraph::build(
            &dialogue(&["s1"]),
            GraphOptions {
                self_loops: false,
                ..GraphOptions::default()
            },
        )
        .unwrap();
        let a = g.type_adjacency(NodeType::Speaker, MaskOrientation::Sender);
        let n = g.node_count();
        let spk = n - 1;
        let column: Vec<u8> = (0..n).map(|i| a[i * n + spk]).collect();
        // utterance, face, audio connect to the speaker; emotion and the speaker itself do not.
        assert_eq!(column, vec![1, 1, 1, 0, 0]);
        assert_eq!(a.iter().map(|&v| v as usize).sum::<usize>(), 3);
    }

    #[test]
    fn repeated_rule_gives_single_binary_edge() {
        let g = HeteroGraph::build(&dialogue(&["s1", "s1"]), GraphOptions::default()).unwrap();
        assert!(g.adjacent(0, 1));
        assert_eq!(g.adjacency()[1], 1);
        let (_, rules) = g.edges().find(|(k, _)| *k == (0, 1)).unwrap();
        assert_eq!(rules, &[1]);
    }

    #[test]
    fn three_turn_pattern() {
        let g = HeteroGraph::build(&dialogue(&["s1", "s2", "s1"]), GraphOptions::default()).unwrap();
        // u: 0..3, f: 3..6, a: 6..9, e: 9..12, s: 12..14
        assert_eq!(g.node_count(), 3 * 3 + 3 + 2);
        assert!(g.adjacent(0, 2));
        assert!(g.adjacent(3, 5));
        assert!(g.adjacent(6, 7));
        assert!(!g.adjacent(9, 10));
    }

    #[test]
    fn empty_type_gives_zero_matrix() {
        let mut d = dialogue(&["s1", "s2"]);
        d.faces = None;
        let g = HeteroGraph::build(&d, GraphOptions::default()).unwrap();
        assert_eq!(g.count_of(NodeType::Face), 0);
        assert!(g
            .type_adjacency(NodeType::Face, MaskOrientation::Sender)
            .iter()
            .all(|&v| v == 0));
    }

    #[test]
    fn length_mismatch_is_malformed() {
        let mut d = dialogue(&["s1", "s2"]);
        d.emotions.pop();
        assert!(matches!(
            HeteroGraph::build(&d, GraphOptions::default()),
            Err(Error::MalformedRecord { field: "emotions", .. })
        ));
    }

    #[test]
    fn excluded_types_drop_nodes_and_rules() {
        let g = HeteroGraph::build(
            &dialogue(&["s1"]),
            GraphOptions {
                self_loops: false,
                exclude: NodeTypeSet::of(&[NodeType::Face, NodeType::Audio]),
            },
        )
        .unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn row_normalization() {
        let g = HeteroGraph::build(&dialogue(&["s1"]), GraphOptions::default()).unwrap();
        let t = g.adjacency_tensor(true);
        for r in 0..t.rows() {
            let s: f64 = t.row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
