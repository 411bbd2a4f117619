//! The cell search space: a fixed 4-node DAG whose 6 edges each carry one of
//! 5 operations, giving 5^6 = 15,625 distinct architectures.
//!
//! Edges are kept in a canonical order grouped by target node:
//! `e(0->1), e(0->2), e(1->2), e(0->3), e(1->3), e(2->3)`. The integer
//! architecture index is the little-endian base-5 reading of the op codes in
//! that order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of edges in a cell.
pub const NUM_EDGES: usize = 6;
/// Number of candidate operations per edge.
pub const NUM_OPS: usize = 5;
/// Total number of architectures in the space (5^6).
pub const SPACE_SIZE: u32 = 15_625;

/// Endpoints (source, target) of each edge in canonical order.
pub const EDGE_ENDPOINTS: [(usize, usize); NUM_EDGES] =
    [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

/// The four structural input->output routes through the cell, as lists of
/// canonical edge positions.
pub const ROUTES: [&[usize]; 4] = [&[3], &[0, 4], &[1, 5], &[0, 2, 5]];

/// One of the five edge operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum OpKind {
    /// Identity connection (code 0).
    Skip = 0,
    /// Constant-zero output; severs information flow on its edge (code 1).
    Zeroize = 1,
    /// ReLU -> 3x3 convolution -> batch norm (code 2).
    Conv3x3 = 2,
    /// ReLU -> 1x1 convolution -> batch norm (code 3).
    Conv1x1 = 3,
    /// 3x3 average pooling, stride 1, padding 1 (code 4).
    AvgPool = 4,
}

impl OpKind {
    /// All operations in code order.
    pub const ALL: [OpKind; NUM_OPS] = [
        OpKind::Skip,
        OpKind::Zeroize,
        OpKind::Conv3x3,
        OpKind::Conv1x1,
        OpKind::AvgPool,
    ];

    /// Integer code in `0..5`.
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Operation for a code in `0..5`.
    pub fn from_code(code: u8) -> Result<OpKind, SpaceError> {
        OpKind::ALL
            .get(code as usize)
            .copied()
            .ok_or(SpaceError::InvalidOpCode { code })
    }

    /// Canonical interchange name (`skip_connect`, `none`, ...).
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Skip => "skip_connect",
            OpKind::Zeroize => "none",
            OpKind::Conv3x3 => "nor_conv_3x3",
            OpKind::Conv1x1 => "nor_conv_1x1",
            OpKind::AvgPool => "avg_pool_3x3",
        }
    }

    fn from_name(name: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|op| op.name() == name)
    }

    /// Whether the operation carries trainable parameters.
    pub fn is_learnable(self) -> bool {
        matches!(self, OpKind::Conv3x3 | OpKind::Conv1x1)
    }
}

/// Error type for search-space operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpaceError {
    /// Architecture index outside `0..15625`.
    IndexOutOfRange { index: u32 },
    /// Op code outside `0..5`.
    InvalidOpCode { code: u8 },
    /// Malformed interchange string; `segment` is the offending piece.
    Parse { segment: String, reason: String },
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::IndexOutOfRange { index } => {
                write!(f, "architecture index {index} out of range 0..{SPACE_SIZE}")
            }
            SpaceError::InvalidOpCode { code } => write!(f, "invalid op code {code}, expected 0..5"),
            SpaceError::Parse { segment, reason } => {
                write!(f, "cannot parse segment {segment:?}: {reason}")
            }
        }
    }
}

impl std::error::Error for SpaceError {}

/// Index of an architecture in `0..15625`.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ArchIndex(pub u32);

impl ArchIndex {
    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ArchIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A cell: one operation per canonical edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellEncoding {
    pub ops: [OpKind; NUM_EDGES],
}

impl CellEncoding {
    pub fn new(ops: [OpKind; NUM_EDGES]) -> Self {
        CellEncoding { ops }
    }

    /// Builds an encoding from raw op codes.
    pub fn from_codes(codes: [u8; NUM_EDGES]) -> Result<Self, SpaceError> {
        let mut ops = [OpKind::Skip; NUM_EDGES];
        for (slot, &code) in ops.iter_mut().zip(codes.iter()) {
            *slot = OpKind::from_code(code)?;
        }
        Ok(CellEncoding { ops })
    }

    /// Decodes an architecture index (little-endian base-5, least significant
    /// digit on the first canonical edge).
    pub fn from_index(index: ArchIndex) -> Result<Self, SpaceError> {
        if index.0 >= SPACE_SIZE {
            return Err(SpaceError::IndexOutOfRange { index: index.0 });
        }
        let mut rest = index.0;
        let mut codes = [0u8; NUM_EDGES];
        for slot in codes.iter_mut() {
            *slot = (rest % NUM_OPS as u32) as u8;
            rest /= NUM_OPS as u32;
        }
        Self::from_codes(codes)
    }

    /// Encodes back to the architecture index. Inverse of [`Self::from_index`].
    pub fn to_index(&self) -> ArchIndex {
        let mut index = 0u32;
        for op in self.ops.iter().rev() {
            index = index * NUM_OPS as u32 + u32::from(op.code());
        }
        ArchIndex(index)
    }

    /// Op codes in canonical edge order.
    pub fn codes(&self) -> [u8; NUM_EDGES] {
        let mut codes = [0u8; NUM_EDGES];
        for (slot, op) in codes.iter_mut().zip(self.ops.iter()) {
            *slot = op.code();
        }
        codes
    }

    /// Number of edges carrying `op`.
    pub fn count_op(&self, op: OpKind) -> usize {
        self.ops.iter().filter(|&&o| o == op).count()
    }

    /// Interchange string, e.g.
    /// `|skip_connect~0|+|nor_conv_3x3~0|skip_connect~1|+|...|`.
    ///
    /// Edges are grouped by target node; the `~k` suffix names the source node.
    pub fn to_nb201_string(&self) -> String {
        let op = |edge: usize| self.ops[edge].name();
        format!(
            "|{}~0|+|{}~0|{}~1|+|{}~0|{}~1|{}~2|",
            op(0),
            op(1),
            op(2),
            op(3),
            op(4),
            op(5)
        )
    }

    /// Parses the interchange string form. Inverse of [`Self::to_nb201_string`].
    pub fn from_nb201_string(s: &str) -> Result<Self, SpaceError> {
        let parse_err = |segment: &str, reason: &str| SpaceError::Parse {
            segment: segment.to_string(),
            reason: reason.to_string(),
        };
        let groups: Vec<&str> = s.split('+').collect();
        if groups.len() != 3 {
            return Err(parse_err(s, "expected 3 node groups separated by '+'"));
        }
        let mut ops = Vec::with_capacity(NUM_EDGES);
        for (node, group) in groups.iter().enumerate() {
            let trimmed = group.trim();
            let inner = trimmed
                .strip_prefix('|')
                .and_then(|g| g.strip_suffix('|'))
                .ok_or_else(|| parse_err(trimmed, "group must be delimited by '|'"))?;
            let segments: Vec<&str> = inner.split('|').collect();
            if segments.len() != node + 1 {
                return Err(parse_err(
                    trimmed,
                    &format!("expected {} edge segments for node {}", node + 1, node + 1),
                ));
            }
            for (source, segment) in segments.iter().enumerate() {
                let (name, src) = segment
                    .split_once('~')
                    .ok_or_else(|| parse_err(segment, "expected 'op~source'"))?;
                let op = OpKind::from_name(name)
                    .ok_or_else(|| parse_err(segment, "unknown operation name"))?;
                if src != source.to_string() {
                    return Err(parse_err(segment, &format!("expected source node {source}")));
                }
                ops.push(op);
            }
        }
        let ops: [OpKind; NUM_EDGES] = ops.try_into().expect("6 edges checked above");
        Ok(CellEncoding { ops })
    }
}

impl fmt::Display for CellEncoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes = self.codes();
        write!(
            f,
            "({},{},{},{},{},{})",
            codes[0], codes[1], codes[2], codes[3], codes[4], codes[5]
        )
    }
}

impl FromStr for CellEncoding {
    type Err = SpaceError;

    /// Accepts an architecture index, a `(c,c,c,c,c,c)` tuple, or the
    /// interchange string form.
    fn from_str(s: &str) -> Result<Self, SpaceError> {
        let s = s.trim();
        if let Ok(index) = s.parse::<u32>() {
            return CellEncoding::from_index(ArchIndex(index));
        }
        if s.starts_with('(') && s.ends_with(')') {
            let inner = &s[1..s.len() - 1];
            let mut codes = [0u8; NUM_EDGES];
            let parts: Vec<&str> = inner.split(',').collect();
            if parts.len() != NUM_EDGES {
                return Err(SpaceError::Parse {
                    segment: s.to_string(),
                    reason: format!("expected {NUM_EDGES} comma-separated op codes"),
                });
            }
            for (slot, part) in codes.iter_mut().zip(parts.iter()) {
                *slot = part.trim().parse::<u8>().map_err(|_| SpaceError::Parse {
                    segment: part.trim().to_string(),
                    reason: "not an op code".to_string(),
                })?;
            }
            return CellEncoding::from_codes(codes);
        }
        CellEncoding::from_nb201_string(s)
    }
}

/// Yields every encoding exactly once in ascending index order.
pub fn enumerate_space() -> impl Iterator<Item = CellEncoding> {
    (0..SPACE_SIZE).map(|i| CellEncoding::from_index(ArchIndex(i)).expect("index in range"))
}

/// All encodings matching a partial edge assignment (`None` = free edge).
///
/// Enumeration order is ascending architecture index. A fully-free pattern
/// reproduces [`enumerate_space`].
pub fn enumerate_matching(pattern: [Option<OpKind>; NUM_EDGES]) -> Vec<CellEncoding> {
    enumerate_space()
        .filter(|enc| {
            pattern
                .iter()
                .zip(enc.ops.iter())
                .all(|(want, got)| want.map_or(true, |w| w == *got))
        })
        .collect()
}

/// A labeled edge of the cell graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellEdge {
    pub source: usize,
    pub target: usize,
    pub op: OpKind,
}

/// The cell as an explicit DAG: node 0 is the input, node 3 the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGraph {
    pub edges: [CellEdge; NUM_EDGES],
}

impl CellGraph {
    /// In-degree of a node (number of incoming edges, labels included).
    pub fn in_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.target == node).count()
    }

    /// Out-degree of a node.
    pub fn out_degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.source == node).count()
    }
}

/// Builds the labeled 4-node DAG for an encoding.
pub fn build_cell_graph(enc: &CellEncoding) -> CellGraph {
    let mut edges = [CellEdge {
        source: 0,
        target: 0,
        op: OpKind::Skip,
    }; NUM_EDGES];
    for (i, slot) in edges.iter_mut().enumerate() {
        let (source, target) = EDGE_ENDPOINTS[i];
        *slot = CellEdge {
            source,
            target,
            op: enc.ops[i],
        };
    }
    CellGraph { edges }
}

/// Sequence of operations along one unsevered input->output route.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpPath(pub Vec<OpKind>);

impl OpPath {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for OpPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, op) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", op.code())?;
        }
        write!(f, ")")
    }
}

/// Operation sequences of the structural routes that contain no zeroize edge.
///
/// A zeroize edge outputs a constant zero, so any route through it carries no
/// information and is dropped. Routes are returned in the fixed order
/// `0->3`, `0->1->3`, `0->2->3`, `0->1->2->3`.
pub fn extract_paths(enc: &CellEncoding) -> Vec<OpPath> {
    ROUTES
        .iter()
        .filter_map(|route| {
            let ops: Vec<OpKind> = route.iter().map(|&edge| enc.ops[edge]).collect();
            if ops.iter().any(|&op| op == OpKind::Zeroize) {
                None
            } else {
                Some(OpPath(ops))
            }
        })
        .collect()
}

/// Fixed macro-network shape surrounding the searched cell.
///
/// Three stages of `cells_per_stage` cells separated by two reduction blocks;
/// channel count doubles at each reduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroConfig {
    pub stem_channels: usize,
    pub cells_per_stage: usize,
    pub num_classes: usize,
    /// Side length of the (square) input images.
    pub input_hw: usize,
    pub input_channels: usize,
}

/// Number of stages in the macro-network (fixed by construction).
pub const NUM_STAGES: usize = 3;

impl MacroConfig {
    /// Minutes-scale default: tiny stem, one cell per stage, 16x16 inputs.
    pub fn desk() -> Self {
        MacroConfig {
            stem_channels: 8,
            cells_per_stage: 1,
            num_classes: 10,
            input_hw: 16,
            input_channels: 3,
        }
    }

    /// The full published macro shape: 16 stem channels, 5 cells per stage,
    /// 32x32 RGB inputs.
    pub fn full() -> Self {
        MacroConfig {
            stem_channels: 16,
            cells_per_stage: 5,
            num_classes: 10,
            input_hw: 32,
            input_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stem_channels == 0 {
            return Err("stem_channels must be >= 1".to_string());
        }
        if self.cells_per_stage == 0 {
            return Err("cells_per_stage must be >= 1".to_string());
        }
        if self.num_classes < 2 {
            return Err("num_classes must be >= 2".to_string());
        }
        if self.input_hw < 4 {
            return Err("input_hw must be >= 4 (two stride-2 reductions)".to_string());
        }
        if self.input_channels == 0 {
            return Err("input_channels must be >= 1".to_string());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn space_has_exactly_5_to_the_6_unique_encodings() {
        let all: Vec<CellEncoding> = enumerate_space().collect();
        assert_eq!(all.len(), 15_625);
        let unique: HashSet<_> = all.iter().collect();
        assert_eq!(unique.len(), 15_625);
        assert_eq!(all[0].codes(), [0, 0, 0, 0, 0, 0]);
        assert_eq!(all[15_624].codes(), [4, 4, 4, 4, 4, 4]);
    }

    #[test]
    fn encode_decode_round_trip() {
        for i in (0..SPACE_SIZE).step_by(7) {
            let enc = CellEncoding::from_index(ArchIndex(i)).unwrap();
            assert_eq!(enc.to_index(), ArchIndex(i));
        }
        assert_eq!(
            CellEncoding::from_index(ArchIndex(7)).unwrap().codes(),
            [2, 1, 0, 0, 0, 0],
        );
        assert!(matches!(
            CellEncoding::from_index(ArchIndex(SPACE_SIZE)),
            Err(SpaceError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn nb201_string_round_trip_and_fixed_form() {
        let zero = CellEncoding::from_index(ArchIndex(0)).unwrap();
        assert_eq!(
            zero.to_nb201_string(),
            "|skip_connect~0|+|skip_connect~0|skip_connect~1|+\
             |skip_connect~0|skip_connect~1|skip_connect~2|"
                .replace(" ", "")
        );
        for i in [0u32, 1, 7, 5_000, 15_624] {
            let enc = CellEncoding::from_index(ArchIndex(i)).unwrap();
            let s = enc.to_nb201_string();
            assert_eq!(CellEncoding::from_nb201_string(&s).unwrap(), enc);
        }
    }

    #[test]
    fn nb201_parse_error_names_offending_segment() {
        let bad = "|nor_conv_3x3~0|+|skip_connect~0|skip_cnnect~1|+\
                   |skip_connect~0|skip_connect~1|skip_connect~2|";
        let err = CellEncoding::from_nb201_string(bad).unwrap_err();
        match err {
            SpaceError::Parse { segment, .. } => assert_eq!(segment, "skip_cnnect~1"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn from_str_accepts_all_three_forms() {
        let enc = CellEncoding::from_index(ArchIndex(7)).unwrap();
        assert_eq!("7".parse::<CellEncoding>().unwrap(), enc);
        assert_eq!("(2,1,0,0,0,0)".parse::<CellEncoding>().unwrap(), enc);
        assert_eq!(
            enc.to_nb201_string().parse::<CellEncoding>().unwrap(),
            enc
        );
        assert!("(2,1,0)".parse::<CellEncoding>().is_err());
        assert!("99999".parse::<CellEncoding>().is_err());
    }

    #[test]
    fn graph_has_canonical_degrees() {
        let enc = CellEncoding::from_index(ArchIndex(123)).unwrap();
        let graph = build_cell_graph(&enc);
        assert_eq!(graph.out_degree(0), 3);
        assert_eq!(graph.in_degree(3), 3);
        assert_eq!(graph.in_degree(1), 1);
        assert_eq!(graph.out_degree(1), 2);
        assert_eq!(graph.in_degree(2), 2);
        assert_eq!(graph.out_degree(2), 1);
        for edge in &graph.edges {
            assert!(edge.source < edge.target);
        }
    }

    #[test]
    fn paths_of_uniform_cells() {
        let all_conv = CellEncoding::from_codes([2; 6]).unwrap();
        let paths = extract_paths(&all_conv);
        let mut lengths: Vec<usize> = paths.iter().map(|p| p.len()).collect();
        lengths.sort_unstable();
        assert_eq!(lengths, vec![1, 2, 2, 3]);

        let all_zero = CellEncoding::from_codes([1; 6]).unwrap();
        assert!(extract_paths(&all_zero).is_empty());
    }

    #[test]
    fn zeroize_on_direct_edge_drops_the_length_one_path() {
        // Zeroize only on e(0->3) (canonical position 3).
        let enc = CellEncoding::from_codes([0, 0, 0, 1, 0, 0]).unwrap();
        let paths = extract_paths(&enc);
        assert_eq!(paths.len(), 3);
        assert!(paths.iter().all(|p| p.len() >= 2));
    }

    #[test]
    fn enumerate_matching_fixes_edges() {
        let pattern = [
            None,
            None,
            None,
            Some(OpKind::Conv3x3),
            Some(OpKind::Skip),
            Some(OpKind::AvgPool),
        ];
        let subset = enumerate_matching(pattern);
        assert_eq!(subset.len(), 125);
        for enc in &subset {
            assert_eq!(enc.ops[3], OpKind::Conv3x3);
            assert_eq!(enc.ops[4], OpKind::Skip);
            assert_eq!(enc.ops[5], OpKind::AvgPool);
        }
        let unique: HashSet<_> = subset.iter().map(|e| e.to_index()).collect();
        assert_eq!(unique.len(), 125);
    }

    #[test]
    fn macro_config_validation() {
        assert!(MacroConfig::desk().validate().is_ok());
        assert!(MacroConfig::full().validate().is_ok());
        let mut bad = MacroConfig::desk();
        bad.stem_channels = 0;
        assert!(bad.validate().is_err());
    }
}
