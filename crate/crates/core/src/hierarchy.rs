//! Rooted trees and the leaf <-> code bijection.
//!
//! Children are ordered by node name, and node ids are assigned in pre-order
//! over that ordering, so a tree built from the same edges always has the
//! same ids, leaf order, and codes regardless of input line order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::padic::{next_prime_geq, CodecParams, PadicCode};
use crate::rng;

pub type NodeId = usize;

/// Token used in the parent column of the root line.
pub const ROOT_PARENT: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSpec {
    names: Vec<String>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    sibling_index: Vec<u32>,
    depth: Vec<usize>,
    leaves: Vec<NodeId>,
    max_depth: usize,
    max_branching: usize,
    by_name: BTreeMap<String, NodeId>,
}

impl TreeSpec {
    /// Builds a tree from `(child, parent)` pairs, `None` marking the root.
    /// `lines[i]` is the source line number reported in errors.
    fn build(edges: Vec<(String, Option<String>)>, lines: Vec<usize>) -> Result<Self> {
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut root: Option<usize> = None;
        for (i, (child, parent)) in edges.iter().enumerate() {
            if index.insert(child.clone(), i).is_some() {
                return Err(Error::Parse {
                    line: lines[i],
                    message: format!("duplicate child {child:?}"),
                });
            }
            if parent.is_none() {
                if root.is_some() {
                    return Err(Error::Parse {
                        line: lines[i],
                        message: format!("second root {child:?}"),
                    });
                }
                root = Some(i);
            }
        }
        let root = root.ok_or(Error::Parse {
            line: lines.last().copied().unwrap_or(0),
            message: "no root line (\"name\\t-\")".to_string(),
        })?;

        // Children lists in raw edge indices, sorted by name.
        let mut raw_children: Vec<Vec<usize>> = vec![Vec::new(); edges.len()];
        for (i, (child, parent)) in edges.iter().enumerate() {
            if let Some(parent) = parent {
                match index.get(parent) {
                    Some(&pi) => raw_children[pi].push(i),
                    None => {
                        return Err(Error::Parse {
                            line: lines[i],
                            message: format!("{child:?} references undefined parent {parent:?}"),
                        })
                    }
                }
            }
        }
        for list in &mut raw_children {
            list.sort_by(|a, b| edges[*a].0.cmp(&edges[*b].0));
        }

        // Pre-order renumbering; anything not reached sits on a cycle.
        let mut order: Vec<usize> = Vec::with_capacity(edges.len());
        let mut stack = vec![root];
        while let Some(n) = stack.pop() {
            order.push(n);
            for &c in raw_children[n].iter().rev() {
                stack.push(c);
            }
        }
        if order.len() != edges.len() {
            let mut seen = vec![false; edges.len()];
            for &n in &order {
                seen[n] = true;
            }
            let first = (0..edges.len()).find(|&i| !seen[i]).unwrap_or(0);
            return Err(Error::Parse {
                line: lines[first],
                message: format!(
                    "{:?} is not reachable from the root (cycle)",
                    edges[first].0
                ),
            });
        }
        let mut new_id = vec![0usize; edges.len()];
        for (id, &raw) in order.iter().enumerate() {
            new_id[raw] = id;
        }

        let n = edges.len();
        let mut names = Vec::with_capacity(n);
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut sibling_index = vec![0u32; n];
        let mut depth = vec![0usize; n];
        for &raw in &order {
            let id = new_id[raw];
            names.push(edges[raw].0.clone());
            children[id] = raw_children[raw].iter().map(|&c| new_id[c]).collect();
        }
        for id in 0..n {
            for (j, &c) in children[id].clone().iter().enumerate() {
                parent[c] = Some(id);
                sibling_index[c] = j as u32;
                depth[c] = depth[id] + 1;
            }
        }
        let leaves: Vec<NodeId> = (0..n).filter(|&i| children[i].is_empty()).collect();
        let max_depth = leaves.iter().map(|&l| depth[l]).max().unwrap_or(0);
        let max_branching = children.iter().map(Vec::len).max().unwrap_or(0);
        if max_depth == 0 {
            return Err(Error::Parse {
                line: lines[root],
                message: "tree has depth 0; at least one edge is required for encoding".to_string(),
            });
        }
        let by_name = names
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            names,
            parent,
            children,
            sibling_index,
            depth,
            leaves,
            max_depth,
            max_branching,
            by_name,
        })
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: NodeId) -> &str {
        &self.names[id]
    }

    pub fn id(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.parent[id]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id]
    }

    pub fn sibling_index(&self, id: NodeId) -> u32 {
        self.sibling_index[id]
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.depth[id]
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.children[id].is_empty()
    }

    /// Leaves in pre-order (sorted-path) order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn max_branching(&self) -> usize {
        self.max_branching
    }

    /// Root-to-node path, both ends included.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Edge list in the tree file format, pre-order.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for id in 0..self.len() {
            out.push_str(&self.names[id]);
            out.push('\t');
            match self.parent[id] {
                Some(p) => out.push_str(&self.names[p]),
                None => out.push_str(ROOT_PARENT),
            }
            out.push('\n');
        }
        out
    }
}

/// Parses a `child<TAB>parent` edge list. Blank lines and `#` comments are
/// skipped; the root's parent is the literal `-`.
pub fn load_tree(text: &str) -> Result<TreeSpec> {
    let mut edges = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (child, parent) = match (parts.next(), parts.next(), parts.next()) {
            (Some(c), Some(p), None) => (c, p),
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "expected exactly two tab-separated fields".to_string(),
                })
            }
        };
        if child.is_empty() || parent.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty node name".to_string(),
            });
        }
        if child == ROOT_PARENT {
            return Err(Error::Parse {
                line: line_no,
                message: "\"-\" is reserved for the root's parent".to_string(),
            });
        }
        let parent = (parent != ROOT_PARENT).then(|| parent.to_string());
        edges.push((child.to_string(), parent));
        lines.push(line_no);
    }
    if edges.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no edges".to_string(),
        });
    }
    TreeSpec::build(edges, lines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Complete,
    Random,
    /// Like `Random`, but a non-root node stops as a leaf with probability
    /// 1/4, so leaf depths vary.
    Ragged,
}

/// Deterministic test trees. For `Complete` and `Random` every leaf sits at
/// exactly `depth`; `Random` draws between 1 and `branching` children for
/// each internal node.
pub fn gen_synthetic(
    kind: SyntheticKind,
    branching: usize,
    depth: usize,
    seed: u64,
) -> Result<TreeSpec> {
    if branching == 0 || depth == 0 {
        return Err(domain("synthetic trees need branching >= 1 and depth >= 1"));
    }
    let width = format!("{}", branching - 1).len();
    let mut rng = rng::stream(seed, rng::TREE_GEN, 0);
    let mut edges = vec![("n".to_string(), None)];
    let mut frontier = vec![("n".to_string(), 0usize)];
    while let Some((name, d)) = frontier.pop() {
        if d == depth {
            continue;
        }
        let count = match kind {
            SyntheticKind::Complete => branching,
            SyntheticKind::Random => rng.random_range(1..=branching),
            SyntheticKind::Ragged => {
                if d > 0 && rng.random_range(0..4) == 0 {
                    continue;
                }
                rng.random_range(1..=branching)
            }
        };
        for i in 0..count {
            let child = format!("{name}.{i:0width$}");
            edges.push((child.clone(), Some(name.clone())));
            frontier.push((child, d + 1));
        }
    }
    let lines = (1..=edges.len()).collect();
    TreeSpec::build(edges, lines)
}

/// Codec for a tree: smallest prime `>= B_max + 1` (2 for chains), `K = depth`.
pub fn select_prime(tree: &TreeSpec) -> CodecParams {
    let p = next_prime_geq((tree.max_branching() as u64 + 1).max(2)).unwrap_or(2);
    CodecParams {
        p: p as u32,
        k: tree.max_depth(),
    }
}

fn check_codec(tree: &TreeSpec, codec: CodecParams) -> Result<()> {
    if (codec.p as usize) <= tree.max_branching() {
        return Err(domain(format!(
            "p = {} cannot index {} siblings",
            codec.p,
            tree.max_branching()
        )));
    }
    if codec.k < tree.max_depth() {
        return Err(domain(format!(
            "K = {} is shorter than tree depth {}",
            codec.k,
            tree.max_depth()
        )));
    }
    Ok(())
}

/// Sibling indices along the root-to-leaf path, zero padded to `K`.
pub fn encode_leaf(tree: &TreeSpec, leaf: NodeId, codec: CodecParams) -> Result<PadicCode> {
    if leaf >= tree.len() || !tree.is_leaf(leaf) {
        return Err(domain(format!("node {leaf} is not a leaf")));
    }
    check_codec(tree, codec)?;
    let mut digits = vec![0u32; codec.k];
    let path = tree.path_to(leaf);
    for (k, &node) in path.iter().skip(1).enumerate() {
        digits[k] = tree.sibling_index(node);
    }
    PadicCode::new(codec, digits)
}

/// Walks the code from the root. Digits past the reached leaf must be zero.
pub fn decode_code(tree: &TreeSpec, code: &PadicCode) -> Result<Vec<NodeId>> {
    let mut cur = tree.root();
    let mut path = vec![cur];
    for (k, &d) in code.digits().iter().enumerate() {
        if tree.is_leaf(cur) {
            if d != 0 {
                return Err(Error::InvalidPadding { depth: k });
            }
            continue;
        }
        let kids = tree.children(cur);
        cur = *kids.get(d as usize).ok_or(Error::InvalidDigit {
            depth: k,
            digit: d,
            children: kids.len(),
        })?;
        path.push(cur);
    }
    if !tree.is_leaf(cur) {
        return Err(domain("code ends at an internal node"));
    }
    Ok(path)
}

/// Total descent: out-of-range digits are clamped to the last child and
/// digits after a leaf are ignored.
pub fn descend_clamped(tree: &TreeSpec, digits: &[u32]) -> NodeId {
    let mut cur = tree.root();
    for &d in digits {
        let kids = tree.children(cur);
        if kids.is_empty() {
            break;
        }
        cur = kids[(d as usize).min(kids.len() - 1)];
    }
    // A code shorter than the tree depth can stop early; finish leftmost.
    while !tree.is_leaf(cur) {
        cur = tree.children(cur)[0];
    }
    cur
}

/// Depth of the lowest common ancestor, by parent-pointer walk.
pub fn lca_depth(tree: &TreeSpec, a: NodeId, b: NodeId) -> Result<usize> {
    if a >= tree.len() || b >= tree.len() {
        return Err(domain("unknown node"));
    }
    let (mut x, mut y) = (a, b);
    while tree.depth(x) > tree.depth(y) {
        x = tree.parent(x).unwrap_or(x);
    }
    while tree.depth(y) > tree.depth(x) {
        y = tree.parent(y).unwrap_or(y);
    }
    while x != y {
        x = tree.parent(x).unwrap_or(x);
        y = tree.parent(y).unwrap_or(y);
    }
    Ok(tree.depth(x))
}

/// Per depth: child count -> number of internal nodes at that depth.
pub fn branching_stats(tree: &TreeSpec) -> BTreeMap<usize, BTreeMap<usize, usize>> {
    let mut stats: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for id in 0..tree.len() {
        let c = tree.children(id).len();
        if c > 0 {
            *stats
                .entry(tree.depth(id))
                .or_default()
                .entry(c)
                .or_default() += 1;
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub leaf: NodeId,
    pub code: PadicCode,
    pub depth: usize,
}

/// Count table of `(parent digit, child digit)` pairs at one depth.
pub type PairCounts = BTreeMap<(u32, u32), usize>;

/// Every leaf of a tree with its code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    pub codec: CodecParams,
    pub records: Vec<Record>,
    /// Indexed by digit position `k`; entry 0 is always empty.
    pub pair_counts: Vec<PairCounts>,
}

impl EncodedDataset {
    /// Encodes every leaf with the codec chosen by [`select_prime`].
    pub fn encode(tree: &TreeSpec) -> Result<Self> {
        Self::with_codec(tree, select_prime(tree))
    }

    pub fn with_codec(tree: &TreeSpec, codec: CodecParams) -> Result<Self> {
        let records = tree
            .leaves()
            .iter()
            .map(|&leaf| {
                Ok(Record {
                    leaf,
                    code: encode_leaf(tree, leaf, codec)?,
                    depth: tree.depth(leaf),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_records(codec, records))
    }

    pub fn from_records(codec: CodecParams, records: Vec<Record>) -> Self {
        let mut pair_counts = vec![PairCounts::new(); codec.k];
        for r in &records {
            let d = r.code.digits();
            for k in 1..codec.k {
                *pair_counts[k].entry((d[k - 1], d[k])).or_default() += 1;
            }
        }
        Self {
            codec,
            records,
            pair_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `true` when no two records share a code.
    pub fn is_injective(&self) -> bool {
        let mut codes: Vec<&PadicCode> = self.records.iter().map(|r| &r.code).collect();
        codes.sort();
        codes.windows(2).all(|w| w[0] != w[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "R\t-\nA\tR\nB\tR\na1\tA\na2\tA\n";

    fn leaf_names(tree: &TreeSpec) -> Vec<&str> {
        tree.leaves().iter().map(|&i| tree.name(i)).collect()
    }

    fn code_of(tree: &TreeSpec, name: &str, codec: CodecParams) -> Vec<u32> {
        encode_leaf(tree, tree.id(name).unwrap(), codec)
            .unwrap()
            .digits()
            .to_vec()
    }

    #[test]
    fn toy_tree_shape() {
        let t = load_tree(TOY).unwrap();
        assert_eq!(leaf_names(&t), ["a1", "a2", "B"]);
        assert_eq!(t.max_depth(), 2);
        assert_eq!(t.max_branching(), 2);
        assert_eq!(t.len(), 5);
        assert_eq!(t.name(t.root()), "R");
    }

    #[test]
    fn line_order_does_not_matter() {
        let shuffled = "a2\tA\nB\tR\n# comment\n\nR\t-\na1\tA\nA\tR\n";
        assert_eq!(load_tree(TOY).unwrap(), load_tree(shuffled).unwrap());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let root_only = load_tree("R\t-\n").unwrap_err();
        assert!(matches!(root_only, Error::Parse { line: 1, .. }));
        let orphan = load_tree("R\t-\nX\tY\n").unwrap_err();
        assert!(matches!(orphan, Error::Parse { line: 2, .. }));
        let dup = load_tree("R\t-\nA\tR\nA\tR\n").unwrap_err();
        assert!(matches!(dup, Error::Parse { line: 3, .. }));
        let two_roots = load_tree("R\t-\nS\t-\n").unwrap_err();
        assert!(matches!(two_roots, Error::Parse { line: 2, .. }));
        let cycle = load_tree("R\t-\nA\tR\nX\tY\nY\tX\n").unwrap_err();
        assert!(matches!(cycle, Error::Parse { line: 3, .. }));
        let malformed = load_tree("R\t-\nA R\n").unwrap_err();
        assert!(matches!(malformed, Error::Parse { line: 2, .. }));
        assert!(load_tree("A\tR\n").is_err());
    }

    #[test]
    fn synthetic_trees() {
        let t = gen_synthetic(SyntheticKind::Complete, 2, 3, 0).unwrap();
        assert_eq!(t.leaves().len(), 8);
        assert_eq!(t.len(), 15);
        let t = gen_synthetic(SyntheticKind::Complete, 3, 5, 0).unwrap();
        assert_eq!(t.leaves().len(), 243);
        let a = gen_synthetic(SyntheticKind::Random, 4, 3, 42).unwrap();
        let b = gen_synthetic(SyntheticKind::Random, 4, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.leaves().iter().all(|&l| a.depth(l) == 3));
        assert!(gen_synthetic(SyntheticKind::Random, 0, 3, 1).is_err());
    }

    #[test]
    fn prime_selection() {
        let t = load_tree(TOY).unwrap();
        assert_eq!(select_prime(&t), CodecParams { p: 3, k: 2 });
        let chain = load_tree("a\t-\nb\ta\nc\tb\n").unwrap();
        assert_eq!(select_prime(&chain).p, 2);
        let wide: String = core::iter::once("r\t-\n".to_string())
            .chain((0..408).map(|i| format!("c{i:03}\tr\n")))
            .collect();
        assert_eq!(select_prime(&load_tree(&wide).unwrap()).p, 409);
    }

    #[test]
    fn encode_examples() {
        let t = load_tree(TOY).unwrap();
        let codec = select_prime(&t);
        assert_eq!(code_of(&t, "a2", codec), [0, 1]);
        assert_eq!(code_of(&t, "B", codec), [1, 0]);
        assert_eq!(code_of(&t, "a1", codec), [0, 0]);
        assert!(encode_leaf(&t, t.id("A").unwrap(), codec).is_err());
        assert!(encode_leaf(&t, t.id("a1").unwrap(), CodecParams { p: 2, k: 2 }).is_err());
    }

    #[test]
    fn decode_examples() {
        let t = load_tree(TOY).unwrap();
        let codec = select_prime(&t);
        let path = |d: &[u32]| {
            decode_code(&t, &PadicCode::new(codec, d.to_vec()).unwrap())
                .map(|p| p.iter().map(|&i| t.name(i).to_string()).collect::<Vec<_>>())
        };
        assert_eq!(path(&[0, 1]).unwrap(), ["R", "A", "a2"]);
        assert_eq!(path(&[1, 0]).unwrap(), ["R", "B"]);
        assert!(matches!(
            path(&[2, 0]),
            Err(Error::InvalidDigit {
                depth: 0,
                digit: 2,
                children: 2
            })
        ));
        assert!(matches!(
            path(&[1, 1]),
            Err(Error::InvalidPadding { depth: 1 })
        ));
    }

    #[test]
    fn clamped_descent_is_total() {
        let t = load_tree(TOY).unwrap();
        assert_eq!(t.name(descend_clamped(&t, &[2, 0])), "B");
        assert_eq!(t.name(descend_clamped(&t, &[0, 2])), "a2");
        assert_eq!(t.name(descend_clamped(&t, &[1, 2])), "B");
    }

    #[test]
    fn lca_examples() {
        let t = load_tree(TOY).unwrap();
        let id = |n| t.id(n).unwrap();
        assert_eq!(lca_depth(&t, id("a1"), id("a2")).unwrap(), 1);
        assert_eq!(lca_depth(&t, id("a1"), id("B")).unwrap(), 0);
        assert_eq!(lca_depth(&t, id("a1"), id("a1")).unwrap(), 2);
        assert!(lca_depth(&t, 99, 0).is_err());
    }

    #[test]
    fn branching_examples() {
        let complete = gen_synthetic(SyntheticKind::Complete, 3, 2, 0).unwrap();
        let s = branching_stats(&complete);
        assert_eq!(s[&0], BTreeMap::from([(3, 1)]));
        assert_eq!(s[&1], BTreeMap::from([(3, 3)]));
        let chain = load_tree("a\t-\nb\ta\nc\tb\n").unwrap();
        let s = branching_stats(&chain);
        assert_eq!(s[&0], BTreeMap::from([(1, 1)]));
        assert_eq!(s[&1], BTreeMap::from([(1, 1)]));
        let toy = branching_stats(&load_tree(TOY).unwrap());
        assert_eq!(toy[&0], BTreeMap::from([(2, 1)]));
        assert_eq!(toy[&1], BTreeMap::from([(2, 1)]));
    }

    #[test]
    fn dataset_pair_counts() {
        let t = load_tree(TOY).unwrap();
        let ds = EncodedDataset::encode(&t).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.is_injective());
        assert_eq!(ds.pair_counts[1][&(0, 0)], 1);
        assert_eq!(ds.pair_counts[1][&(0, 1)], 1);
        assert_eq!(ds.pair_counts[1][&(1, 0)], 1);
    }

    #[test]
    fn edge_list_round_trip() {
        let t = gen_synthetic(SyntheticKind::Random, 3, 4, 9).unwrap();
        assert_eq!(load_tree(&t.to_edge_list()).unwrap(), t);
    }
}
