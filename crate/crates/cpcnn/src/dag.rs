//! Compilation of an undirected graph into the directed acyclic computational
//! graph executed by one network block: random unique labels, small-to-large
//! orientation, input/output augmentation, and a deterministic schedule.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::Seed;

/// A graph whose nodes carry a random permutation of the labels `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub base: Graph,
    /// `label[v]` is node v's label; the vector is a permutation of `1..=n`.
    pub label: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Compute,
    Output,
}

impl NodeKind {
    fn as_str(self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Compute => "compute",
            NodeKind::Output => "output",
        }
    }

    fn parse(s: &str) -> Result<NodeKind> {
        match s {
            "input" => Ok(NodeKind::Input),
            "compute" => Ok(NodeKind::Compute),
            "output" => Ok(NodeKind::Output),
            other => Err(Error::Format(format!("unknown node kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockNode {
    pub id: u32,
    pub kind: NodeKind,
    pub label: u32,
}

/// Directed acyclic computational graph for one block. Compute nodes keep
/// their undirected-graph indices `0..n`; the input pseudo-node (stride-2
/// convolution) has id `n` and the output pseudo-node (aggregation only) has
/// id `n+1`. Arcs are sorted by `(src, dst)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGraph {
    pub nodes: Vec<BlockNode>,
    pub arcs: Vec<(u32, u32)>,
}

impl BlockGraph {
    pub fn input_id(&self) -> u32 {
        self.nodes.iter().find(|n| n.kind == NodeKind::Input).unwrap().id
    }

    pub fn output_id(&self) -> u32 {
        self.nodes.iter().find(|n| n.kind == NodeKind::Output).unwrap().id
    }

    pub fn compute_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Compute).count()
    }

    /// Sources of the arcs entering `id`, ascending. The order fixes how a
    /// node's aggregation weights are indexed.
    pub fn predecessors(&self, id: u32) -> Vec<u32> {
        let mut pre: Vec<u32> =
            self.arcs.iter().filter(|&&(_, d)| d == id).map(|&(s, _)| s).collect();
        pre.sort_unstable();
        pre
    }

    /// Structural validation: node ids are `0..len`, exactly one input and
    /// one output, arcs reference known ids, no duplicate arcs.
    pub fn validate(&self) -> Result<()> {
        let len = self.nodes.len() as u32;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i as u32 {
                return Err(Error::Format("node ids must be 0..len in order".into()));
            }
        }
        let inputs = self.nodes.iter().filter(|n| n.kind == NodeKind::Input).count();
        let outputs = self.nodes.iter().filter(|n| n.kind == NodeKind::Output).count();
        if inputs != 1 || outputs != 1 {
            return Err(Error::Format(format!(
                "expected exactly one input and one output node, got {inputs}/{outputs}"
            )));
        }
        for &(s, d) in &self.arcs {
            if s >= len || d >= len || s == d {
                return Err(Error::Format(format!("bad arc ({s}, {d})")));
            }
        }
        let mut sorted = self.arcs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.arcs.len() || sorted != self.arcs {
            return Err(Error::Format("arcs must be sorted and unique".into()));
        }
        // Every node must lie on an input-to-output path: forward reachability
        // from the input and backward reachability from the output each cover
        // the whole node set.
        let mut fwd = vec![Vec::new(); self.nodes.len()];
        let mut rev = vec![Vec::new(); self.nodes.len()];
        for &(s, d) in &self.arcs {
            fwd[s as usize].push(d as usize);
            rev[d as usize].push(s as usize);
        }
        let covers_all = |adj: &[Vec<usize>], start: usize| {
            let mut seen = vec![false; adj.len()];
            let mut stack = vec![start];
            seen[start] = true;
            let mut count = 0usize;
            while let Some(v) = stack.pop() {
                count += 1;
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            count == adj.len()
        };
        if !covers_all(&fwd, self.input_id() as usize) {
            return Err(Error::Format("a node is unreachable from the input".into()));
        }
        if !covers_all(&rev, self.output_id() as usize) {
            return Err(Error::Format("a node cannot reach the output".into()));
        }
        Ok(())
    }
}

/// Assigns each node a unique random label in `1..=n` (uniform permutation).
pub fn assign_labels(g: &Graph, seed: Seed) -> LabeledGraph {
    let mut label: Vec<u32> = (1..=g.n).collect();
    label.shuffle(&mut seed.rng());
    LabeledGraph { base: g.clone(), label }
}

/// Orients every undirected edge from the smaller label to the larger label.
/// Labels are unique, so this embeds the edges in a total order and the
/// result is acyclic.
pub fn orient_edges(lg: &LabeledGraph) -> Vec<(u32, u32)> {
    lg.base
        .edges
        .iter()
        .map(|&(u, v)| if lg.label[u as usize] < lg.label[v as usize] { (u, v) } else { (v, u) })
        .collect()
}

/// Wires the single input and output pseudo-nodes: the input node feeds every
/// original source (in-degree 0) and every original sink (out-degree 0) feeds
/// the output node. Isolated nodes are both, so they get both arcs. The input
/// node takes label 0 and the output node label n+1, which keeps the schedule
/// tie-break total.
pub fn augment_io(lg: &LabeledGraph, directed: &[(u32, u32)]) -> BlockGraph {
    let n = lg.base.n;
    let (input_id, output_id) = (n, n + 1);
    let mut indeg = vec![0u32; n as usize];
    let mut outdeg = vec![0u32; n as usize];
    for &(s, d) in directed {
        outdeg[s as usize] += 1;
        indeg[d as usize] += 1;
    }
    let mut arcs: Vec<(u32, u32)> = directed.to_vec();
    for v in 0..n {
        if indeg[v as usize] == 0 {
            arcs.push((input_id, v));
        }
        if outdeg[v as usize] == 0 {
            arcs.push((v, output_id));
        }
    }
    arcs.sort_unstable();

    let mut nodes: Vec<BlockNode> = (0..n)
        .map(|v| BlockNode { id: v, kind: NodeKind::Compute, label: lg.label[v as usize] })
        .collect();
    nodes.push(BlockNode { id: input_id, kind: NodeKind::Input, label: 0 });
    nodes.push(BlockNode { id: output_id, kind: NodeKind::Output, label: n + 1 });
    BlockGraph { nodes, arcs }
}

/// Deterministic topological order: Kahn's algorithm, always releasing the
/// ready node with the smallest label (then smallest id). Errors if the arc
/// relation has a cycle.
pub fn topo_order(bg: &BlockGraph) -> Result<Vec<u32>> {
    let len = bg.nodes.len();
    let mut indeg = vec![0u32; len];
    let mut succ: Vec<Vec<u32>> = vec![Vec::new(); len];
    for &(s, d) in &bg.arcs {
        indeg[d as usize] += 1;
        succ[s as usize].push(d);
    }
    let mut ready = BinaryHeap::new();
    for node in &bg.nodes {
        if indeg[node.id as usize] == 0 {
            ready.push(Reverse((node.label, node.id)));
        }
    }
    let mut order = Vec::with_capacity(len);
    while let Some(Reverse((_, id))) = ready.pop() {
        order.push(id);
        for &d in &succ[id as usize] {
            indeg[d as usize] -= 1;
            if indeg[d as usize] == 0 {
                ready.push(Reverse((bg.nodes[d as usize].label, d)));
            }
        }
    }
    if order.len() != len {
        return Err(Error::Internal("cycle in block graph".into()));
    }
    Ok(order)
}

/// Full pipeline: label, orient, augment. The result always passes
/// [`topo_order`].
pub fn compile_block(g: &Graph, seed: Seed) -> BlockGraph {
    let lg = assign_labels(g, seed);
    let directed = orient_edges(&lg);
    augment_io(&lg, &directed)
}

/// Serializes a block graph: `node <id> <kind> <label>` lines in id order,
/// then `arc <src> <dst>` lines in sorted order.
pub fn write_block_graph(bg: &BlockGraph) -> String {
    let mut out = String::new();
    for node in &bg.nodes {
        writeln!(out, "node {} {} {}", node.id, node.kind.as_str(), node.label).unwrap();
    }
    for &(s, d) in &bg.arcs {
        writeln!(out, "arc {s} {d}").unwrap();
    }
    out
}

/// Parses the block-graph text format produced by [`write_block_graph`].
pub fn read_block_graph(text: &str) -> Result<BlockGraph> {
    let mut nodes = Vec::new();
    let mut arcs = Vec::new();
    let mut seen_arc = false;
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("node") => {
                if seen_arc {
                    return Err(Error::Format(format!(
                        "line {}: node lines must precede arc lines",
                        idx + 1
                    )));
                }
                let id = parse_u32(parts.next(), "node id")?;
                let kind = NodeKind::parse(
                    parts.next().ok_or_else(|| Error::Format("missing node kind".into()))?,
                )?;
                let label = parse_u32(parts.next(), "node label")?;
                nodes.push(BlockNode { id, kind, label });
            }
            Some("arc") => {
                seen_arc = true;
                let s = parse_u32(parts.next(), "arc source")?;
                let d = parse_u32(parts.next(), "arc target")?;
                arcs.push((s, d));
            }
            other => {
                return Err(Error::Format(format!("line {}: unexpected {other:?}", idx + 1)));
            }
        }
        if parts.next().is_some() {
            return Err(Error::Format(format!("line {}: trailing tokens", idx + 1)));
        }
    }
    let bg = BlockGraph { nodes, arcs };
    bg.validate()?;
    topo_order(&bg)?;
    Ok(bg)
}

fn parse_u32(tok: Option<&str>, what: &str) -> Result<u32> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse::<u32>()
        .map_err(|e| Error::Format(format!("bad {what}: {e}")))
}
