//! Random graph generators (core-periphery, Erdős–Rényi, Watts–Strogatz)
//! and block-density statistics.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::Seed;

/// Parameters of the core-periphery generator: `n` nodes of which the first
/// `n_c` are core, with per-block wiring probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpGraphParams {
    pub n: u32,
    pub n_c: u32,
    pub p_cc: f64,
    pub p_cp: f64,
    pub p_pp: f64,
}

impl CpGraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("node count must be positive".into()));
        }
        if self.n_c > self.n {
            return Err(Error::InvalidParameter(format!(
                "core count {} exceeds node count {}",
                self.n_c, self.n
            )));
        }
        for (name, p) in [("p_cc", self.p_cc), ("p_cp", self.p_cp), ("p_pp", self.p_pp)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name}={p} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Undirected simple graph. `core` records how many leading node indices are
/// core nodes (0 when the graph has no core/periphery split). Edges are kept
/// sorted with `i < j` and no duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    pub n: u32,
    pub core: u32,
    pub edges: Vec<(u32, u32)>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list, normalizing pair order and
    /// rejecting self-loops, duplicates, and out-of-range endpoints.
    pub fn new(n: u32, core: u32, mut edges: Vec<(u32, u32)>) -> Result<Graph> {
        if core > n {
            return Err(Error::InvalidParameter(format!(
                "core count {core} exceeds node count {n}"
            )));
        }
        for e in edges.iter_mut() {
            if e.0 == e.1 {
                return Err(Error::InvalidParameter(format!("self-loop at node {}", e.0)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({}, {}) endpoint out of range for n={n}",
                    e.0, e.1
                )));
            }
        }
        edges.sort_unstable();
        if edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate edge".into()));
        }
        Ok(Graph { n, core, edges })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: u32, j: u32) -> bool {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).is_ok()
    }

    pub fn degrees(&self) -> Vec<u32> {
        let mut deg = vec![0u32; self.n as usize];
        for &(i, j) in &self.edges {
            deg[i as usize] += 1;
            deg[j as usize] += 1;
        }
        deg
    }
}

/// Realized edge densities of the core-core, core-periphery, and
/// periphery-periphery pair blocks, plus the overall density. A block with no
/// possible pairs reports density 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDensityStats {
    pub d_cc: f64,
    pub d_cp: f64,
    pub d_pp: f64,
    pub overall: f64,
}

fn pairs(n: u64) -> u64 {
    n * n.saturating_sub(1) / 2
}

fn density(count: u64, possible: u64) -> f64 {
    if possible == 0 {
        0.0
    } else {
        count as f64 / possible as f64
    }
}

/// Generates a core-periphery graph. Node indices `[0, n_c)` are core and
/// `[n_c, n)` periphery. Pairs are visited block by block (core-core, then
/// core-periphery, then periphery-periphery), each block drawing from its own
/// child stream of `seed` so the blocks stay statistically independent. A pair
/// becomes an edge iff its uniform draw is below the block probability.
pub fn generate_cp_graph(params: &CpGraphParams, seed: Seed) -> Result<Graph> {
    params.validate()?;
    let (n, n_c) = (params.n, params.n_c);
    let mut edges = Vec::new();

    let mut rng = seed.child(0).rng();
    for i in 0..n_c {
        for j in (i + 1)..n_c {
            if rng.gen::<f64>() < params.p_cc {
                edges.push((i, j));
            }
        }
    }
    let mut rng = seed.child(1).rng();
    for i in 0..n_c {
        for j in n_c..n {
            if rng.gen::<f64>() < params.p_cp {
                edges.push((i, j));
            }
        }
    }
    let mut rng = seed.child(2).rng();
    for i in n_c..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < params.p_pp {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, n_c, edges)
}

/// Generates an Erdős–Rényi graph: every unordered pair is an edge
/// independently with probability `p`.
pub fn generate_er_graph(n: u32, p: f64, seed: Seed) -> Result<Graph> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("p={p} outside [0,1]")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("node count must be positive".into()));
    }
    let mut rng = seed.rng();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, 0, edges)
}

/// Generates a Watts–Strogatz graph: a ring lattice where each node connects
/// to its `k` nearest neighbors, then each lattice edge is rewired with
/// probability `p_rewire` to a uniform non-self, non-duplicate target. The
/// edge count is exactly `n*k/2` for every rewiring probability.
pub fn generate_ws_graph(n: u32, k: u32, p_rewire: f64, seed: Seed) -> Result<Graph> {
    if k % 2 != 0 || k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "neighbor count k={k} must be even and in (0, n={n})"
        )));
    }
    if !(0.0..=1.0).contains(&p_rewire) {
        return Err(Error::InvalidParameter(format!(
            "p_rewire={p_rewire} outside [0,1]"
        )));
    }
    let mut rng = seed.rng();
    let norm = |a: u32, b: u32| if a < b { (a, b) } else { (b, a) };
    let mut present: HashSet<(u32, u32)> = HashSet::new();
    let mut degree = vec![0u32; n as usize];
    for d in 1..=(k / 2) {
        for i in 0..n {
            let j = (i + d) % n;
            present.insert(norm(i, j));
            degree[i as usize] += 1;
            degree[j as usize] += 1;
        }
    }
    // Visit lattice edges in construction order (distance ring by ring); each
    // keeps its source endpoint and may move the far endpoint.
    for d in 1..=(k / 2) {
        for i in 0..n {
            let j = (i + d) % n;
            if rng.gen::<f64>() >= p_rewire {
                continue;
            }
            // A saturated source has no legal new target; the edge stays.
            if degree[i as usize] == n - 1 {
                continue;
            }
            if !present.contains(&norm(i, j)) {
                // Already moved by an earlier rewire of the same pair slot;
                // unreachable because each lattice edge is visited once.
                continue;
            }
            let target = loop {
                let w = rng.gen_range(0..n);
                if w != i && !present.contains(&norm(i, w)) {
                    break w;
                }
            };
            present.remove(&norm(i, j));
            degree[j as usize] -= 1;
            present.insert(norm(i, target));
            degree[target as usize] += 1;
        }
    }
    let edges: Vec<(u32, u32)> = present.into_iter().collect();
    Graph::new(n, 0, edges)
}

/// Counts realized edges per pair block given that nodes `[0, n_c)` are core.
pub fn block_density_stats(g: &Graph, n_c: u32) -> Result<BlockDensityStats> {
    if n_c > g.n {
        return Err(Error::InvalidParameter(format!(
            "core count {n_c} exceeds node count {}",
            g.n
        )));
    }
    let (mut cc, mut cp, mut pp) = (0u64, 0u64, 0u64);
    for &(i, j) in &g.edges {
        match (i < n_c, j < n_c) {
            (true, true) => cc += 1,
            (false, false) => pp += 1,
            _ => cp += 1,
        }
    }
    let n = g.n as u64;
    let c = n_c as u64;
    Ok(BlockDensityStats {
        d_cc: density(cc, pairs(c)),
        d_cp: density(cp, c * (n - c)),
        d_pp: density(pp, pairs(n - c)),
        overall: density(cc + cp + pp, pairs(n)),
    })
}

/// Expected edge density of the core-periphery ensemble, in closed form.
pub fn expected_cp_density(params: &CpGraphParams) -> f64 {
    let n = params.n as f64;
    let c = params.n_c as f64;
    let total = n * (n - 1.0) / 2.0;
    if total == 0.0 {
        return 0.0;
    }
    let cc = c * (c - 1.0) / 2.0;
    let cp = c * (n - c);
    let pp = (n - c) * (n - c - 1.0) / 2.0;
    (cc * params.p_cc + cp * params.p_cp + pp * params.p_pp) / total
}

/// Matches ER and WS parameters to the expected core-periphery edge density:
/// ER gets the density itself, WS the nearest even neighbor count in
/// `[2, n-2]` with the same expected degree.
pub fn matched_density_params(params: &CpGraphParams) -> (f64, u32) {
    let e = expected_cp_density(params);
    let raw = e * (params.n as f64 - 1.0);
    let mut k = ((raw / 2.0).round() as i64) * 2;
    let hi = (params.n as i64 - 2).max(2);
    k = k.clamp(2, hi);
    (e, k as u32)
}

/// Serializes a graph to the text format: `n <count>`, `core <n_c>`, then one
/// `e <i> <j>` line per edge with `i < j` in sorted order.
pub fn write_graph(g: &Graph) -> String {
    let mut out = String::new();
    writeln!(out, "n {}", g.n).unwrap();
    writeln!(out, "core {}", g.core).unwrap();
    for &(i, j) in &g.edges {
        writeln!(out, "e {i} {j}").unwrap();
    }
    out
}

/// Parses the graph text format produced by [`write_graph`].
pub fn read_graph(text: &str) -> Result<Graph> {
    let mut lines = text.lines();
    let n = parse_header(lines.next(), "n")?;
    let core = parse_header(lines.next(), "core")?;
    let mut edges = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        if parts.next() != Some("e") {
            return Err(Error::Format(format!("edge line {}: expected `e <i> <j>`", idx + 3)));
        }
        let i = parse_u32(parts.next(), "edge endpoint")?;
        let j = parse_u32(parts.next(), "edge endpoint")?;
        if parts.next().is_some() {
            return Err(Error::Format(format!("edge line {}: trailing tokens", idx + 3)));
        }
        if i >= j {
            return Err(Error::Format(format!(
                "edge line {}: endpoints must satisfy i < j",
                idx + 3
            )));
        }
        edges.push((i, j));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Format("edges not in sorted order".into()));
    }
    Graph::new(n, core, edges).map_err(|e| Error::Format(e.to_string()))
}

fn parse_header(line: Option<&str>, key: &str) -> Result<u32> {
    let line = line.ok_or_else(|| Error::Format(format!("missing `{key}` line")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Format(format!("expected `{key} <value>`, got {line:?}")));
    }
    let v = parse_u32(parts.next(), key)?;
    if parts.next().is_some() {
        return Err(Error::Format(format!("trailing tokens after `{key}`")));
    }
    Ok(v)
}

fn parse_u32(tok: Option<&str>, what: &str) -> Result<u32> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse::<u32>()
        .map_err(|e| Error::Format(format!("bad {what}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(n: u32, n_c: u32, p_cc: f64, p_cp: f64, p_pp: f64) -> CpGraphParams {
        CpGraphParams { n, n_c, p_cc, p_cp, p_pp }
    }

    #[test]
    fn probability_one_gives_complete_graph() {
        let g = generate_cp_graph(&cp(5, 2, 1.0, 1.0, 1.0), Seed(3)).unwrap();
        assert_eq!(g.edge_count(), 10);
    }

    #[test]
    fn probability_zero_gives_empty_graph() {
        let g = generate_cp_graph(&cp(5, 2, 0.0, 0.0, 0.0), Seed(3)).unwrap();
        assert!(g.edges.is_empty());
    }

    #[test]
    fn deterministic_block_pattern() {
        let g = generate_cp_graph(&cp(4, 2, 1.0, 0.0, 1.0), Seed(99)).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (2, 3)]);
    }

    #[test]
    fn same_seed_same_graph() {
        let p = cp(16, 8, 0.9, 0.5, 0.1);
        let a = generate_cp_graph(&p, Seed(7)).unwrap();
        let b = generate_cp_graph(&p, Seed(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_cp_graph(&p, Seed(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cp_block_densities_track_probabilities() {
        // 3-standard-error binomial bound on the pooled block counts.
        let p = cp(16, 8, 0.9, 0.5, 0.1);
        let trials = 300u64;
        let (mut cc, mut cp_, mut pp) = (0u64, 0u64, 0u64);
        for s in 0..trials {
            let g = generate_cp_graph(&p, Seed(s)).unwrap();
            for &(i, j) in &g.edges {
                match (i < 8, j < 8) {
                    (true, true) => cc += 1,
                    (false, false) => pp += 1,
                    _ => cp_ += 1,
                }
            }
        }
        let check = |count: u64, pairs_per: u64, prob: f64| {
            let total = (trials * pairs_per) as f64;
            let mean = count as f64 / total;
            let se = (prob * (1.0 - prob) / total).sqrt();
            assert!(
                (mean - prob).abs() < 3.0 * se.max(1e-9),
                "pooled density {mean} too far from {prob}"
            );
        };
        check(cc, 28, 0.9);
        check(cp_, 64, 0.5);
        check(pp, 28, 0.1);
    }

    #[test]
    fn er_extremes_and_monte_carlo_mean() {
        assert_eq!(generate_er_graph(16, 1.0, Seed(1)).unwrap().edge_count(), 120);
        assert_eq!(generate_er_graph(16, 0.0, Seed(1)).unwrap().edge_count(), 0);
        let total: usize = (1..=1000)
            .map(|s| generate_er_graph(16, 0.5, Seed(s)).unwrap().edge_count())
            .sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 60.0).abs() < 2.0, "mean edge count {mean}");
    }

    #[test]
    fn ws_ring_lattice_without_rewiring() {
        let g = generate_ws_graph(16, 4, 0.0, Seed(5)).unwrap();
        assert_eq!(g.edge_count(), 32);
        assert!(g.degrees().iter().all(|&d| d == 4));
        assert!(g.has_edge(0, 1) && g.has_edge(0, 15) && g.has_edge(0, 2));
    }

    #[test]
    fn ws_rewiring_conserves_edge_count() {
        for s in 0..100 {
            for &p in &[0.5, 1.0] {
                let g = generate_ws_graph(16, 4, p, Seed(s)).unwrap();
                assert_eq!(g.edge_count(), 32, "p_rewire={p} seed={s}");
            }
        }
    }

    #[test]
    fn ws_rejects_bad_neighbor_counts() {
        assert!(generate_ws_graph(16, 3, 0.1, Seed(0)).is_err());
        assert!(generate_ws_graph(16, 16, 0.1, Seed(0)).is_err());
        assert!(generate_ws_graph(16, 0, 0.1, Seed(0)).is_err());
    }

    #[test]
    fn density_stats_on_known_graphs() {
        let k5 = generate_cp_graph(&cp(5, 2, 1.0, 1.0, 1.0), Seed(0)).unwrap();
        let s = block_density_stats(&k5, 2).unwrap();
        assert_eq!((s.d_cc, s.d_cp, s.d_pp, s.overall), (1.0, 1.0, 1.0, 1.0));

        let empty = Graph::new(5, 2, vec![]).unwrap();
        let s = block_density_stats(&empty, 2).unwrap();
        assert_eq!((s.d_cc, s.d_cp, s.d_pp, s.overall), (0.0, 0.0, 0.0, 0.0));

        let split = Graph::new(4, 2, vec![(0, 1), (2, 3)]).unwrap();
        let s = block_density_stats(&split, 2).unwrap();
        assert_eq!((s.d_cc, s.d_cp, s.d_pp), (1.0, 0.0, 1.0));
    }

    #[test]
    fn matched_params_closed_form() {
        let (er_p, ws_k) = matched_density_params(&cp(16, 8, 0.9, 0.5, 0.1));
        assert!((er_p - 0.5).abs() < 1e-12);
        assert_eq!(ws_k, 8);

        let (er_p, ws_k) = matched_density_params(&cp(16, 8, 1.0, 1.0, 1.0));
        assert_eq!(er_p, 1.0);
        assert_eq!(ws_k, 14);

        let (er_p, ws_k) = matched_density_params(&cp(16, 8, 0.0, 0.0, 0.0));
        assert_eq!(er_p, 0.0);
        assert_eq!(ws_k, 2);
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let g = generate_cp_graph(&cp(16, 8, 0.9, 0.5, 0.1), Seed(11)).unwrap();
        let text = write_graph(&g);
        let back = read_graph(&text).unwrap();
        assert_eq!(g, back);
        assert_eq!(write_graph(&back), text);
    }

    #[test]
    fn read_rejects_malformed_input() {
        assert!(read_graph("").is_err());
        assert!(read_graph("n 4\ncore 2\ne 1 1\n").is_err());
        assert!(read_graph("n 4\ncore 2\ne 3 1\n").is_err());
        assert!(read_graph("n 4\ncore 2\ne 0 9\n").is_err());
        assert!(read_graph("n 4\ncore 5\n").is_err());
        assert!(read_graph("n 4\ncore 2\ne 0 1\ne 0 1\n").is_err());
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(generate_cp_graph(&cp(0, 0, 0.5, 0.5, 0.5), Seed(0)).is_err());
        assert!(generate_cp_graph(&cp(4, 5, 0.5, 0.5, 0.5), Seed(0)).is_err());
        assert!(generate_cp_graph(&cp(4, 2, 1.5, 0.5, 0.5), Seed(0)).is_err());
        assert!(generate_er_graph(4, -0.1, Seed(0)).is_err());
    }
}
