//! Channel-level sparsity masks: the relational-graph reading of an
//! undirected graph becomes a bipartite group constraint, which is then
//! materialized as an out-channel × in-channel boolean mask.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Group-level constraint: `allowed[o][i]` says whether output group `o` may
/// read input group `i`. Always symmetric with a true diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BipartiteConstraint {
    pub n_groups: u32,
    allowed: Vec<bool>,
}

impl BipartiteConstraint {
    pub fn allowed(&self, out_group: u32, in_group: u32) -> bool {
        self.allowed[(out_group * self.n_groups + in_group) as usize]
    }

    pub fn density(&self) -> f64 {
        let t = self.allowed.iter().filter(|&&b| b).count();
        t as f64 / (self.n_groups as f64 * self.n_groups as f64)
    }
}

/// Message passing along edges plus self-transformation: group `o` reads
/// group `i` iff `{o, i}` is an edge or `o = i`.
pub fn relational_bipartite(g: &Graph) -> BipartiteConstraint {
    let n = g.n;
    let mut allowed = vec![false; (n * n) as usize];
    for k in 0..n {
        allowed[(k * n + k) as usize] = true;
    }
    for &(i, j) in &g.edges {
        allowed[(i * n + j) as usize] = true;
        allowed[(j * n + i) as usize] = true;
    }
    BipartiteConstraint { n_groups: n, allowed }
}

/// Boolean out-channel × in-channel constraint for one convolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMask {
    pub out_channels: u32,
    pub in_channels: u32,
    mask: Vec<bool>,
}

impl ChannelMask {
    pub fn all_true(out_channels: u32, in_channels: u32) -> ChannelMask {
        ChannelMask {
            out_channels,
            in_channels,
            mask: vec![true; (out_channels * in_channels) as usize],
        }
    }

    pub fn from_rows(mask: Vec<bool>, out_channels: u32, in_channels: u32) -> Result<ChannelMask> {
        if mask.len() != (out_channels * in_channels) as usize {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} does not match {out_channels}x{in_channels}",
                mask.len()
            )));
        }
        Ok(ChannelMask { out_channels, in_channels, mask })
    }

    pub fn get(&self, out_ch: u32, in_ch: u32) -> bool {
        self.mask[(out_ch * self.in_channels + in_ch) as usize]
    }

    pub fn is_all_true(&self) -> bool {
        self.mask.iter().all(|&b| b)
    }

    /// Maximal runs `[start, end)` of allowed input channels for one output
    /// channel. Kernels iterate these to skip masked-out blocks.
    pub fn in_runs(&self, out_ch: u32) -> Vec<(u32, u32)> {
        let row = &self.mask
            [(out_ch * self.in_channels) as usize..((out_ch + 1) * self.in_channels) as usize];
        let mut runs = Vec::new();
        let mut start = None;
        for (i, &b) in row.iter().enumerate() {
            match (b, start) {
                (true, None) => start = Some(i as u32),
                (false, Some(s)) => {
                    runs.push((s, i as u32));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            runs.push((s, self.in_channels));
        }
        runs
    }
}

/// Fraction of true entries.
pub fn mask_density(m: &ChannelMask) -> f64 {
    let t = m.mask.iter().filter(|&&b| b).count();
    t as f64 / (m.out_channels as f64 * m.in_channels as f64)
}

/// Contiguous near-equal partition of `channels` into `n_groups` groups: the
/// first `channels mod n_groups` groups get the ceiling size.
pub fn group_sizes(channels: u32, n_groups: u32) -> Vec<u32> {
    let base = channels / n_groups;
    let extra = channels % n_groups;
    (0..n_groups).map(|g| if g < extra { base + 1 } else { base }).collect()
}

/// Group index of every channel under the contiguous partition.
pub fn channel_groups(channels: u32, n_groups: u32) -> Vec<u32> {
    let sizes = group_sizes(channels, n_groups);
    let mut out = Vec::with_capacity(channels as usize);
    for (g, &s) in sizes.iter().enumerate() {
        out.extend(std::iter::repeat(g as u32).take(s as usize));
    }
    out
}

/// Materializes the group constraint at given channel counts:
/// `mask[a][b] = allowed[group(a)][group(b)]`.
pub fn build_channel_mask(
    bc: &BipartiteConstraint,
    in_channels: u32,
    out_channels: u32,
) -> Result<ChannelMask> {
    if in_channels < bc.n_groups || out_channels < bc.n_groups {
        return Err(Error::InvalidParameter(format!(
            "channel counts {out_channels}x{in_channels} below group count {}",
            bc.n_groups
        )));
    }
    let out_group = channel_groups(out_channels, bc.n_groups);
    let in_group = channel_groups(in_channels, bc.n_groups);
    let mut mask = Vec::with_capacity((out_channels * in_channels) as usize);
    for a in 0..out_channels {
        for b in 0..in_channels {
            mask.push(bc.allowed(out_group[a as usize], in_group[b as usize]));
        }
    }
    Ok(ChannelMask { out_channels, in_channels, mask })
}

/// Serializes a mask as one `0`/`1` row per output channel.
pub fn write_mask_dump(m: &ChannelMask) -> String {
    let mut out = String::new();
    for o in 0..m.out_channels {
        for i in 0..m.in_channels {
            out.push(if m.get(o, i) { '1' } else { '0' });
        }
        writeln!(out).unwrap();
    }
    out
}

/// Parses the mask dump format produced by [`write_mask_dump`].
pub fn read_mask_dump(text: &str) -> Result<ChannelMask> {
    let mut mask = Vec::new();
    let mut width = None;
    let mut rows = 0u32;
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        match width {
            None => width = Some(line.len() as u32),
            Some(w) if w != line.len() as u32 => {
                return Err(Error::Format(format!("row {} has inconsistent width", idx + 1)));
            }
            _ => {}
        }
        for ch in line.chars() {
            match ch {
                '0' => mask.push(false),
                '1' => mask.push(true),
                other => {
                    return Err(Error::Format(format!(
                        "row {}: unexpected character {other:?}",
                        idx + 1
                    )));
                }
            }
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| Error::Format("empty mask dump".into()))?;
    ChannelMask::from_rows(mask, rows, width)
}
