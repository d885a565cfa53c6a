//! Oracles shared by the integration suites. Each is written from the
//! definition it checks, independently of the library's implementation.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Three-color depth-first search over a directed arc list. Returns false
/// exactly when some arc closes a directed cycle.
pub fn dfs_is_acyclic(num_nodes: usize, arcs: &[(u32, u32)]) -> bool {
    let mut adj = vec![Vec::new(); num_nodes];
    for &(u, v) in arcs {
        if (u as usize) >= num_nodes || (v as usize) >= num_nodes {
            return false;
        }
        adj[u as usize].push(v as usize);
    }
    // 0 = unvisited, 1 = on the current stack, 2 = finished.
    let mut color = vec![0u8; num_nodes];
    for start in 0..num_nodes {
        if color[start] != 0 {
            continue;
        }
        // Explicit stack; the second field is the next child index to try.
        let mut stack = vec![(start, 0usize)];
        color[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < adj[node].len() {
                let child = adj[node][*next];
                *next += 1;
                match color[child] {
                    0 => {
                        color[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => return false,
                    _ => {}
                }
            } else {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    true
}

/// Plain quintuple-loop cross-correlation in f64, NCHW input and OIKK
/// weights, with a caller-supplied channel-pair predicate. Padded taps that
/// fall outside the input contribute nothing.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d_f64(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    ci: usize,
    h: usize,
    wd: usize,
    co: usize,
    k: usize,
    stride: usize,
    padding: usize,
    allowed: &dyn Fn(usize, usize) -> bool,
) -> Vec<f64> {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (wd + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for img in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for i in 0..ci {
                        if !allowed(o, i) {
                            continue;
                        }
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((img * ci + i) * h + iy as usize) * wd + ix as usize;
                                let wi = ((o * ci + i) * k + ky) * k + kx;
                                acc += x[xi] * w[wi];
                            }
                        }
                    }
                    out[((img * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn uniform_vec_f32(rng: &mut ChaCha8Rng, len: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let denom = x.abs().max(y.abs()).max(1e-30);
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}
