//! Central finite-difference verification of every differentiable operation,
//! run at f64 against the tape's analytic gradients.

use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{generate_er_graph, Graph};
use crate::mask::{build_channel_mask, relational_bipartite};
use crate::rng::Seed;
use crate::tensor::{MaskPlan, Tape, Tensor, VarId};

/// Perturbation size for central differences; with f64 values of order one,
/// the truncation error is ~1e-8, far below the 1e-4 pass threshold.
pub const FD_EPS: f64 = 1e-4;

pub const DEFAULT_TRIALS: usize = 20;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub trials: usize,
    pub max_rel_err: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        diff
    } else {
        diff / denom
    }
}

/// Checks one forward closure: analytic gradients from the tape versus
/// central differences of the cotangent-weighted output, over every entry of
/// every leaf. Returns the worst relative error.
fn check_closure<F>(rng: &mut ChaCha8Rng, leaves: &[(Vec<usize>, Vec<f64>)], f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = leaves
        .iter()
        .map(|(shape, data)| {
            tape.leaf(Tensor::new(shape.clone(), data.clone()).unwrap().with_grad())
        })
        .collect();
    let out = f(&mut tape, &ids)?;
    let cot: Vec<f64> =
        (0..tape.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    tape.backward_seeded(out, &cot)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |datas: &[Vec<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = leaves
            .iter()
            .zip(datas)
            .map(|((shape, _), data)| {
                tape.leaf(Tensor::new(shape.clone(), data.clone()).unwrap())
            })
            .collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).iter().zip(&cot).map(|(a, b)| a * b).sum())
    };

    let mut datas: Vec<Vec<f64>> = leaves.iter().map(|(_, d)| d.clone()).collect();
    let mut worst = 0.0f64;
    for li in 0..datas.len() {
        for j in 0..datas[li].len() {
            let orig = datas[li][j];
            datas[li][j] = orig + FD_EPS;
            let fp = eval(&datas)?;
            datas[li][j] = orig - FD_EPS;
            let fm = eval(&datas)?;
            datas[li][j] = orig;
            let numeric = (fp - fm) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[li][j], numeric));
        }
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Uniform values kept away from zero, where the ReLU kink would make the
/// finite difference meaningless.
fn uniform_off_zero(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    uniform(rng, len, -2.0, 2.0)
        .into_iter()
        .map(|v| {
            if v.abs() >= 0.05 {
                v
            } else if v >= 0.0 {
                v + 0.1
            } else {
                v - 0.1
            }
        })
        .collect()
}

fn masked_conv_case(
    rng: &mut ChaCha8Rng,
    trial: usize,
) -> (Vec<(Vec<usize>, Vec<f64>)>, Rc<MaskPlan>, usize) {
    // Trial 0 pins the reference configuration: 2x8x5x5 input, 8 output
    // channels, 4-group identity-pattern mask, stride 1.
    let (n, ci, co, h, w, stride, graph) = if trial == 0 {
        (2usize, 8usize, 8usize, 5usize, 5usize, 1usize, Graph::new(4, 0, vec![]).unwrap())
    } else {
        let groups = [2u32, 4][rng.gen_range(0..2)];
        let mult_i = rng.gen_range(1..3) as usize;
        let mult_o = rng.gen_range(1..3) as usize;
        let g = generate_er_graph(groups, 0.5, Seed(rng.gen())).unwrap();
        (
            rng.gen_range(1..3),
            groups as usize * mult_i,
            groups as usize * mult_o,
            rng.gen_range(3..6),
            rng.gen_range(3..6),
            rng.gen_range(1..3),
            g,
        )
    };
    let mask = build_channel_mask(&relational_bipartite(&graph), ci as u32, co as u32).unwrap();
    let plan = Rc::new(MaskPlan::new(&mask));
    let leaves = vec![
        (vec![n, ci, h, w], uniform(rng, n * ci * h * w, -1.0, 1.0)),
        (vec![co, ci, 3, 3], uniform(rng, co * ci * 9, -1.0, 1.0)),
        (vec![co], uniform(rng, co, -1.0, 1.0)),
    ];
    (leaves, plan, stride)
}

/// Runs the finite-difference suite for every differentiable operation.
pub fn run_full_suite(trials: usize, seed: Seed) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let mut rng = seed.rng();

    let mut worst = 0.0f64;
    for trial in 0..trials {
        let (leaves, plan, stride) = masked_conv_case(&mut rng, trial);
        let plan2 = plan.clone();
        let err = check_closure(&mut rng, &leaves, move |t, ids| {
            t.conv2d(ids[0], ids[1], ids[2], Some(plan2.clone()), stride, 1)
        })?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "conv2d_masked", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(2..4);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(2..5);
        let w = rng.gen_range(2..5);
        let leaves = vec![
            (vec![n, c, h, w], uniform(&mut rng, n * c * h * w, -2.0, 2.0)),
            (vec![c], uniform(&mut rng, c, 0.5, 1.5)),
            (vec![c], uniform(&mut rng, c, -0.5, 0.5)),
        ];
        let err = check_closure(&mut rng, &leaves, |t, ids| {
            t.batch_norm_train(ids[0], ids[1], ids[2]).map(|(id, _)| id)
        })?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "batch_norm_train", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let hw = rng.gen_range(2..5);
        let mean = uniform(&mut rng, c, -0.5, 0.5);
        let var = uniform(&mut rng, c, 0.3, 1.5);
        let leaves = vec![
            (vec![n, c, hw, hw], uniform(&mut rng, n * c * hw * hw, -2.0, 2.0)),
            (vec![c], uniform(&mut rng, c, 0.5, 1.5)),
            (vec![c], uniform(&mut rng, c, -0.5, 0.5)),
        ];
        let err = check_closure(&mut rng, &leaves, move |t, ids| {
            t.batch_norm_eval(ids[0], ids[1], ids[2], &mean, &var)
        })?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "batch_norm_eval", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let len = rng.gen_range(4..40);
        let leaves = vec![(vec![len], uniform_off_zero(&mut rng, len))];
        let err = check_closure(&mut rng, &leaves, |t, ids| Ok(t.relu(ids[0])))?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "relu", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let k = rng.gen_range(1..5);
        let shape = vec![2usize, 3];
        let mut leaves: Vec<(Vec<usize>, Vec<f64>)> =
            (0..k).map(|_| (shape.clone(), uniform(&mut rng, 6, -2.0, 2.0))).collect();
        leaves.push((vec![k], uniform(&mut rng, k, -1.5, 1.5)));
        let err = check_closure(&mut rng, &leaves, move |t, ids| {
            t.weighted_sum(&ids[..k], ids[k])
        })?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "weighted_sum", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(1..3);
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(1..5);
        let w = rng.gen_range(1..5);
        let leaves = vec![(vec![n, c, h, w], uniform(&mut rng, n * c * h * w, -2.0, 2.0))];
        let err = check_closure(&mut rng, &leaves, |t, ids| t.global_avg_pool(ids[0]))?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "global_avg_pool", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(1..4);
        let c = rng.gen_range(1..6);
        let k = rng.gen_range(1..4);
        let leaves = vec![
            (vec![n, c], uniform(&mut rng, n * c, -2.0, 2.0)),
            (vec![k, c], uniform(&mut rng, k * c, -1.0, 1.0)),
            (vec![k], uniform(&mut rng, k, -1.0, 1.0)),
        ];
        let err = check_closure(&mut rng, &leaves, |t, ids| t.linear(ids[0], ids[1], ids[2]))?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "linear", trials, max_rel_err: worst });

    let mut worst = 0.0f64;
    for _ in 0..trials {
        let n = rng.gen_range(1..4);
        let k = rng.gen_range(2..6);
        let labels: Vec<u32> = (0..n).map(|_| rng.gen_range(0..k as u32)).collect();
        let leaves = vec![(vec![n, k], uniform(&mut rng, n * k, -2.0, 2.0))];
        let err = check_closure(&mut rng, &leaves, move |t, ids| {
            t.softmax_cross_entropy(ids[0], &labels)
        })?;
        worst = worst.max(err);
    }
    reports.push(GradCheckReport { op: "softmax_cross_entropy", trials, max_rel_err: worst });

    Ok(reports)
}
