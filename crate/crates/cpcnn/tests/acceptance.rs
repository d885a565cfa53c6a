//! Acceptance gate: one test per shipping criterion, named `criterion_NN_*`
//! so the harness result listing reads as one pass/fail line per criterion.
//! Each test also prints a `criterion NN ... PASS` summary line (visible
//! under `--nocapture`) with the measured quantities.
//!
//! The suite assumes a single test thread per binary (the default on this
//! machine); wall-clock budgets are asserted with `std::time::Instant`.

mod common;

use std::collections::BTreeMap;
use std::rc::Rc;
use std::time::Instant;

use cpcnn::checkpoint::{read_checkpoint, write_checkpoint, NamedTensor};
use cpcnn::dag::{assign_labels, compile_block, orient_edges, read_block_graph, write_block_graph};
use cpcnn::data::{find_cifar10, load_cifar10, synth_dataset, Split};
use cpcnn::graph::{
    block_density_stats, generate_cp_graph, generate_er_graph, generate_ws_graph, read_graph,
    write_graph, CpGraphParams, Graph,
};
use cpcnn::mask::{build_channel_mask, channel_groups, read_mask_dump, relational_bipartite, write_mask_dump, ChannelMask};
use cpcnn::model::{build_model, GraphFamily, ModelConfig};
use cpcnn::tensor::ops::MaskPlan;
use cpcnn::tensor::optim::{lr_schedule, AdamW};
use cpcnn::tensor::{Tape, Tensor, VarId};
use cpcnn::train::{evaluate, seeded_subset, sweep, sweep_aggregate_csv, sweep_csv, Trainer, TrainConfig};
use cpcnn::gradcheck::run_full_suite;
use cpcnn::rng::stream;
use cpcnn::Seed;
use rand::Rng;

fn report(num: u32, name: &str, detail: &str) {
    println!("criterion {num:02} {name}: PASS ({detail})");
}

#[test]
fn criterion_01_generator_block_densities() {
    let t0 = Instant::now();
    let params = CpGraphParams { n: 16, n_c: 8, p_cc: 0.9, p_cp: 0.5, p_pp: 0.1 };
    let mut sums = [0.0f64; 3];
    for seed in 0..1000u64 {
        let g = generate_cp_graph(&params, Seed(seed)).unwrap();
        let s = block_density_stats(&g, params.n_c).unwrap();
        sums[0] += s.d_cc;
        sums[1] += s.d_cp;
        sums[2] += s.d_pp;
    }
    let means = sums.map(|s| s / 1000.0);
    let targets = [0.9, 0.5, 0.1];
    for (mean, target) in means.iter().zip(targets) {
        assert!(
            (mean - target).abs() <= 0.02,
            "mean block density {mean:.4} departs from {target} by more than 0.02"
        );
    }
    assert!(means[0] > means[1] && means[1] > means[2], "density ordering violated: {means:?}");
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 5.0, "generator statistics took {elapsed:.2}s, budget 5s");
    report(
        1,
        "generator block densities",
        &format!("means {:.4}/{:.4}/{:.4} in {elapsed:.2}s", means[0], means[1], means[2]),
    );
}

#[test]
fn criterion_02_orientation_acyclic_all_families() {
    let t0 = Instant::now();
    for trial in 0..10_000u64 {
        let seed = Seed(trial);
        let mut prng = seed.child(0xA11).rng();
        let g = match trial % 3 {
            0 => {
                let n = prng.gen_range(1..=24u32);
                let params = CpGraphParams {
                    n,
                    n_c: prng.gen_range(0..=n),
                    p_cc: prng.gen_range(0.0..=1.0),
                    p_cp: prng.gen_range(0.0..=1.0),
                    p_pp: prng.gen_range(0.0..=1.0),
                };
                generate_cp_graph(&params, seed).unwrap()
            }
            1 => {
                let n = prng.gen_range(1..=24u32);
                generate_er_graph(n, prng.gen_range(0.0..=1.0), seed).unwrap()
            }
            _ => {
                let n = prng.gen_range(3..=24u32);
                let k = 2 * prng.gen_range(1..=(n - 1) / 2);
                generate_ws_graph(n, k, prng.gen_range(0.0..=1.0), seed).unwrap()
            }
        };
        let lg = assign_labels(&g, seed.child(0xB0B));
        let arcs = orient_edges(&lg);
        assert_eq!(arcs.len(), g.edge_count(), "orientation must keep every edge");
        assert!(
            common::dfs_is_acyclic(g.n as usize, &arcs),
            "oriented edges contain a cycle (trial {trial}, n={})",
            g.n
        );
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "acyclicity sweep took {elapsed:.2}s, budget 30s");
    report(2, "edge orientation acyclic", &format!("10000 graphs in {elapsed:.2}s"));
}

/// Drives a masked and an unmasked f64 convolution over the same leaves and
/// returns (masked out, unmasked out, masked grads, unmasked grads).
fn conv_pair(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    mask: Option<Rc<MaskPlan>>,
    stride: usize,
    padding: usize,
) -> (Vec<u64>, Vec<u64>) {
    let mut tape = Tape::new();
    let xi = tape.leaf(x.clone().with_grad());
    let wi = tape.leaf(w.clone().with_grad());
    let bi = tape.leaf(b.clone().with_grad());
    let out = tape.conv2d(xi, wi, bi, mask, stride, padding).unwrap();
    let cotangent: Vec<f64> = (0..tape.value(out).len()).map(|i| ((i % 13) as f64) - 6.0).collect();
    tape.backward_seeded(out, &cotangent).unwrap();
    let out_bits = tape.value(out).iter().map(|v| v.to_bits()).collect();
    let mut grad_bits = Vec::new();
    for id in [xi, wi, bi] {
        grad_bits.extend(tape.grad(id).unwrap().iter().map(|v| v.to_bits()));
    }
    (out_bits, grad_bits)
}

#[test]
fn criterion_03_mask_oracle() {
    // All-true mask: identical bits to the unmasked kernel, forward and
    // backward, across 50 random shapes.
    let mut rng = Seed(0x3A).rng();
    for _ in 0..50 {
        let n = rng.gen_range(1..=3usize);
        let ci = rng.gen_range(1..=10usize);
        let co = rng.gen_range(1..=10usize);
        let k = [1usize, 3, 5][rng.gen_range(0..3usize)];
        let padding = rng.gen_range(0..=k - 1);
        let stride = rng.gen_range(1..=2usize);
        let min_side = k.saturating_sub(2 * padding).max(1);
        let h = rng.gen_range(min_side..=min_side + 6);
        let wd = rng.gen_range(min_side..=min_side + 6);
        let x = Tensor::new(
            vec![n, ci, h, wd],
            common::uniform_vec(&mut rng, n * ci * h * wd, -1.0, 1.0),
        )
        .unwrap();
        let w = Tensor::new(
            vec![co, ci, k, k],
            common::uniform_vec(&mut rng, co * ci * k * k, -1.0, 1.0),
        )
        .unwrap();
        let b = Tensor::new(vec![co], common::uniform_vec(&mut rng, co, -1.0, 1.0)).unwrap();
        let plan = Rc::new(MaskPlan::new(&ChannelMask::all_true(co as u32, ci as u32)));
        let (mo, mg) = conv_pair(&x, &w, &b, Some(plan), stride, padding);
        let (uo, ug) = conv_pair(&x, &w, &b, None, stride, padding);
        assert_eq!(mo, uo, "all-true masked forward differs from unmasked");
        assert_eq!(mg, ug, "all-true masked gradients differ from unmasked");
    }

    // Identity pattern (edgeless relational graph): the masked conv must
    // match independent per-group dense convolutions stitched together.
    let mut worst = 0.0f64;
    for trial in 0..10u64 {
        let mut rng = Seed(0x1D0 + trial).rng();
        let groups = rng.gen_range(1..=5u32);
        let g = Graph::new(groups, 0, Vec::new()).unwrap();
        let constraint = relational_bipartite(&g);
        let ci = rng.gen_range(groups..=2 * groups) as usize;
        let co = rng.gen_range(groups..=2 * groups) as usize;
        let mask = build_channel_mask(&constraint, ci as u32, co as u32).unwrap();
        let n = rng.gen_range(1..=2usize);
        let h = rng.gen_range(5..=9usize);
        let wd = rng.gen_range(5..=9usize);
        let k = 3usize;
        let x = common::uniform_vec(&mut rng, n * ci * h * wd, -1.0, 1.0);
        let w = common::uniform_vec(&mut rng, co * ci * k * k, -1.0, 1.0);
        let b = common::uniform_vec(&mut rng, co, -1.0, 1.0);

        let mut tape: Tape<f64> = Tape::new();
        let xi = tape.leaf(Tensor::new(vec![n, ci, h, wd], x.clone()).unwrap());
        let wi = tape.leaf(Tensor::new(vec![co, ci, k, k], w.clone()).unwrap());
        let bi = tape.leaf(Tensor::new(vec![co], b.clone()).unwrap());
        let plan = Rc::new(MaskPlan::new(&mask));
        let out = tape.conv2d(xi, wi, bi, Some(plan), 1, 1).unwrap();

        // Oracle: one dense convolution per group over that group's channel
        // slices, written back into the group's output rows.
        let in_group = channel_groups(ci as u32, groups);
        let out_group = channel_groups(co as u32, groups);
        let oh = h; // stride 1, padding 1, k 3 preserves the spatial size
        let mut expect = vec![0.0f64; n * co * oh * wd];
        for gidx in 0..groups {
            let ins: Vec<usize> =
                (0..ci).filter(|&i| in_group[i] == gidx).collect();
            let outs: Vec<usize> =
                (0..co).filter(|&o| out_group[o] == gidx).collect();
            let mut xs = Vec::with_capacity(n * ins.len() * h * wd);
            for img in 0..n {
                for &i in &ins {
                    xs.extend_from_slice(&x[(img * ci + i) * h * wd..(img * ci + i + 1) * h * wd]);
                }
            }
            let mut ws = Vec::with_capacity(outs.len() * ins.len() * k * k);
            let mut bs = Vec::with_capacity(outs.len());
            for &o in &outs {
                for &i in &ins {
                    ws.extend_from_slice(&w[((o * ci) + i) * k * k..((o * ci) + i + 1) * k * k]);
                }
                bs.push(b[o]);
            }
            let sub = common::naive_conv2d_f64(
                &xs,
                &ws,
                &bs,
                n,
                ins.len(),
                h,
                wd,
                outs.len(),
                k,
                1,
                1,
                &|_, _| true,
            );
            for img in 0..n {
                for (row, &o) in outs.iter().enumerate() {
                    let src = (img * outs.len() + row) * oh * wd;
                    let dst = (img * co + o) * oh * wd;
                    expect[dst..dst + oh * wd].copy_from_slice(&sub[src..src + oh * wd]);
                }
            }
        }
        let err = common::max_rel_err(tape.value(out), &expect);
        worst = worst.max(err);
        assert!(err <= 1e-12, "identity-mask conv departs from block-conv oracle: {err:.3e}");
    }
    report(3, "mask oracle", &format!("all-true bit-exact on 50 shapes, block oracle err {worst:.2e}"));
}

#[test]
fn criterion_04_gradient_suite() {
    let t0 = Instant::now();
    let reports = run_full_suite(20, Seed(0x6C)).unwrap();
    let mut seen = BTreeMap::new();
    for r in &reports {
        assert!(r.trials >= 20, "{} ran only {} trials", r.op, r.trials);
        assert!(
            r.max_rel_err < 1e-4,
            "{} max relative error {:.3e} exceeds 1e-4",
            r.op,
            r.max_rel_err
        );
        seen.insert(r.op, r.max_rel_err);
    }
    for op in [
        "conv2d_masked",
        "batch_norm_train",
        "batch_norm_eval",
        "relu",
        "weighted_sum",
        "global_avg_pool",
        "linear",
        "softmax_cross_entropy",
    ] {
        assert!(seen.contains_key(op), "gradient suite missing op {op}");
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "gradient suite took {elapsed:.2}s, budget 120s");
    let worst = seen.values().cloned().fold(0.0f64, f64::max);
    report(4, "finite-difference gradients", &format!("{} ops, worst {worst:.2e}, {elapsed:.1}s", seen.len()));
}

#[test]
fn criterion_05_mask_invariance_after_training() {
    let cfg = ModelConfig {
        family: GraphFamily::Cp,
        graph_params: CpGraphParams { n: 4, n_c: 2, p_cc: 0.9, p_cp: 0.5, p_pp: 0.1 },
        ws_rewire: 0.25,
        stem_width: 8,
        block_widths: [8, 16, 32, 64],
        num_classes: 4,
        image_size: 8,
        seed: 11,
    };
    let mut model = build_model(&cfg).unwrap();
    let initial: Vec<Vec<u32>> = model
        .params
        .iter()
        .map(|p| p.value.iter().map(|v| v.to_bits()).collect())
        .collect();
    // Partially active parameters are the masked convolution weights; fully
    // frozen ones are BN running statistics, which legitimately move.
    let masked: Vec<usize> = model
        .params
        .iter()
        .enumerate()
        .filter(|(_, p)| p.active_len() > 0 && p.active_len() < p.len())
        .map(|(i, _)| i)
        .collect();
    assert!(!masked.is_empty(), "model has no masked parameters to check");

    let mut opt = AdamW::new(
        &model.params,
        cpcnn::tensor::optim::AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.05 },
    );
    let mut rng = Seed(0x5E).rng();
    for _ in 0..100 {
        let batch = 8usize;
        let images = Tensor::new(
            vec![batch, 3, 8, 8],
            common::uniform_vec_f32(&mut rng, batch * 3 * 8 * 8, -2.0, 2.0),
        )
        .unwrap();
        let labels: Vec<u32> = (0..batch).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
        let out = model.loss_and_grads(images, &labels).unwrap();
        opt.step(&mut model.params, &out.grads, 1e-3).unwrap();
    }

    let mut checked = 0usize;
    let mut active_changed = false;
    for &i in &masked {
        let p = &model.params[i];
        let mut covered = vec![false; p.len()];
        for &(a, b) in &p.active {
            covered[a..b].iter_mut().for_each(|c| *c = true);
            if p.value[a..b].iter().zip(&initial[i][a..b]).any(|(v, &bits)| v.to_bits() != bits) {
                active_changed = true;
            }
        }
        for (j, &cov) in covered.iter().enumerate() {
            if !cov {
                assert_eq!(
                    p.value[j].to_bits(),
                    initial[i][j],
                    "mask-false entry {j} of {} moved after training",
                    p.name
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 0, "no mask-false entries found");
    assert!(active_changed, "optimizer left even the active entries untouched");
    report(5, "mask invariance over 100 AdamW steps", &format!("{checked} frozen entries bit-stable"));
}

#[test]
fn criterion_06_one_node_model_matches_chain_oracle() {
    let cfg = ModelConfig {
        family: GraphFamily::Cp,
        graph_params: CpGraphParams { n: 1, n_c: 1, p_cc: 1.0, p_cp: 0.0, p_pp: 0.0 },
        ws_rewire: 0.25,
        stem_width: 8,
        block_widths: [8, 16, 32, 64],
        num_classes: 3,
        image_size: 8,
        seed: 21,
    };
    let m = build_model(&cfg).unwrap();
    assert_eq!(m.graph.n, 1);
    for bg in m.block_graphs() {
        assert_eq!(bg.compute_count(), 1, "one-node graph must compile to a single compute node");
    }

    let pidx = |name: &str| {
        m.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    };
    let mut rng = Seed(0xC6).rng();
    for batch_trial in 0..3 {
        let images = Tensor::new(
            vec![2, 3, 8, 8],
            common::uniform_vec_f32(&mut rng, 2 * 3 * 8 * 8, -2.0, 2.0),
        )
        .unwrap();

        let mut tm = Tape::new();
        let xm = tm.leaf(images.clone());
        let logits_model = m.forward_eval(&mut tm, xm).unwrap();

        // Chain oracle: the same parameters wired as a plain sequential CNN,
        // every convolution unmasked.
        let mut tape: Tape<f32> = Tape::new();
        let mut lf = |tape: &mut Tape<f32>, name: &str| -> VarId {
            let p = &m.params[pidx(name)];
            tape.leaf(Tensor::new(p.shape.clone(), p.value.clone()).unwrap())
        };
        let conv = |tape: &mut Tape<f32>,
                    x: VarId,
                    name: &str,
                    stride: usize,
                    padding: usize,
                    lf: &mut dyn FnMut(&mut Tape<f32>, &str) -> VarId| {
            let w = lf(tape, &format!("{name}.w"));
            let b = lf(tape, &format!("{name}.b"));
            tape.conv2d(x, w, b, None, stride, padding).unwrap()
        };
        let bn = |tape: &mut Tape<f32>,
                  x: VarId,
                  name: &str,
                  lf: &mut dyn FnMut(&mut Tape<f32>, &str) -> VarId| {
            let gamma = lf(tape, &format!("{name}.gamma"));
            let beta = lf(tape, &format!("{name}.beta"));
            let mean = &m.params[pidx(&format!("{name}.running_mean"))].value;
            let var = &m.params[pidx(&format!("{name}.running_var"))].value;
            tape.batch_norm_eval(x, gamma, beta, mean, var).unwrap()
        };

        let mut x = tape.leaf(images);
        x = conv(&mut tape, x, "stem.conv1", 2, 1, &mut lf);
        x = bn(&mut tape, x, "stem.bn1", &mut lf);
        x = tape.relu(x);
        x = conv(&mut tape, x, "stem.conv2", 2, 1, &mut lf);
        x = bn(&mut tape, x, "stem.bn2", &mut lf);
        x = tape.relu(x);
        for k in 0..4 {
            x = conv(&mut tape, x, &format!("block{k}.input.conv"), 2, 1, &mut lf);
            x = bn(&mut tape, x, &format!("block{k}.input.bn"), &mut lf);
            let agg = lf(&mut tape, &format!("block{k}.node00.agg"));
            x = tape.weighted_sum(&[x], agg).unwrap();
            x = tape.relu(x);
            x = conv(&mut tape, x, &format!("block{k}.node00.conv"), 1, 1, &mut lf);
            x = bn(&mut tape, x, &format!("block{k}.node00.bn"), &mut lf);
            let out_agg = lf(&mut tape, &format!("block{k}.output.agg"));
            x = tape.weighted_sum(&[x], out_agg).unwrap();
        }
        x = conv(&mut tape, x, "head.conv", 1, 0, &mut lf);
        x = tape.global_avg_pool(x).unwrap();
        let w = lf(&mut tape, "head.linear.w");
        let b = lf(&mut tape, "head.linear.b");
        let logits_chain = tape.linear(x, w, b).unwrap();

        let bits_model: Vec<u32> = tm.value(logits_model).iter().map(|v| v.to_bits()).collect();
        let bits_chain: Vec<u32> =
            tape.value(logits_chain).iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_model, bits_chain, "batch {batch_trial} diverged from chain oracle");
    }
    report(6, "one-node model equals chain oracle", "3 batches bit-exact");
}

fn sanity_cfg() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            family: GraphFamily::Cp,
            graph_params: CpGraphParams { n: 8, n_c: 4, p_cc: 0.9, p_cp: 0.5, p_pp: 0.1 },
            ws_rewire: 0.25,
            stem_width: 16,
            block_widths: [16, 32, 64, 128],
            num_classes: 2,
            image_size: 16,
            seed: 3,
        },
        epochs: 10,
        batch_size: 32,
        base_lr: 2e-3,
        warmup_epochs: 1,
        beta1: 0.9,
        beta2: 0.999,
        weight_decay: 0.05,
        augment: false,
        data_seed: 3,
        train_subset: 0,
        eval_subset: 0,
    }
}

#[test]
fn criterion_07_training_sanity_and_determinism() {
    let t0 = Instant::now();
    let cfg = sanity_cfg();
    let train_set = synth_dataset(256, 2, 16, 0.15, Seed(77)).unwrap();
    let steps = (train_set.len() / cfg.batch_size as usize) * cfg.epochs as usize;
    assert!(steps <= 200, "budget is 200 optimizer steps, configured {steps}");

    let run = |cfg: &TrainConfig| {
        let mut trainer = Trainer::new(cfg.clone()).unwrap();
        let records = trainer.train(&train_set, None).unwrap();
        let acc = evaluate(&trainer.model, &train_set, cfg.batch_size).unwrap();
        let bits: Vec<Vec<u32>> = trainer
            .model
            .params
            .iter()
            .map(|p| p.value.iter().map(|v| v.to_bits()).collect())
            .collect();
        (records, acc, bits)
    };
    let (rec1, acc1, bits1) = run(&cfg);
    let first_elapsed = t0.elapsed().as_secs_f64();
    assert!(
        first_elapsed < 180.0,
        "training run took {first_elapsed:.1}s, budget 180s on one core"
    );
    assert!(acc1 >= 0.95, "train accuracy {acc1:.4} below 0.95 after {steps} steps");

    let (rec2, acc2, bits2) = run(&cfg);
    assert_eq!(rec1.len(), rec2.len());
    for (a, b) in rec1.iter().zip(&rec2) {
        assert!(a.same_outcome(b), "epoch records differ between identical runs");
    }
    assert_eq!(acc1.to_bits(), acc2.to_bits(), "train accuracy differs between identical runs");
    assert_eq!(bits1, bits2, "final parameters differ between identical runs");
    report(
        7,
        "training sanity",
        &format!("{steps} steps, train acc {acc1:.4}, deterministic, first run {first_elapsed:.1}s"),
    );
}

#[test]
fn criterion_08_cifar10_trend_and_core_sweep() {
    let t0 = Instant::now();
    let dir = find_cifar10(None).expect(
        "CIFAR-10 binaries not found; set CPCNN_DATA_DIR to the directory \
         holding cifar-10-batches-bin",
    );
    let train_full = load_cifar10(&dir, Split::Train).unwrap();
    let test_full = load_cifar10(&dir, Split::Test).unwrap();

    let cfg = TrainConfig {
        model: ModelConfig {
            family: GraphFamily::Cp,
            graph_params: CpGraphParams { n: 16, n_c: 8, p_cc: 0.9, p_cp: 0.5, p_pp: 0.1 },
            ws_rewire: 0.25,
            stem_width: 64,
            block_widths: [64, 128, 256, 512],
            num_classes: 10,
            image_size: 32,
            seed: 1,
        },
        epochs: 10,
        batch_size: 16,
        base_lr: 2e-3,
        warmup_epochs: 1,
        beta1: 0.9,
        beta2: 0.999,
        weight_decay: 0.05,
        augment: true,
        data_seed: 1,
        train_subset: 5000,
        eval_subset: 1000,
    };
    // Subsets derive exactly as the command-line loader derives them, so a
    // run of the shipped binary under this configuration reproduces this
    // test's numbers bit for bit.
    let data_seed = Seed(cfg.data_seed);
    let train_5k =
        seeded_subset(&train_full, 5000, data_seed.child(stream::SUBSET).child(0)).unwrap();
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let records = trainer.train(&train_5k, None).unwrap();
    let test_acc = evaluate(&trainer.model, &test_full, cfg.batch_size).unwrap();
    let train_elapsed = t0.elapsed().as_secs_f64();
    assert!(
        test_acc >= 0.50,
        "test accuracy {test_acc:.4} below 0.50 after 10 epochs on 5000 images \
         (final train acc {:.4})",
        records.last().unwrap().train_acc
    );

    // Core-count sweep at quarter widths and a reduced per-cell budget; the
    // pinned quantities above (n=16 at 32x32, 10 epochs, 5000 images) apply
    // to the trend run.
    let mut sweep_cfg = cfg.clone();
    sweep_cfg.model.stem_width = 16;
    sweep_cfg.model.block_widths = [16, 32, 64, 128];
    sweep_cfg.epochs = 3;
    sweep_cfg.warmup_epochs = 1;
    sweep_cfg.augment = false;
    let sweep_train = seeded_subset(&train_5k, 2000, Seed(2).child(0x5B)).unwrap();
    let sweep_eval = seeded_subset(&test_full, 1000, Seed(3).child(0x5B)).unwrap();
    let cells = sweep(
        &sweep_cfg,
        &[GraphFamily::Cp],
        &[2, 8, 14],
        &[1, 2, 3],
        &sweep_train,
        &sweep_eval,
        |_| {},
    )
    .unwrap();
    assert_eq!(cells.len(), 9, "expected 3 core counts x 3 seeds");

    let out_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-sweep");
    std::fs::create_dir_all(&out_dir).unwrap();
    let cells_csv = sweep_csv(&cells);
    let agg = cpcnn::train::aggregate_sweep(&cells);
    let agg_csv = sweep_aggregate_csv(&agg);
    std::fs::write(out_dir.join("cells.csv"), &cells_csv).unwrap();
    std::fs::write(out_dir.join("aggregate.csv"), &agg_csv).unwrap();
    assert_eq!(cells_csv.lines().count(), 10, "cells csv must hold a header plus 9 rows");
    assert_eq!(agg.len(), 3);

    // The accuracy ordering across core counts is reported, not asserted.
    let ordering: Vec<String> = agg
        .iter()
        .map(|a| format!("C={} mean_acc={:.4}", a.core_count, a.mean_eval_acc))
        .collect();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 7200.0, "criterion took {elapsed:.0}s, budget 7200s");
    report(
        8,
        "desk-scale CIFAR-10 trend",
        &format!(
            "test acc {test_acc:.4} in {train_elapsed:.0}s; sweep [{}] in {elapsed:.0}s total; csv at {}",
            ordering.join(", "),
            out_dir.display()
        ),
    );
}

#[test]
fn criterion_09_schedule_anchor_points() {
    let base = 1e-4;
    let total = 5000u64;
    let warmup = 500u64;
    let at = |step: u64| lr_schedule(step, total, warmup, base).unwrap();
    assert_eq!(at(0), 0.0, "lr at step 0 must be exactly zero");
    assert_eq!(at(warmup), base, "lr at warmup end must equal the base exactly");
    assert_eq!(at(total), 0.0, "lr at the final step must be exactly zero");
    let midpoint = (warmup + total) / 2;
    assert_eq!(at(midpoint), base / 2.0, "cosine midpoint must be exactly half the base");
    assert_eq!(base / 2.0, 5e-5);
    report(9, "schedule anchors", "0, 1e-4, 5e-5, 0 all exact");
}

#[test]
fn criterion_10_formats_roundtrip() {
    let mut rng = Seed(0x10).rng();
    for trial in 0..100u64 {
        // Graph text format.
        let n = rng.gen_range(1..=32u32);
        let core = rng.gen_range(0..=n);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen_bool(0.3) {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(n, core, edges).unwrap();
        let text = write_graph(&g);
        let back = read_graph(&text).unwrap();
        assert_eq!(back, g, "graph round-trip changed the graph (trial {trial})");
        assert_eq!(write_graph(&back), text, "graph serialization unstable");

        // Compiled block graph format.
        let bg = compile_block(&g, Seed(trial).child(2));
        let text = write_block_graph(&bg);
        let back = read_block_graph(&text).unwrap();
        assert_eq!(back, bg, "block graph round-trip changed the DAG");
        assert_eq!(write_block_graph(&back), text);

        // Mask dump format.
        let constraint = relational_bipartite(&g);
        let ci = rng.gen_range(n..=4 * n);
        let co = rng.gen_range(n..=4 * n);
        let mask = build_channel_mask(&constraint, ci, co).unwrap();
        let text = write_mask_dump(&mask);
        let back = read_mask_dump(&text).unwrap();
        assert_eq!(back, mask, "mask dump round-trip changed the mask");
        assert_eq!(write_mask_dump(&back), text);

        // Checkpoint container, including non-finite and signed-zero bit
        // patterns, compared bit for bit.
        let count = rng.gen_range(1..=4usize);
        let tensors: Vec<NamedTensor> = (0..count)
            .map(|i| {
                let rows = rng.gen_range(1..=5usize);
                let cols = rng.gen_range(1..=5usize);
                let data: Vec<f32> =
                    (0..rows * cols).map(|_| f32::from_bits(rng.gen::<u32>())).collect();
                NamedTensor::new(format!("t{trial}.{i}"), vec![rows, cols], data)
            })
            .collect();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tensors).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), tensors.len());
        for (a, b) in tensors.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "checkpoint payload bits changed");
        }
    }
    report(10, "format round-trips", "graph, block graph, mask, checkpoint x100");
}
