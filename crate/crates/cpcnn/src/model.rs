//! Full network assembly: a two-convolution stem, four blocks that execute
//! the compiled graph with masked node convolutions, and a classification
//! head. All four blocks share one relational graph; each gets its own label
//! permutation.

use std::collections::HashMap;
use std::rc::Rc;

use rand_distr::{Distribution, Normal};

use crate::checkpoint::NamedTensor;
use crate::dag::{compile_block, topo_order, BlockGraph, NodeKind};
use crate::error::{Error, Result};
use crate::graph::{
    generate_cp_graph, generate_er_graph, generate_ws_graph, matched_density_params, CpGraphParams,
    Graph,
};
use crate::mask::{build_channel_mask, relational_bipartite, BipartiteConstraint, ChannelMask};
use crate::rng::{stream, Seed};
use crate::tensor::optim::Parameter;
use crate::tensor::{BnStats, MaskPlan, Tape, Tensor, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFamily {
    Cp,
    Er,
    Ws,
}

impl GraphFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GraphFamily::Cp => "cp",
            GraphFamily::Er => "er",
            GraphFamily::Ws => "ws",
        }
    }

    pub fn parse(s: &str) -> Result<GraphFamily> {
        match s {
            "cp" => Ok(GraphFamily::Cp),
            "er" => Ok(GraphFamily::Er),
            "ws" => Ok(GraphFamily::Ws),
            other => Err(Error::Config(format!("unknown graph family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub family: GraphFamily,
    pub graph_params: CpGraphParams,
    /// Rewiring probability for the Watts–Strogatz family.
    pub ws_rewire: f64,
    pub stem_width: u32,
    pub block_widths: [u32; 4],
    pub num_classes: u32,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            family: GraphFamily::Cp,
            graph_params: CpGraphParams { n: 16, n_c: 8, p_cc: 0.9, p_cp: 0.5, p_pp: 0.1 },
            ws_rewire: 0.25,
            stem_width: 32,
            block_widths: [64, 128, 256, 512],
            num_classes: 10,
            image_size: 32,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.graph_params.validate()?;
        let n = self.graph_params.n;
        if self.stem_width == 0 || self.stem_width % n != 0 {
            return Err(Error::Config(format!(
                "stem width {} must be a positive multiple of the graph size {n}",
                self.stem_width
            )));
        }
        for (k, &w) in self.block_widths.iter().enumerate() {
            if w == 0 || w % n != 0 {
                return Err(Error::Config(format!(
                    "block {k} width {w} must be a positive multiple of the graph size {n}"
                )));
            }
            if k > 0 && w != 2 * self.block_widths[k - 1] {
                return Err(Error::Config(format!(
                    "block {k} width {w} must double block {} width {}",
                    k - 1,
                    self.block_widths[k - 1]
                )));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.image_size < 4 {
            return Err(Error::Config("image size must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.ws_rewire) {
            return Err(Error::Config(format!("ws_rewire {} outside [0,1]", self.ws_rewire)));
        }
        Ok(())
    }

    /// Generates the relational graph for this configuration. ER and WS use
    /// parameters matched to the expected core-periphery edge density.
    pub fn generate_graph(&self) -> Result<Graph> {
        let seed = Seed(self.seed).child(stream::GRAPH);
        match self.family {
            GraphFamily::Cp => generate_cp_graph(&self.graph_params, seed),
            GraphFamily::Er => {
                let (p, _) = matched_density_params(&self.graph_params);
                generate_er_graph(self.graph_params.n, p, seed)
            }
            GraphFamily::Ws => {
                let (_, k) = matched_density_params(&self.graph_params);
                generate_ws_graph(self.graph_params.n, k, self.ws_rewire, seed)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct ConvSpec {
    w: usize,
    b: usize,
    mask: Option<Rc<MaskPlan>>,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone, Copy)]
struct BnSpec {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Debug, Clone)]
struct NodeUnit {
    agg: usize,
    conv: ConvSpec,
    bn: BnSpec,
}

#[derive(Debug)]
struct Block {
    graph: BlockGraph,
    order: Vec<u32>,
    preds: Vec<Vec<u32>>,
    input_conv: ConvSpec,
    input_bn: BnSpec,
    nodes: Vec<Option<NodeUnit>>,
    output_agg: usize,
}

/// Running-statistic update momentum for batch normalization.
const BN_MOMENTUM: f32 = 0.1;

pub struct Model {
    pub cfg: ModelConfig,
    pub graph: Graph,
    pub constraint: BipartiteConstraint,
    pub params: Vec<Parameter<f32>>,
    stem_conv1: ConvSpec,
    stem_bn1: BnSpec,
    stem_conv2: ConvSpec,
    stem_bn2: BnSpec,
    blocks: Vec<Block>,
    head_conv: ConvSpec,
    head_linear_w: usize,
    head_linear_b: usize,
}

/// Builder state: parameter registry plus the per-parameter init stream.
struct Builder {
    params: Vec<Parameter<f32>>,
    seed: Seed,
    masks: HashMap<(u32, u32), Rc<MaskPlan>>,
}

impl Builder {
    fn init_rng(&self) -> rand_chacha::ChaCha8Rng {
        // Each parameter draws from its own child stream, keyed by creation
        // index, so adding parameters never shifts earlier draws.
        self.seed.child(stream::INIT).child(self.params.len() as u64).rng()
    }

    fn push(&mut self, p: Parameter<f32>) -> usize {
        self.params.push(p);
        self.params.len() - 1
    }

    fn mask_for(
        &mut self,
        bc: &BipartiteConstraint,
        in_ch: u32,
        out_ch: u32,
    ) -> Result<(Rc<MaskPlan>, ChannelMask)> {
        let mask = build_channel_mask(bc, in_ch, out_ch)?;
        let plan = self
            .masks
            .entry((in_ch, out_ch))
            .or_insert_with(|| Rc::new(MaskPlan::new(&mask)))
            .clone();
        Ok((plan, mask))
    }

    /// Masked convolution parameters. Weights draw from a normal with
    /// per-output-channel std √(2 / (k²·unmasked_fan_in)); masked-out entries
    /// are zero and excluded from the optimizer's active ranges.
    fn conv(
        &mut self,
        name: &str,
        in_ch: u32,
        out_ch: u32,
        k: usize,
        stride: usize,
        masked: Option<&BipartiteConstraint>,
        padding: usize,
    ) -> Result<ConvSpec> {
        let (ci, co) = (in_ch as usize, out_ch as usize);
        let kk = k * k;
        let mut rng = self.init_rng();
        let (plan, value, active) = match masked {
            Some(bc) => {
                let (plan, mask) = self.mask_for(bc, in_ch, out_ch)?;
                let mut value = vec![0.0f32; co * ci * kk];
                let mut active = Vec::new();
                for o in 0..co {
                    let fan_in = plan.in_count(o).max(1) * kk;
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).unwrap();
                    for i in 0..ci {
                        if !mask.get(o as u32, i as u32) {
                            continue;
                        }
                        for slot in &mut value[(o * ci + i) * kk..(o * ci + i + 1) * kk] {
                            *slot = dist.sample(&mut rng) as f32;
                        }
                    }
                    for &(a, b) in plan.runs_for(o) {
                        active.push(((o * ci + a) * kk, (o * ci + b) * kk));
                    }
                }
                (Some(plan), value, active)
            }
            None => {
                let std = (2.0 / (ci * kk) as f64).sqrt();
                let dist = Normal::new(0.0, std).unwrap();
                let value: Vec<f32> =
                    (0..co * ci * kk).map(|_| dist.sample(&mut rng) as f32).collect();
                (None, value, vec![(0, co * ci * kk)])
            }
        };
        let w = self.push(Parameter::with_active(
            format!("{name}.w"),
            vec![co, ci, k, k],
            value,
            active,
        ));
        let b = self.push(Parameter::dense(format!("{name}.b"), vec![co], vec![0.0; co]));
        Ok(ConvSpec { w, b, mask: plan, stride, padding })
    }

    fn bn(&mut self, name: &str, channels: u32) -> BnSpec {
        let c = channels as usize;
        BnSpec {
            gamma: self.push(Parameter::dense(format!("{name}.gamma"), vec![c], vec![1.0; c])),
            beta: self.push(Parameter::dense(format!("{name}.beta"), vec![c], vec![0.0; c])),
            mean: self.push(Parameter::frozen(
                format!("{name}.running_mean"),
                vec![c],
                vec![0.0; c],
            )),
            var: self.push(Parameter::frozen(
                format!("{name}.running_var"),
                vec![c],
                vec![1.0; c],
            )),
        }
    }

    fn agg(&mut self, name: &str, fan_in: usize) -> usize {
        self.push(Parameter::dense(name.to_string(), vec![fan_in], vec![0.0; fan_in]))
    }

    fn linear(&mut self, name: &str, in_features: u32, out_features: u32) -> (usize, usize) {
        let (c, k) = (in_features as usize, out_features as usize);
        let mut rng = self.init_rng();
        let dist = Normal::new(0.0, (2.0 / c as f64).sqrt()).unwrap();
        let value: Vec<f32> = (0..k * c).map(|_| dist.sample(&mut rng) as f32).collect();
        let w = self.push(Parameter::dense(format!("{name}.w"), vec![k, c], value));
        let b = self.push(Parameter::dense(format!("{name}.b"), vec![k], vec![0.0; k]));
        (w, b)
    }
}

/// Builds the model from a pre-supplied relational graph.
pub fn build_model_with_graph(cfg: &ModelConfig, graph: Graph) -> Result<Model> {
    cfg.validate()?;
    if graph.n != cfg.graph_params.n {
        return Err(Error::Config(format!(
            "graph has {} nodes, config expects {}",
            graph.n, cfg.graph_params.n
        )));
    }
    let constraint = relational_bipartite(&graph);
    let mut b = Builder { params: Vec::new(), seed: Seed(cfg.seed), masks: HashMap::new() };

    let stem_conv1 = b.conv("stem.conv1", 3, cfg.stem_width, 3, 2, None, 1)?;
    let stem_bn1 = b.bn("stem.bn1", cfg.stem_width);
    let stem_conv2 = b.conv("stem.conv2", cfg.stem_width, cfg.stem_width, 3, 2, None, 1)?;
    let stem_bn2 = b.bn("stem.bn2", cfg.stem_width);

    let mut blocks = Vec::with_capacity(4);
    let mut prev_width = cfg.stem_width;
    for (k, &width) in cfg.block_widths.iter().enumerate() {
        let bg = compile_block(&graph, Seed(cfg.seed).child(stream::LABELS).child(k as u64));
        let order = topo_order(&bg)?;
        let preds: Vec<Vec<u32>> =
            (0..bg.nodes.len()).map(|id| bg.predecessors(id as u32)).collect();
        let prefix = format!("block{k}");
        let input_conv =
            b.conv(&format!("{prefix}.input.conv"), prev_width, width, 3, 2, Some(&constraint), 1)?;
        let input_bn = b.bn(&format!("{prefix}.input.bn"), width);
        let mut nodes: Vec<Option<NodeUnit>> = vec![None; bg.nodes.len()];
        let mut output_agg = usize::MAX;
        for node in &bg.nodes {
            match node.kind {
                NodeKind::Compute => {
                    let name = format!("{prefix}.node{:02}", node.id);
                    let agg = b.agg(&format!("{name}.agg"), preds[node.id as usize].len());
                    let conv = b.conv(
                        &format!("{name}.conv"),
                        width,
                        width,
                        3,
                        1,
                        Some(&constraint),
                        1,
                    )?;
                    let bn = b.bn(&format!("{name}.bn"), width);
                    nodes[node.id as usize] = Some(NodeUnit { agg, conv, bn });
                }
                NodeKind::Output => {
                    output_agg = b.agg(
                        &format!("{prefix}.output.agg"),
                        preds[node.id as usize].len(),
                    );
                }
                NodeKind::Input => {}
            }
        }
        blocks.push(Block { graph: bg, order, preds, input_conv, input_bn, nodes, output_agg });
        prev_width = width;
    }

    let head_width = cfg.block_widths[3];
    let head_conv = b.conv("head.conv", head_width, head_width, 1, 1, Some(&constraint), 0)?;
    let (head_linear_w, head_linear_b) = b.linear("head.linear", head_width, cfg.num_classes);

    Ok(Model {
        cfg: cfg.clone(),
        graph,
        constraint,
        params: b.params,
        stem_conv1,
        stem_bn1,
        stem_conv2,
        stem_bn2,
        blocks,
        head_conv,
        head_linear_w,
        head_linear_b,
    })
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    let graph = cfg.generate_graph()?;
    build_model_with_graph(cfg, graph)
}

impl Model {
    pub fn block_graphs(&self) -> Vec<&BlockGraph> {
        self.blocks.iter().map(|b| &b.graph).collect()
    }

    /// Leaves for every parameter the forward pass reads through the tape.
    /// Frozen tensors (running statistics) are consumed as raw slices, not
    /// leaves; their slots stay `None`.
    fn leaves(&self, tape: &mut Tape<f32>, mode: Mode) -> Vec<Option<VarId>> {
        self.params
            .iter()
            .map(|p| {
                if p.active.is_empty() {
                    None
                } else {
                    let mut t = Tensor::new(p.shape.clone(), p.value.clone()).unwrap();
                    t.requires_grad = mode == Mode::Train;
                    Some(tape.leaf(t))
                }
            })
            .collect()
    }

    fn conv(
        &self,
        tape: &mut Tape<f32>,
        vars: &[Option<VarId>],
        spec: &ConvSpec,
        x: VarId,
    ) -> Result<VarId> {
        tape.conv2d(
            x,
            vars[spec.w].unwrap(),
            vars[spec.b].unwrap(),
            spec.mask.clone(),
            spec.stride,
            spec.padding,
        )
    }

    fn bn(
        &self,
        tape: &mut Tape<f32>,
        vars: &[Option<VarId>],
        spec: &BnSpec,
        x: VarId,
        mode: Mode,
        updates: &mut Vec<(BnSpec, BnStats<f32>)>,
    ) -> Result<VarId> {
        let (gamma, beta) = (vars[spec.gamma].unwrap(), vars[spec.beta].unwrap());
        match mode {
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, gamma, beta)?;
                updates.push((*spec, stats));
                Ok(y)
            }
            Mode::Eval => tape.batch_norm_eval(
                x,
                gamma,
                beta,
                &self.params[spec.mean].value,
                &self.params[spec.var].value,
            ),
        }
    }

    #[allow(clippy::type_complexity)]
    fn forward_impl(
        &self,
        tape: &mut Tape<f32>,
        images: VarId,
        mode: Mode,
    ) -> Result<(VarId, Vec<Option<VarId>>, Vec<(BnSpec, BnStats<f32>)>)> {
        let shape = tape.shape(images);
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::ShapeMismatch(format!("expected NCHW rgb images, got {shape:?}")));
        }
        if shape[2] != self.cfg.image_size as usize || shape[3] != self.cfg.image_size as usize {
            return Err(Error::ShapeMismatch(format!(
                "expected {0}x{0} images, got {1}x{2}",
                self.cfg.image_size, shape[2], shape[3]
            )));
        }
        let vars = self.leaves(tape, mode);
        let mut updates = Vec::new();

        let mut x = self.conv(tape, &vars, &self.stem_conv1, images)?;
        x = self.bn(tape, &vars, &self.stem_bn1, x, mode, &mut updates)?;
        x = tape.relu(x);
        x = self.conv(tape, &vars, &self.stem_conv2, x)?;
        x = self.bn(tape, &vars, &self.stem_bn2, x, mode, &mut updates)?;
        x = tape.relu(x);

        for block in &self.blocks {
            let mut outs: Vec<Option<VarId>> = vec![None; block.graph.nodes.len()];
            for &id in &block.order {
                let idx = id as usize;
                match block.graph.nodes[idx].kind {
                    NodeKind::Input => {
                        let y = self.conv(tape, &vars, &block.input_conv, x)?;
                        outs[idx] =
                            Some(self.bn(tape, &vars, &block.input_bn, y, mode, &mut updates)?);
                    }
                    NodeKind::Compute => {
                        let inputs: Vec<VarId> =
                            block.preds[idx].iter().map(|&p| outs[p as usize].unwrap()).collect();
                        let unit = block.nodes[idx].as_ref().unwrap();
                        let agg = tape.weighted_sum(&inputs, vars[unit.agg].unwrap())?;
                        let act = tape.relu(agg);
                        let conv = self.conv(tape, &vars, &unit.conv, act)?;
                        outs[idx] =
                            Some(self.bn(tape, &vars, &unit.bn, conv, mode, &mut updates)?);
                    }
                    NodeKind::Output => {
                        let inputs: Vec<VarId> =
                            block.preds[idx].iter().map(|&p| outs[p as usize].unwrap()).collect();
                        outs[idx] =
                            Some(tape.weighted_sum(&inputs, vars[block.output_agg].unwrap())?);
                    }
                }
            }
            x = outs[block.graph.output_id() as usize].unwrap();
        }

        x = self.conv(tape, &vars, &self.head_conv, x)?;
        let pooled = tape.global_avg_pool(x)?;
        let logits =
            tape.linear(pooled, vars[self.head_linear_w].unwrap(), vars[self.head_linear_b].unwrap())?;
        Ok((logits, vars, updates))
    }

    fn apply_bn_updates(&mut self, updates: Vec<(BnSpec, BnStats<f32>)>) {
        for (spec, stats) in updates {
            let mean = &mut self.params[spec.mean].value;
            for (m, &b) in mean.iter_mut().zip(&stats.mean) {
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * b;
            }
            let var = &mut self.params[spec.var].value;
            for (v, &b) in var.iter_mut().zip(&stats.var) {
                *v = (1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * b;
            }
        }
    }

    /// Train-mode forward: batch statistics normalize, and running statistics
    /// are updated in place with momentum 0.1.
    pub fn forward_train(&mut self, tape: &mut Tape<f32>, images: VarId) -> Result<VarId> {
        let (logits, _, updates) = self.forward_impl(tape, images, Mode::Train)?;
        self.apply_bn_updates(updates);
        Ok(logits)
    }

    /// Eval-mode forward: running statistics normalize, nothing is recorded
    /// for backward, and the model is untouched.
    pub fn forward_eval(&self, tape: &mut Tape<f32>, images: VarId) -> Result<VarId> {
        self.forward_impl(tape, images, Mode::Eval).map(|(logits, _, _)| logits)
    }

    /// One training step: forward, loss, backward; returns the loss value,
    /// the logits, and gradient buffers aligned with `params` (zeros for
    /// frozen tensors, which receive none).
    pub fn loss_and_grads(&mut self, images: Tensor<f32>, labels: &[u32]) -> Result<StepOutput> {
        let mut tape = Tape::new();
        let x = tape.leaf(images);
        let (logits, vars, updates) = self.forward_impl(&mut tape, x, Mode::Train)?;
        self.apply_bn_updates(updates);
        let loss = tape.softmax_cross_entropy(logits, labels)?;
        tape.backward(loss)?;
        let grads = self
            .params
            .iter()
            .zip(&vars)
            .map(|(p, v)| match v {
                Some(id) => {
                    tape.grad(*id).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()])
                }
                None => vec![0.0; p.len()],
            })
            .collect();
        Ok(StepOutput {
            loss: tape.value(loss)[0],
            logits: tape.value(logits).to_vec(),
            grads,
        })
    }

    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.params
            .iter()
            .map(|p| NamedTensor::new(p.name.clone(), p.shape.clone(), p.value.clone()))
            .collect()
    }

    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let by_name: HashMap<&str, &NamedTensor> =
            tensors.iter().map(|t| (t.name.as_str(), t)).collect();
        for p in &mut self.params {
            let t = by_name.get(p.name.as_str()).ok_or_else(|| {
                Error::Format(format!("checkpoint missing tensor {:?}", p.name))
            })?;
            if t.shape != p.shape {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint tensor {:?} has shape {:?}, expected {:?}",
                    p.name, t.shape, p.shape
                )));
            }
            p.value.copy_from_slice(&t.data);
        }
        Ok(())
    }
}

/// Output of one training forward/backward pass.
pub struct StepOutput {
    pub loss: f32,
    pub logits: Vec<f32>,
    pub grads: Vec<Vec<f32>>,
}

fn conv_out(size: u32, k: u32, stride: u32, padding: u32) -> u32 {
    (size + 2 * padding - k) / stride + 1
}

/// Spatial sizes after the stem and after each block.
pub fn stage_spatial_sizes(image_size: u32) -> [u32; 5] {
    let mut s = conv_out(conv_out(image_size, 3, 2, 1), 3, 2, 1);
    let mut out = [0u32; 5];
    out[0] = s;
    for slot in out.iter_mut().skip(1) {
        s = conv_out(s, 3, 2, 1);
        *slot = s;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountReport {
    /// Trainable scalars counting masked-out weight entries as present.
    pub params_dense: u64,
    /// Trainable scalars actually updated by the optimizer.
    pub params_effective: u64,
    /// Multiply-add flops (×2) per image for convolutions and the linear
    /// layer, ignoring padding effects, with masked entries present.
    pub flops_dense: u64,
    /// Same count with masked-out channel pairs absent.
    pub flops_effective: u64,
}

impl Model {
    pub fn count_report(&self) -> CountReport {
        let params_dense: u64 =
            self.params.iter().filter(|p| !p.active.is_empty()).map(|p| p.len() as u64).sum();
        let params_effective: u64 = self.params.iter().map(|p| p.active_len() as u64).sum();

        let mut flops_dense = 0u64;
        let mut flops_effective = 0u64;
        let mut conv_flops = |spec: &ConvSpec, size: u32| {
            let p = &self.params[spec.w];
            let (co, ci, k) = (p.shape[0] as u64, p.shape[1] as u64, p.shape[2] as u64);
            let out = conv_out(size, p.shape[2] as u32, spec.stride as u32, spec.padding as u32);
            let spatial = (out as u64) * (out as u64);
            let dense_pairs = co * ci;
            let eff_pairs = match &spec.mask {
                Some(plan) => (0..co as usize).map(|o| plan.in_count(o) as u64).sum(),
                None => dense_pairs,
            };
            flops_dense += 2 * dense_pairs * k * k * spatial;
            flops_effective += 2 * eff_pairs * k * k * spatial;
            out
        };

        let mut size = self.cfg.image_size;
        size = conv_flops(&self.stem_conv1, size);
        size = conv_flops(&self.stem_conv2, size);
        for block in &self.blocks {
            size = conv_flops(&block.input_conv, size);
            for unit in block.nodes.iter().flatten() {
                conv_flops(&unit.conv, size);
            }
        }
        conv_flops(&self.head_conv, size);
        let lin = &self.params[self.head_linear_w];
        let lin_flops = 2 * (lin.shape[0] * lin.shape[1]) as u64;
        CountReport {
            params_dense,
            params_effective,
            flops_dense: flops_dense + lin_flops,
            flops_effective: flops_effective + lin_flops,
        }
    }
}
