//! Training harness: optimization loop with per-epoch records, deterministic
//! resume from checkpoints, evaluation, and the graph-family sweep.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::prelude::SliceRandom;
use rand::Rng;

use crate::checkpoint::{load_checkpoint, save_checkpoint, NamedTensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::block_density_stats;
use crate::model::{build_model, GraphFamily, Model, ModelConfig};
use crate::rng::{stream, Seed};
use crate::tensor::optim::{lr_schedule, AdamW, AdamWConfig};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: u32,
    pub batch_size: u32,
    pub base_lr: f64,
    pub warmup_epochs: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Random horizontal flips on training batches.
    pub augment: bool,
    /// Seed for data order, augmentation, and subset selection. The model
    /// seed governs graph sampling and initialization independently.
    pub data_seed: u64,
    /// When positive, train on a seeded random subset of this many images.
    pub train_subset: u32,
    /// When positive, evaluate on a seeded random subset of this many images.
    pub eval_subset: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 10,
            batch_size: 128,
            base_lr: 1e-3,
            warmup_epochs: 5,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.05,
            augment: true,
            data_seed: 0,
            train_subset: 0,
            eval_subset: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup epochs {} must be below total epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base learning rate {} must be positive", self.base_lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name}={b} outside [0,1)")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// One completed epoch. `wall_s` is measured time and is excluded from the
/// determinism contract; every other field is seed-determined.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: u32,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    /// Learning rate used at the last step of the epoch.
    pub lr: f64,
    pub wall_s: f64,
}

impl EpochRecord {
    /// Equality on the seed-determined fields, ignoring wall time.
    pub fn same_outcome(&self, other: &EpochRecord) -> bool {
        self.epoch == other.epoch
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && match (self.eval_acc, other.eval_acc) {
                (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                (None, None) => true,
                _ => false,
            }
    }
}

pub const RUN_CSV_HEADER: &str = "epoch,train_loss,train_acc,eval_acc,lr,wall_s";

/// Renders run records as CSV: the fixed header, one row per epoch, and a
/// `final` summary row repeating the last epoch's metrics with total wall
/// time.
pub fn run_records_csv(records: &[EpochRecord]) -> String {
    let mut out = String::from(RUN_CSV_HEADER);
    out.push('\n');
    let eval_str = |e: Option<f64>| e.map(|v| v.to_string()).unwrap_or_default();
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.3}",
            r.epoch,
            r.train_loss,
            r.train_acc,
            eval_str(r.eval_acc),
            r.lr,
            r.wall_s
        );
    }
    if let Some(last) = records.last() {
        let total_wall: f64 = records.iter().map(|r| r.wall_s).sum();
        let _ = writeln!(
            out,
            "final,{},{},{},{},{:.3}",
            last.train_loss,
            last.train_acc,
            eval_str(last.eval_acc),
            last.lr,
            total_wall
        );
    }
    out
}

/// Seeded sampling without replacement; `count` of zero (or the full size)
/// returns the dataset unchanged.
pub fn seeded_subset(ds: &Dataset, count: u32, seed: Seed) -> Result<Dataset> {
    if count == 0 || count as usize >= ds.len() {
        return Ok(ds.clone());
    }
    let mut rng = seed.rng();
    let idx = rand::seq::index::sample(&mut rng, ds.len(), count as usize).into_vec();
    ds.subset(&idx)
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn count_correct(logits: &[f32], labels: &[u32], classes: usize) -> usize {
    logits
        .chunks_exact(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label as usize)
        .count()
}

/// Top-1 accuracy with eval-mode batch normalization. The whole dataset is
/// consumed in order, including a final partial batch.
pub fn evaluate(model: &Model, data: &Dataset, batch_size: u32) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidParameter("cannot evaluate on an empty dataset".into()));
    }
    if data.num_classes != model.cfg.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes, model.cfg.num_classes
        )));
    }
    let bs = batch_size.max(1) as usize;
    let classes = model.cfg.num_classes as usize;
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(bs) {
        let images = data.batch_resized(chunk, &[], model.cfg.image_size)?;
        let labels: Vec<u32> = chunk.iter().map(|&i| data.label(i)).collect();
        let mut tape = crate::tensor::Tape::new();
        let x = tape.leaf(images);
        let logits = model.forward_eval(&mut tape, x)?;
        correct += count_correct(tape.value(logits), &labels, classes);
    }
    Ok(correct as f64 / data.len() as f64)
}

const META_TENSOR: &str = "meta.progress";

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    opt: AdamW<f32>,
    /// Next epoch to run, 0-based.
    next_epoch: u32,
    global_step: u64,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let model = build_model(&cfg.model)?;
        let opt = AdamW::new(&model.params, cfg.optimizer());
        Ok(Trainer { model, cfg, opt, next_epoch: 0, global_step: 0 })
    }

    pub fn completed_epochs(&self) -> u32 {
        self.next_epoch
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    /// Serializes model parameters, optimizer moments, and progress counters.
    /// Checkpoints are taken at epoch boundaries, so together with the
    /// stateless per-epoch data order this reproduces an uninterrupted run
    /// exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = self.model.named_tensors();
        let (step, m, v) = self.opt.state();
        for (p, buf) in self.model.params.iter().zip(m) {
            tensors.push(NamedTensor::new(
                format!("optim.m.{}", p.name),
                p.shape.clone(),
                buf.clone(),
            ));
        }
        for (p, buf) in self.model.params.iter().zip(v) {
            tensors.push(NamedTensor::new(
                format!("optim.v.{}", p.name),
                p.shape.clone(),
                buf.clone(),
            ));
        }
        tensors.push(NamedTensor::new(
            META_TENSOR,
            vec![2],
            vec![step as f32, self.next_epoch as f32],
        ));
        save_checkpoint(path, &tensors)
    }

    /// Rebuilds a trainer from a config and a checkpoint written by [`save`].
    /// The config must match the one the checkpoint was trained with.
    ///
    /// [`save`]: Trainer::save
    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Trainer> {
        let mut t = Trainer::new(cfg)?;
        let tensors = load_checkpoint(path)?;
        let meta = tensors
            .iter()
            .find(|nt| nt.name == META_TENSOR)
            .ok_or_else(|| Error::Format("checkpoint has no progress record".into()))?;
        if meta.data.len() != 2 {
            return Err(Error::Format("malformed progress record".into()));
        }
        let model_tensors: Vec<NamedTensor> = tensors
            .iter()
            .filter(|nt| !nt.name.starts_with("optim.") && nt.name != META_TENSOR)
            .cloned()
            .collect();
        t.model.load_named_tensors(&model_tensors)?;
        let find_buf = |prefix: &str, name: &str| -> Result<Vec<f32>> {
            let full = format!("{prefix}{name}");
            tensors
                .iter()
                .find(|nt| nt.name == full)
                .map(|nt| nt.data.clone())
                .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {full:?}")))
        };
        let mut m = Vec::with_capacity(t.model.params.len());
        let mut v = Vec::with_capacity(t.model.params.len());
        for p in &t.model.params {
            m.push(find_buf("optim.m.", &p.name)?);
            v.push(find_buf("optim.v.", &p.name)?);
        }
        t.opt.restore(meta.data[0] as u64, m, v)?;
        t.next_epoch = meta.data[1] as u32;
        t.global_step = meta.data[0] as u64;
        Ok(t)
    }

    fn steps_per_epoch(&self, train_len: usize) -> Result<u64> {
        let steps = train_len as u64 / self.cfg.batch_size as u64;
        if steps == 0 {
            return Err(Error::InvalidParameter(format!(
                "training set of {} is smaller than one batch of {}",
                train_len, self.cfg.batch_size
            )));
        }
        Ok(steps)
    }

    fn run_epoch(&mut self, train: &Dataset, epoch: u32) -> Result<(f64, f64, f64)> {
        let bs = self.cfg.batch_size as usize;
        let steps = self.steps_per_epoch(train.len())?;
        let total_steps = steps * self.cfg.epochs as u64;
        let warmup_steps = steps * self.cfg.warmup_epochs as u64;
        let data_seed = Seed(self.cfg.data_seed);

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut data_seed.child(stream::DATA_ORDER).child(epoch as u64).rng());
        let mut flip_rng = data_seed.child(stream::AUGMENT).child(epoch as u64).rng();

        let classes = self.model.cfg.num_classes as usize;
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let mut last_lr = 0.0f64;
        for step in 0..steps as usize {
            let idx = &order[step * bs..(step + 1) * bs];
            let flips: Vec<bool> = if self.cfg.augment {
                idx.iter().map(|_| flip_rng.gen_bool(0.5)).collect()
            } else {
                Vec::new()
            };
            let images = train.batch_resized(idx, &flips, self.model.cfg.image_size)?;
            let labels: Vec<u32> = idx.iter().map(|&i| train.label(i)).collect();
            let out = self.model.loss_and_grads(images, &labels)?;
            if !out.loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite loss {} at epoch {}, step {}",
                    out.loss,
                    epoch + 1,
                    step
                )));
            }
            let lr = lr_schedule(self.global_step, total_steps, warmup_steps, self.cfg.base_lr)?;
            self.opt.step(&mut self.model.params, &out.grads, lr)?;
            self.global_step += 1;
            last_lr = lr;
            loss_sum += out.loss as f64;
            correct += count_correct(&out.logits, &labels, classes);
            seen += labels.len();
        }
        Ok((loss_sum / steps as f64, correct as f64 / seen as f64, last_lr))
    }

    /// Runs the remaining epochs, evaluating after each when an eval set is
    /// given, and returns one record per epoch run.
    pub fn train(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
    ) -> Result<Vec<EpochRecord>> {
        self.train_with(train, eval, u32::MAX, |_| {})
    }

    /// Like [`train`], but stops after at most `max_epochs` additional epochs
    /// while keeping the full-run learning-rate schedule, so a checkpoint
    /// taken here and resumed continues the same trajectory.
    ///
    /// [`train`]: Trainer::train
    pub fn train_some(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        max_epochs: u32,
    ) -> Result<Vec<EpochRecord>> {
        self.train_with(train, eval, max_epochs, |_| {})
    }

    /// Full training run with a progress callback after each epoch.
    pub fn train_verbose(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        self.train_with(train, eval, u32::MAX, on_epoch)
    }

    fn train_with(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        max_epochs: u32,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        if train.num_classes != self.model.cfg.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "dataset has {} classes, model expects {}",
                train.num_classes, self.model.cfg.num_classes
            )));
        }
        let mut records = Vec::new();
        while self.next_epoch < self.cfg.epochs && (records.len() as u32) < max_epochs {
            let epoch = self.next_epoch;
            let start = Instant::now();
            let (train_loss, train_acc, lr) = self.run_epoch(train, epoch)?;
            let eval_acc = match eval {
                Some(ds) => Some(evaluate(&self.model, ds, self.cfg.batch_size)?),
                None => None,
            };
            self.next_epoch += 1;
            let record = EpochRecord {
                epoch: epoch + 1,
                train_loss,
                train_acc,
                eval_acc,
                lr,
                wall_s: start.elapsed().as_secs_f64(),
            };
            on_epoch(&record);
            records.push(record);
        }
        Ok(records)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub family: GraphFamily,
    pub core_count: u32,
    pub seed: u64,
    pub edges: u32,
    pub d_cc: f64,
    pub d_cp: f64,
    pub d_pp: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepAggregate {
    pub family: GraphFamily,
    pub core_count: u32,
    pub cells: u32,
    pub mean_eval_acc: f64,
    pub std_eval_acc: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "family,core_count,seed,edges,d_cc,d_cp,d_pp,train_acc,eval_acc";
pub const SWEEP_AGGREGATE_CSV_HEADER: &str =
    "family,core_count,cells,mean_eval_acc,std_eval_acc";

/// Trains one model per (family, core count, seed) cell and collects final
/// accuracies with the sampled graph's block statistics. `progress` runs
/// after each finished cell.
pub fn sweep(
    base: &TrainConfig,
    families: &[GraphFamily],
    core_counts: &[u32],
    seeds: &[u64],
    train_set: &Dataset,
    eval_set: &Dataset,
    mut progress: impl FnMut(&SweepCell),
) -> Result<Vec<SweepCell>> {
    if families.is_empty() || core_counts.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidParameter(
            "sweep needs at least one family, core count, and seed".into(),
        ));
    }
    let mut cells = Vec::new();
    for &family in families {
        for &core in core_counts {
            for &seed in seeds {
                let mut cfg = base.clone();
                cfg.model.family = family;
                cfg.model.graph_params.n_c = core;
                cfg.model.seed = seed;
                cfg.data_seed = seed;
                let mut trainer = Trainer::new(cfg)?;
                let stats = block_density_stats(&trainer.model.graph, core)?;
                let records = trainer.train(train_set, None)?;
                let train_acc = records.last().map(|r| r.train_acc).unwrap_or(0.0);
                let eval_acc = evaluate(&trainer.model, eval_set, trainer.cfg.batch_size)?;
                let cell = SweepCell {
                    family,
                    core_count: core,
                    seed,
                    edges: trainer.model.graph.edge_count() as u32,
                    d_cc: stats.d_cc,
                    d_cp: stats.d_cp,
                    d_pp: stats.d_pp,
                    train_acc,
                    eval_acc,
                };
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            c.family.as_str(),
            c.core_count,
            c.seed,
            c.edges,
            c.d_cc,
            c.d_cp,
            c.d_pp,
            c.train_acc,
            c.eval_acc
        );
    }
    out
}

/// Per-(family, core count) mean and sample standard deviation of final
/// eval accuracy, in first-seen order.
pub fn aggregate_sweep(cells: &[SweepCell]) -> Vec<SweepAggregate> {
    let mut groups: Vec<(GraphFamily, u32, Vec<f64>)> = Vec::new();
    for c in cells {
        match groups.iter_mut().find(|(f, cc, _)| *f == c.family && *cc == c.core_count) {
            Some((_, _, accs)) => accs.push(c.eval_acc),
            None => groups.push((c.family, c.core_count, vec![c.eval_acc])),
        }
    }
    groups
        .into_iter()
        .map(|(family, core_count, accs)| {
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let std = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepAggregate {
                family,
                core_count,
                cells: accs.len() as u32,
                mean_eval_acc: mean,
                std_eval_acc: std,
            }
        })
        .collect()
}

pub fn sweep_aggregate_csv(aggregates: &[SweepAggregate]) -> String {
    let mut out = String::from(SWEEP_AGGREGATE_CSV_HEADER);
    out.push('\n');
    for a in aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            a.family.as_str(),
            a.core_count,
            a.cells,
            a.mean_eval_acc,
            a.std_eval_acc
        );
    }
    out
}
