//! Toy-scale training of a stack of gated MLP blocks with blocked
//! prune-and-grow.
//!
//! Every iteration runs forward, loss, backward and an SGD step on the dense
//! masters. After every `step_size`-th iteration the masks of the sparsified
//! layers are regenerated at the scheduled sparsity; in every iteration the
//! current masks are re-applied so inactive blocks stay exactly zero.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bench::random_block_sparse;
use crate::bspmm::{flops_for, silu};
use crate::dense::Matrix;
use crate::error::{mismatch, Error, Result};
use crate::mlp::{MlpGradients, MlpLayer, SparseMlp};
use crate::pruner::{csv_err, generate_masks, PruneReport, SparsitySchedule};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenseSide {
    Left,
    #[default]
    Right,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Targets `silu(x P) Q` from a fixed random teacher.
    #[default]
    Regression,
    /// Labels and logits from a fixed random dense MLP teacher.
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_layers")]
    pub layers: usize,
    #[serde(default = "d_dim")]
    pub embed: usize,
    #[serde(default = "d_dim")]
    pub hidden: usize,
    #[serde(default = "d_block")]
    pub block: usize,
    pub schedule: SparsitySchedule,
    /// Number of MLP blocks exempt from pruning.
    #[serde(default)]
    pub dense_layers: usize,
    #[serde(default)]
    pub dense_side: DenseSide,
    #[serde(default = "d_lr")]
    pub learning_rate: f32,
    /// Decoupled L2 decay: `w <- w - lr * (g + weight_decay * w)`.
    #[serde(default = "d_wd")]
    pub weight_decay: f32,
    /// Rescale the step when the global gradient norm exceeds this value.
    #[serde(default)]
    pub grad_clip: Option<f32>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub task: TaskKind,
    /// Add each block's input to its output.
    #[serde(default)]
    pub residual: bool,
    /// `false` runs a mask-free dense trainer: no mask is ever generated or applied.
    #[serde(default = "d_true")]
    pub sparsify: bool,
    #[serde(default = "d_eval")]
    pub eval_size: usize,
    /// Hidden width of the regression teacher.
    #[serde(default = "d_teacher_hidden")]
    pub teacher_hidden: usize,
    /// Block sparsity of the regression teacher's weights (planted structure).
    #[serde(default = "d_teacher_sparsity")]
    pub teacher_sparsity: f64,
}

fn d_layers() -> usize {
    2
}
fn d_dim() -> usize {
    32
}
fn d_block() -> usize {
    8
}
fn d_lr() -> f32 {
    0.03
}
fn d_batch() -> usize {
    1024
}
fn d_wd() -> f32 {
    0.1
}
fn d_teacher_sparsity() -> f64 {
    0.8
}
fn d_alpha() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}
fn d_eval() -> usize {
    512
}
fn d_teacher_hidden() -> usize {
    8
}

impl TrainConfig {
    /// Defaults around a schedule of `total_iters` iterations.
    pub fn with_schedule(schedule: SparsitySchedule) -> Self {
        Self {
            layers: d_layers(),
            embed: d_dim(),
            hidden: d_dim(),
            block: d_block(),
            schedule,
            dense_layers: 0,
            dense_side: DenseSide::Right,
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            grad_clip: None,
            batch_size: d_batch(),
            alpha: d_alpha(),
            beta: 0.0,
            seed: 0,
            task: TaskKind::Regression,
            residual: false,
            sparsify: true,
            eval_size: d_eval(),
            teacher_hidden: d_teacher_hidden(),
            teacher_sparsity: d_teacher_sparsity(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.schedule.validate()?;
        if self.layers == 0 || self.embed == 0 || self.hidden == 0 || self.batch_size == 0 {
            return bad("layers, embed, hidden and batch_size must be positive".into());
        }
        if self.block == 0 {
            return Err(Error::ZeroBlockSize);
        }
        if self.dense_layers > self.layers {
            return bad(format!("dense_layers = {} exceeds layers = {}", self.dense_layers, self.layers));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            return bad(format!(
                "loss weights alpha = {}, beta = {} must be nonnegative with a positive sum",
                self.alpha, self.beta
            ));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay = {} must be nonnegative", self.weight_decay));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate = {} is invalid", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.teacher_sparsity) {
            return bad(format!("teacher_sparsity = {} must lie in [0, 1)", self.teacher_sparsity));
        }
        if self.eval_size == 0 || self.teacher_hidden == 0 {
            return bad("eval_size and teacher_hidden must be positive".into());
        }
        Ok(())
    }

    pub fn total_iters(&self) -> usize {
        self.schedule.total_iters
    }

    /// Whether layer `l` is subject to pruning.
    pub fn is_sparsified(&self, l: usize) -> bool {
        if !self.sparsify {
            return false;
        }
        match self.dense_side {
            DenseSide::Right => l < self.layers - self.dense_layers,
            DenseSide::Left => l >= self.dense_layers,
        }
    }

    /// Parse TOML, or JSON when the text starts with `{`.
    pub fn from_str_auto(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text)
                .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_auto(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// SGD with decoupled weight decay: `w <- w - lr * (g + wd * w)`.
pub fn optimizer_step(weights: &mut Matrix, grads: &Matrix, lr: f32, wd: f32) -> Result<()> {
    if weights.shape() != grads.shape() {
        return Err(mismatch("optimizer_step", format!("weights {:?}, gradient {:?}", weights.shape(), grads.shape())));
    }
    for (w, &g) in weights.as_mut_slice().iter_mut().zip(grads.as_slice()) {
        *w -= lr * (g + wd * *w);
    }
    Ok(())
}

/// `alpha * CE(student, targets) + beta * KL(softmax(teacher) || softmax(student))`,
/// both averaged over rows, with its gradient with respect to the student logits.
pub fn distill_loss(
    student: &Matrix,
    teacher: &Matrix,
    targets: &[usize],
    alpha: f64,
    beta: f64,
) -> Result<(f64, Matrix)> {
    let (n, classes) = student.shape();
    if teacher.shape() != student.shape() || targets.len() != n {
        return Err(mismatch(
            "distill_loss",
            format!("student {:?}, teacher {:?}, {} targets", student.shape(), teacher.shape(), targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidArgument(format!("target class {t} >= {classes}")));
    }
    let mut grad = Matrix::zeros(n, classes);
    if n == 0 {
        return Ok((0.0, grad));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0f64;
    for r in 0..n {
        let ls = log_softmax(student.row(r));
        let lt = log_softmax(teacher.row(r));
        let ce = -ls[targets[r]];
        let kl: f64 = lt.iter().zip(&ls).map(|(&t, &s)| t.exp() * (t - s)).sum();
        total += alpha * ce + beta * kl;
        for c in 0..classes {
            let ps = ls[c].exp();
            let pt = lt[c].exp();
            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
            let g = alpha * (ps - onehot) + beta * (ps - pt);
            grad.set(r, c, (g * inv_n) as f32);
        }
    }
    Ok((total * inv_n, grad))
}

fn log_softmax(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let lse = row.iter().map(|&v| (f64::from(v) - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| f64::from(v) - lse).collect()
}

/// `1/(2n) * sum ||y - t||^2` and its gradient `(y - t) / n`.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let diff = pred.zip_map(target, |p, t| p - t)?;
    let n = pred.rows().max(1) as f64;
    let sq: f64 = diff.as_slice().iter().map(|&d| f64::from(d) * f64::from(d)).sum();
    let inv_n = (1.0 / n) as f32;
    Ok((0.5 * sq / n, diff.map(|d| d * inv_n)))
}

#[derive(Clone, Debug)]
pub enum Target {
    Values(Matrix),
    Classes { labels: Vec<usize>, teacher_logits: Matrix },
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Matrix,
    pub target: Target,
}

#[derive(Clone, Debug)]
enum Teacher {
    Regression { p: Matrix, q: Matrix },
    Classification { model: Model },
}

/// Deterministic synthetic data source: batch `i` depends only on the seed and `i`.
#[derive(Clone, Debug)]
pub struct Task {
    embed: usize,
    batch_size: usize,
    data_seed: u64,
    teacher: Teacher,
}

impl Task {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7EAC_4E125);
        let e = cfg.embed;
        let teacher = match cfg.task {
            TaskKind::Regression => {
                let t = cfg.teacher_hidden;
                let density = 1.0 - cfg.teacher_sparsity;
                let mut weight = |rows: usize, cols: usize| -> Result<Matrix> {
                    let scale = 1.0 / (rows as f64 * density).max(1.0).sqrt() as f32;
                    let w = random_block_sparse(rows, cols, cfg.block, cfg.teacher_sparsity, &mut rng)?;
                    Ok(w.to_dense().map(|v| v * scale))
                };
                Teacher::Regression { p: weight(e, t)?, q: weight(t, e)? }
            }
            TaskKind::Classification => {
                let layers = (0..cfg.layers)
                    .map(|_| SparseMlp::random(e, cfg.hidden, cfg.block, &mut rng).map(MlpLayer::new))
                    .collect::<Result<Vec<_>>>()?;
                Teacher::Classification { model: Model { layers, residual: true } }
            }
        };
        Ok(Self {
            embed: e,
            batch_size: cfg.batch_size,
            data_seed: cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            teacher,
        })
    }

    fn make_batch(&self, stream: u64, rows: usize) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
        rng.set_stream(stream);
        let x = Matrix::random_normal(rows, self.embed, 1.0, &mut rng);
        let target = match &self.teacher {
            Teacher::Regression { p, q } => {
                let h = naive_matmul(&x, p).map(silu);
                Target::Values(naive_matmul(&h, q))
            }
            Teacher::Classification { model } => {
                let logits = model.infer(&x)?;
                let labels = (0..rows)
                    .map(|r| {
                        let row = logits.row(r);
                        (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0)
                    })
                    .collect();
                Target::Classes { labels, teacher_logits: logits }
            }
        };
        Ok(Batch { x, target })
    }

    /// Training batch for iteration `i`.
    pub fn batch(&self, i: usize) -> Result<Batch> {
        self.make_batch(i as u64 + 1, self.batch_size)
    }

    /// Held-out evaluation batch (disjoint stream from every training batch).
    pub fn eval_batch(&self, rows: usize) -> Result<Batch> {
        self.make_batch(0, rows)
    }
}

fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(m, n);
    for i in 0..m {
        for kk in 0..k {
            let av = a.get(i, kk);
            for j in 0..n {
                let v = out.get(i, j) + av * b.get(kk, j);
                out.set(i, j, v);
            }
        }
    }
    out
}

/// Stack of MLP blocks, optionally residual.
#[derive(Clone, Debug)]
pub struct Model {
    pub layers: Vec<MlpLayer>,
    pub residual: bool,
}

impl Model {
    pub fn random(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|_| SparseMlp::random(cfg.embed, cfg.hidden, cfg.block, rng).map(MlpLayer::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, residual: cfg.residual })
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &mut self.layers {
            let y = layer.forward(&h)?;
            h = if self.residual { h.zip_map(&y, |a, b| a + b)? } else { y };
        }
        Ok(h)
    }

    /// Gradients per layer, in layer order.
    pub fn backward(&mut self, dout: &Matrix) -> Result<Vec<MlpGradients>> {
        let mut d = dout.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter_mut().rev() {
            let g = layer.backward(&d)?;
            d = if self.residual { d.zip_map(&g.dx, |a, b| a + b)? } else { g.dx.clone() };
            grads.push(g);
        }
        grads.reverse();
        Ok(grads)
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            let y = layer.infer(&h)?;
            h = if self.residual { h.zip_map(&y, |a, b| a + b)? } else { y };
        }
        Ok(h)
    }

    /// Block sparsity over all three matrices of layer `l`.
    pub fn layer_sparsity(&self, l: usize) -> f64 {
        let (stored, total) = self.layers[l]
            .mlp
            .weights()
            .iter()
            .map(|w| (w.packed().nnzb(), w.packed().grid_rows() * w.packed().grid_cols()))
            .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
        if total == 0 {
            0.0
        } else {
            1.0 - stored as f64 / total as f64
        }
    }

    /// Flops of one forward and backward pass over `rows` rows with the
    /// current sparsity: three sparse products forward, three sparse
    /// products for the input gradient, three dense weight-gradient products.
    pub fn iteration_flops(&self, rows: usize) -> u64 {
        self.layers
            .iter()
            .flat_map(|l| l.mlp.weights())
            .map(|w| {
                let fc = flops_for(rows, w.packed());
                2 * fc.sparse + fc.dense
            })
            .sum()
    }

    pub fn save_bcsc(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, w) in layer.mlp.weights().iter().enumerate() {
                let path = dir.join(format!("layer{l}_w{}.bcsc", i + 1));
                w.packed().write_to(std::fs::File::create(&path)?)?;
                paths.push(path);
            }
        }
        Ok(paths)
    }
}

fn batch_loss(cfg: &TrainConfig, pred: &Matrix, target: &Target) -> Result<(f64, Matrix)> {
    match target {
        Target::Values(t) => mse_loss(pred, t),
        Target::Classes { labels, teacher_logits } => distill_loss(pred, teacher_logits, labels, cfg.alpha, cfg.beta),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss: f64,
    /// Block sparsity of each layer after this iteration's masking.
    pub sparsity: Vec<f64>,
    /// Flops spent in this iteration.
    pub flops: u64,
    pub wall_ms: f64,
    pub refresh: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPruneReport {
    pub layer: usize,
    /// 1, 2 or 3 for `W1`, `W2`, `W3`.
    pub matrix: usize,
    #[serde(flatten)]
    pub report: PruneReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub iterations: Vec<IterRecord>,
    pub prune_reports: Vec<LayerPruneReport>,
    pub eval_loss: f64,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.iterations.iter().map(|r| r.loss).collect()
    }

    pub fn final_sparsity(&self) -> Vec<f64> {
        self.iterations.last().map(|r| r.sparsity.clone()).unwrap_or_default()
    }

    /// Regrown ratio per refresh event, averaged over the refreshed matrices.
    pub fn regrown_ratio_trace(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64, usize)> = Vec::new();
        for r in &self.prune_reports {
            match out.last_mut() {
                Some((it, sum, n)) if *it == r.report.iteration => {
                    *sum += r.report.regrown_ratio;
                    *n += 1;
                }
                _ => out.push((r.report.iteration, r.report.regrown_ratio, 1)),
            }
        }
        out.into_iter().map(|(i, s, n)| (i, s / n as f64)).collect()
    }

    /// `iter,loss,sparsity_l0..sparsity_lN,flops,wall_ms,refresh`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let layers = self.iterations.first().map_or(0, |r| r.sparsity.len());
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string(), "loss".to_string()];
        header.extend((0..layers).map(|l| format!("sparsity_l{l}")));
        header.extend(["flops", "wall_ms", "refresh"].map(String::from));
        wtr.write_record(&header).map_err(csv_err)?;
        for r in &self.iterations {
            let mut rec = vec![r.iter.to_string(), r.loss.to_string()];
            rec.extend(r.sparsity.iter().map(|s| s.to_string()));
            rec.push(r.flops.to_string());
            rec.push(format!("{:.3}", r.wall_ms));
            rec.push(u8::from(r.refresh).to_string());
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub final_loss: f64,
    pub eval_loss: f64,
    pub final_sparsity: Vec<f64>,
    pub refreshes: usize,
    pub total_flops: u64,
    pub wall_ms: f64,
    pub regrown_ratio_trace: Vec<(usize, f64)>,
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub model: Model,
}

impl TrainOutcome {
    pub fn summary(&self, cfg: &TrainConfig) -> TrainSummary {
        let it = &self.log.iterations;
        TrainSummary {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.clone(),
            final_loss: it.last().map_or(f64::NAN, |r| r.loss),
            eval_loss: self.log.eval_loss,
            final_sparsity: self.log.final_sparsity(),
            refreshes: it.iter().filter(|r| r.refresh).count(),
            total_flops: it.iter().map(|r| r.flops).sum(),
            wall_ms: it.iter().map(|r| r.wall_ms).sum(),
            regrown_ratio_trace: self.log.regrown_ratio_trace(),
        }
    }
}

fn global_norm(grads: &[MlpGradients]) -> f64 {
    grads
        .iter()
        .flat_map(|g| [&g.dw1, &g.dw2, &g.dw3])
        .flat_map(|m| m.as_slice())
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let task = Task::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::random(cfg, &mut rng)?;
    let sched = &cfg.schedule;
    let mut log = TrainLog::default();

    for i in 0..sched.total_iters {
        let t0 = Instant::now();
        let flops = model.iteration_flops(cfg.batch_size);
        let batch = task.batch(i)?;
        let pred = model.forward(&batch.x)?;
        let (loss, dpred) = batch_loss(cfg, &pred, &batch.target)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: i, loss: loss as f32 });
        }
        let grads = model.backward(&dpred)?;
        let lr = match cfg.grad_clip {
            Some(clip) => {
                let norm = global_norm(&grads);
                if norm > f64::from(clip) {
                    (f64::from(cfg.learning_rate) * f64::from(clip) / norm) as f32
                } else {
                    cfg.learning_rate
                }
            }
            None => cfg.learning_rate,
        };
        for (layer, g) in model.layers.iter_mut().zip(&grads) {
            let [w1, w2, w3] = layer.mlp.weights_mut();
            optimizer_step(w1.dense_mut(), &g.dw1, lr, cfg.weight_decay)?;
            optimizer_step(w2.dense_mut(), &g.dw2, lr, cfg.weight_decay)?;
            optimizer_step(w3.dense_mut(), &g.dw3, lr, cfg.weight_decay)?;
        }

        let refresh = cfg.sparsify && sched.is_refresh(i);
        let s_i = if refresh { sched.target_sparsity(i)? } else { 0.0 };
        for (l, (layer, g)) in model.layers.iter_mut().zip(&grads).enumerate() {
            let grad_of = [&g.dw1, &g.dw2, &g.dw3];
            for (mi, w) in layer.mlp.weights_mut().into_iter().enumerate() {
                if !cfg.is_sparsified(l) {
                    w.repack_dense()?;
                } else if refresh {
                    let (mask, rep) = generate_masks(w.dense(), grad_of[mi], cfg.block, s_i)?;
                    w.set_mask(mask)?;
                    log.prune_reports.push(LayerPruneReport { layer: l, matrix: mi + 1, report: rep.at_iteration(i) });
                } else {
                    w.reapply()?;
                }
            }
        }

        log.iterations.push(IterRecord {
            iter: i,
            loss,
            sparsity: (0..cfg.layers).map(|l| model.layer_sparsity(l)).collect(),
            flops,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            refresh,
        });
    }

    let eval = task.eval_batch(cfg.eval_size)?;
    let pred = model.infer(&eval.x)?;
    log.eval_loss = batch_loss(cfg, &pred, &eval.target)?.0;
    Ok(TrainOutcome { log, model })
}
