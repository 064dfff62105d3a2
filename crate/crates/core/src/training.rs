//! Supervised datasets, the Adam optimizer and the training, ablation and
//! seed-spread loops.
//!
//! A single run is sequential and fully determined by its config. Parallelism
//! only ever spans independent runs (ablation rows, seeds), each owning its
//! parameters, optimizer state and tapes, so results never depend on the
//! thread count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::bptt::{Backprop, BpttTape, ParamGrads};
use crate::cells::{forward_into, init_params, CellParams, CellVariant};
use crate::dde::{gen_enso, gen_mackey_glass, SeriesDataset};
use crate::numerics::Vector;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// One adding-task sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AddingSample {
    pub u: Vec<f64>,
    /// Marker vector with exactly two ones.
    pub v: Vec<f64>,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AddingDataset {
    pub length: usize,
    pub samples: Vec<AddingSample>,
}

impl AddingDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Adding-problem samples of length `n`: `u ~ U(0,1)^n`, one marker in the
/// first half `{0, …, ⌊n/2⌋-1}` and one in `{⌈n/2⌉-1, …, n-1}`.
///
/// For even `n` the two ranges share index `n/2 - 1`; a colliding second
/// marker is redrawn so `v` always has exactly two ones.
pub fn gen_adding_task(n: usize, n_samples: usize, seed: u64) -> Result<AddingDataset> {
    if n < 2 {
        return Err(Error::Invalid(format!("adding length must be at least 2, got {n}")));
    }
    let mut rng = SplitMix64::new(seed);
    let first_hi = (n / 2) as u64;
    let second_lo = n.div_ceil(2) - 1;
    let second_span = (n - second_lo) as u64;
    let samples = (0..n_samples)
        .map(|_| {
            let u: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
            let i = rng.below(first_hi) as usize;
            let mut j = second_lo + rng.below(second_span) as usize;
            while j == i {
                j = second_lo + rng.below(second_span) as usize;
            }
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v[j] = 1.0;
            AddingSample {
                target: u[i] + u[j],
                u,
                v,
            }
        })
        .collect();
    Ok(AddingDataset { length: n, samples })
}

/// An input sequence and the targets for its last `targets.len()` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vector>,
    pub targets: Vec<Vector>,
}

impl Sequence {
    fn first_scored(&self) -> usize {
        self.inputs.len() - self.targets.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub sequences: Vec<Sequence>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Supervised {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// MSE of a fixed predictor `ŷ_n = predict(x_n)` over every scored step.
    pub fn baseline_mse(&self, predict: impl Fn(&Vector) -> Vec<f64>) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for s in &self.sequences {
            for (x, t) in s.inputs[s.first_scored()..].iter().zip(&s.targets) {
                for (y, t) in predict(x).iter().zip(t.iter()) {
                    sum += (y - t) * (y - t);
                    count += 1;
                }
            }
        }
        sum / count as f64
    }
}

/// One-step-ahead prediction: `x_n = s_n`, target `s_{n+1}`, scored at every step.
pub fn make_prediction_task(data: &SeriesDataset) -> Result<Supervised> {
    let sequences = data
        .series
        .iter()
        .map(|s| {
            if s.len() < 2 {
                return Err(Error::Invalid("prediction needs series of length at least 2".into()));
            }
            Ok(Sequence {
                inputs: s[..s.len() - 1].iter().map(|&v| Vector::from(vec![v])).collect(),
                targets: s[1..].iter().map(|&v| Vector::from(vec![v])).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Supervised {
        sequences,
        input_dim: 1,
        output_dim: 1,
    })
}

/// Inputs `(u_n, v_n)`, one target read at the final step.
pub fn make_adding_task(data: &AddingDataset) -> Supervised {
    Supervised {
        sequences: data
            .samples
            .iter()
            .map(|s| Sequence {
                inputs: s.u.iter().zip(&s.v).map(|(&u, &v)| Vector::from(vec![u, v])).collect(),
                targets: vec![Vector::from(vec![s.target])],
            })
            .collect(),
        input_dim: 2,
        output_dim: 1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &CellParams) -> Self {
        Self {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update, after optional global-norm clipping of `grads`.
pub fn adam_step(
    params: &mut CellParams,
    grads: &mut ParamGrads,
    state: &mut AdamState,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::Invalid("Adam: params, grads and moments differ in shape".into()));
    }
    if let Some(clip) = grad_clip {
        let norm = grads.global_norm();
        if norm > clip {
            grads.scale(clip / norm);
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    let m_tensors = state.m.tensors_mut();
    let v_tensors = state.v.tensors_mut();
    for (((p, g), m), v) in p_tensors.into_iter().zip(g_tensors).zip(m_tensors).zip(v_tensors) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Adding { length: usize },
    MackeyGlass,
    Enso,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Adding { .. } => "adding",
            Task::MackeyGlass => "mackey-glass",
            Task::Enso => "enso",
        }
    }

    /// `(p, q)` implied by the task.
    pub fn io_dims(&self) -> (usize, usize) {
        match self {
            Task::Adding { .. } => (2, 1),
            Task::MackeyGlass | Task::Enso => (1, 1),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mackey-glass" | "mackey_glass" => Ok(Task::MackeyGlass),
            "enso" => Ok(Task::Enso),
            "adding" => Ok(Task::Adding { length: 200 }),
            _ => Err(Error::Unknown {
                kind: "task",
                name: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: CellVariant,
    pub d: usize,
    pub p: usize,
    pub q: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Seeds parameter init and batch order.
    pub seed: u64,
    /// Seeds the generated data, kept apart so seed sweeps share one dataset.
    pub data_seed: u64,
    pub batch_size: usize,
    pub task: Task,
    pub n_train: usize,
    pub n_test: usize,
    pub grad_clip: Option<f64>,
}

impl TrainConfig {
    pub fn new(task: Task, variant: CellVariant, d: usize) -> Self {
        let (p, q) = task.io_dims();
        Self {
            variant,
            d,
            p,
            q,
            lr: 0.01,
            epochs: 1,
            seed: 0,
            data_seed: 0,
            batch_size: 32,
            task,
            n_train: 32,
            n_test: 32,
            grad_clip: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.variant.validate()?;
        let (p, q) = self.task.io_dims();
        let problems: Vec<String> = [
            (!(self.lr > 0.0)).then(|| format!("lr must be positive, got {}", self.lr)),
            (self.epochs == 0).then(|| "epochs must be at least 1".to_string()),
            (self.d == 0).then(|| "hidden size must be positive".to_string()),
            (self.batch_size == 0).then(|| "batch_size must be positive".to_string()),
            (self.n_train == 0 || self.n_test == 0).then(|| "n_train and n_test must be positive".to_string()),
            ((self.p, self.q) != (p, q))
                .then(|| format!("task {} needs p={p}, q={q}, got p={}, q={}", self.task, self.p, self.q)),
            matches!(self.task, Task::Adding { length } if length < 2)
                .then(|| "adding length must be at least 2".to_string()),
            self.grad_clip
                .filter(|c| !(*c > 0.0))
                .map(|c| format!("grad_clip must be positive, got {c}")),
        ]
        .into_iter()
        .flatten()
        .collect();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's batches, each measured before its update.
    pub train_loss: f64,
    /// After the epoch's last update.
    pub test_loss: f64,
    pub wall_seconds: f64,
}

/// Train and test splits for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Supervised,
    pub test: Supervised,
}

impl TaskData {
    pub fn generate(config: &TrainConfig) -> Result<Self> {
        let total = config.n_train + config.n_test;
        let split = |all: Supervised| {
            let mut train = all;
            let test_seqs = train.sequences.split_off(config.n_train);
            let test = Supervised {
                sequences: test_seqs,
                input_dim: train.input_dim,
                output_dim: train.output_dim,
            };
            TaskData { train, test }
        };
        Ok(match config.task {
            Task::Adding { length } => split(make_adding_task(&gen_adding_task(length, total, config.data_seed)?)),
            Task::MackeyGlass => split(make_prediction_task(&gen_mackey_glass(config.data_seed, total)?)?),
            Task::Enso => split(make_prediction_task(&gen_enso(config.data_seed, total)?)?),
        })
    }

    /// The no-learning reference on the test split: persistence `ŷ_n = x_n`
    /// for series prediction, the constant `ŷ = 1` for the adding task.
    pub fn baseline_test_mse(&self, task: Task) -> f64 {
        match task {
            Task::Adding { .. } => self.test.baseline_mse(|_| vec![1.0]),
            Task::MackeyGlass | Task::Enso => self.test.baseline_mse(|x| x.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: CellParams,
    pub records: Vec<EpochRecord>,
    pub initial_train_loss: f64,
    pub initial_test_loss: f64,
    pub baseline_test_loss: f64,
}

impl TrainOutcome {
    pub fn final_test_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_test_loss, |r| r.test_loss)
    }

    pub fn final_train_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_train_loss, |r| r.train_loss)
    }
}

/// Reusable forward/backward buffers for one run.
#[derive(Debug)]
struct Workspace {
    tape: BpttTape,
    ys: Vec<Vector>,
    loss_grads: Vec<Vector>,
    backprop: Backprop,
}

impl Workspace {
    fn new(variant: CellVariant) -> Self {
        Self {
            tape: BpttTape::new(variant),
            ys: Vec::new(),
            loss_grads: Vec::new(),
            backprop: Backprop::new(),
        }
    }

    /// Sum of squared errors on one sequence; with `grads`, also accumulates
    /// the gradient of `sse / normalizer`.
    fn sequence(
        &mut self,
        params: &CellParams,
        variant: &CellVariant,
        seq: &Sequence,
        grads: Option<(&mut CellParams, f64)>,
    ) -> Result<f64> {
        forward_into(params, variant, &seq.inputs, None, &mut self.tape, &mut self.ys)?;
        let first = seq.first_scored();
        let mut sse = 0.0;
        for (y, t) in self.ys[first..].iter().zip(&seq.targets) {
            for (a, b) in y.iter().zip(t.iter()) {
                sse += (a - b) * (a - b);
            }
        }
        if let Some((grads, normalizer)) = grads {
            let q = params.output();
            self.loss_grads.resize(self.ys.len(), Vector::zeros(q));
            for g in &mut self.loss_grads {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            for (n, t) in (first..).zip(&seq.targets) {
                for k in 0..q {
                    self.loss_grads[n][k] = 2.0 * (self.ys[n][k] - t[k]) / normalizer;
                }
            }
            self.backprop.accumulate(&self.tape, params, &self.loss_grads, grads)?;
        }
        Ok(sse)
    }
}

fn scored_values(seqs: &[&Sequence], q: usize) -> usize {
    seqs.iter().map(|s| s.targets.len() * q).sum()
}

/// Mean squared error of `params` over a dataset.
pub fn evaluate(params: &CellParams, variant: &CellVariant, data: &Supervised) -> Result<f64> {
    let mut ws = Workspace::new(*variant);
    let refs: Vec<&Sequence> = data.sequences.iter().collect();
    let count = scored_values(&refs, params.output());
    let mut sse = 0.0;
    for s in refs {
        sse += ws.sequence(params, variant, s, None)?;
    }
    Ok(sse / count as f64)
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = TaskData::generate(config)?;
    train_on(config, &data)
}

/// Train on pre-generated data; `config.task` and `data` must agree.
pub fn train_on(config: &TrainConfig, data: &TaskData) -> Result<TrainOutcome> {
    train_on_with(config, data, |_| {})
}

/// As [`train_on`], calling `on_epoch` after every epoch.
pub fn train_on_with(
    config: &TrainConfig,
    data: &TaskData,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.input_dim != config.p || data.train.output_dim != config.q {
        return Err(Error::Config("dataset dimensions do not match p/q".into()));
    }
    let variant = config.variant;
    let mut params = init_params(config.d, config.p, config.q, config.seed)?;
    let mut adam = AdamState::new(&params);
    let mut grads = ParamGrads::zeros_like(&params);
    let mut ws = Workspace::new(variant);
    let mut order_rng = SplitMix64::new(config.seed ^ 0xBA7C_0DE5);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let started = Instant::now();

    let initial_train_loss = evaluate(&params, &variant, &data.train)?;
    let initial_test_loss = evaluate(&params, &variant, &data.test)?;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.batch_size < order.len() {
            order_rng.shuffle(&mut order);
        }
        let mut epoch_sse = 0.0;
        let mut epoch_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            let seqs: Vec<&Sequence> = batch.iter().map(|&i| &data.train.sequences[i]).collect();
            let count = scored_values(&seqs, config.q);
            grads.fill_zero();
            for s in &seqs {
                epoch_sse += ws.sequence(&params, &variant, s, Some((&mut grads, count as f64)))?;
            }
            epoch_count += count;
            if !epoch_sse.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            adam_step(&mut params, &mut grads, &mut adam, config.lr, config.grad_clip)?;
        }
        let test_loss = evaluate(&params, &variant, &data.test)?;
        if !test_loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_sse / epoch_count as f64,
            test_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome {
        params,
        records,
        initial_train_loss,
        initial_test_loss,
        baseline_test_loss: data.baseline_test_mse(config.task),
    })
}

/// One configuration in an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub name: String,
    pub variant: CellVariant,
}

impl AblationRow {
    /// Named rows: `tau-gru`, `alpha0`, `beta0`, `no-weighting`,
    /// `simple-delay-gru`, `linear-delayed`, each at delay `tau`.
    pub fn named(name: &str, tau: usize) -> Result<Self> {
        let variant = match name {
            "tau-gru" => CellVariant::tau_gru(tau),
            "alpha0" => CellVariant::tau_gru(tau).with_alpha(0.0),
            "beta0" => CellVariant::tau_gru(tau).with_beta(0.0),
            "no-weighting" => CellVariant::tau_gru(tau).with_weighting(false),
            "simple-delay-gru" => CellVariant::simple_delay_gru(tau),
            "linear-delayed" => CellVariant::linear(tau),
            _ => {
                return Err(Error::Unknown {
                    kind: "ablation row",
                    name: name.to_string(),
                })
            }
        };
        Ok(Self {
            name: name.to_string(),
            variant,
        })
    }

    /// The full model at a different delay.
    pub fn tau_sweep(base: CellVariant, tau: usize) -> Self {
        Self {
            name: format!("tau={tau}"),
            variant: CellVariant { delay: tau, ..base },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub name: String,
    pub variant: CellVariant,
    /// Median final test MSE over the seeds.
    pub test_metric: f64,
    pub per_seed: Vec<f64>,
    pub param_count: usize,
}

impl AblationResult {
    pub const CSV_HEADER: &'static str = "name,alpha,beta,tau,weighting,test_metric,param_count";

    pub fn csv_row(&self) -> String {
        let v = &self.variant;
        format!(
            "{},{},{},{},{},{},{}",
            self.name,
            v.alpha,
            v.beta,
            v.delay,
            v.use_weighting,
            crate::io::fmt_f64(self.test_metric),
            self.param_count
        )
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Train every row for every seed in `seeds` on one shared dataset.
pub fn ablate(config: &TrainConfig, rows: &[AblationRow], seeds: &[u64]) -> Result<Vec<AblationResult>> {
    if rows.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one row and one seed".into()));
    }
    config.validate()?;
    let data = TaskData::generate(config)?;
    let jobs: Vec<(usize, u64)> = (0..rows.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let metrics = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let cfg = TrainConfig {
                variant: rows[r].variant,
                seed,
                ..config.clone()
            };
            Ok(train_on(&cfg, &data)?.final_test_loss())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(rows
        .iter()
        .zip(metrics.chunks(seeds.len()))
        .map(|(row, per_seed)| AblationResult {
            name: row.name.clone(),
            variant: row.variant,
            test_metric: median(per_seed),
            per_seed: per_seed.to_vec(),
            param_count: row.variant.param_count(config.d, config.p, config.q),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSpread {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
    pub median: f64,
}

impl SeedSpread {
    pub fn from_values(seeds: Vec<u64>, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid("seed spread needs at least two seeds".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        Ok(Self {
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            std: var.sqrt(),
            median: median(&values),
            seeds,
            values,
        })
    }
}

/// Final test MSE over seeds `config.seed, config.seed + 1, …`.
pub fn evaluate_seed_spread(config: &TrainConfig, n_seeds: usize) -> Result<SeedSpread> {
    if n_seeds < 2 {
        return Err(Error::Invalid("seed spread needs at least two seeds".into()));
    }
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let row = AblationRow {
        name: config.variant.kind.name().to_string(),
        variant: config.variant,
    };
    let result = ablate(config, &[row], &seeds)?.remove(0);
    SeedSpread::from_values(seeds, result.per_seed)
}
