//! Adam optimization with a plateau learning-rate rule, early stopping and
//! the ablation runner.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::PAD_INDEX;
use crate::compute::{GradBuffer, ParamStore, Tensor};
use crate::dataset::{Dataset, Split, TouchPoint};
use crate::dnd::{Checkpoint, DndConfig, GaussianBaseline, LossSums, Mode, Model, NeuralDecoder, Variant};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::par::Exec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    /// Fractional learning-rate change after every validation.
    pub lr_rate: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
    /// Each batch is split into this many gradient shards. Fixed so results
    /// do not depend on the thread count.
    pub grad_shards: usize,
    pub seed: u64,
    pub model: DndConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_rate: 0.1,
            patience: 10,
            batch_size: 32,
            max_epochs: 30,
            clip_norm: 5.0,
            grad_shards: 4,
            seed: 1234,
            model: DndConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: &str| Err(Error::Config(format!("training: {m}")));
        if !(self.lr_rate > 0.0 && self.lr_rate < 1.0) {
            return bad("lr_rate must lie strictly between 0 and 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 || self.grad_shards == 0 {
            return bad("patience, batch_size, max_epochs and grad_shards must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

/// First and second moments of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros = || params.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ParamStore<f32>, grads: &GradBuffer<f32>, state: &mut AdamState, lr: f64) -> Result<()> {
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {}", params.params()[i].name)));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let step = (lr * c2.sqrt() / c1) as f32;
    let eps = (state.eps * c2.sqrt()) as f32;
    let (a1, a2) = ((1.0 - b1) as f32, (1.0 - b2) as f32);
    let (b1, b2) = (b1 as f32, b2 as f32);
    for (k, p) in params.params_mut().iter_mut().enumerate() {
        let g = grads.grads()[k].data();
        let m = state.m[k].data_mut();
        let v = state.v[k].data_mut();
        for (i, w) in p.value.data_mut().iter_mut().enumerate() {
            m[i] = b1 * m[i] + a1 * g[i];
            v[i] = b2 * v[i] + a2 * g[i] * g[i];
            *w -= step * m[i] / (v[i].sqrt() + eps);
        }
    }
    Ok(())
}

/// Learning-rate and early-stopping bookkeeping driven by validation losses.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub rate: f64,
    pub patience: usize,
    pub best: Option<f64>,
    pub since_best: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, rate: f64, patience: usize) -> Self {
        Self {
            lr: initial_lr,
            rate,
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Records one validation loss. Returns whether it is a new minimum.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        let improved = self.best.is_none_or(|b| val_loss < b);
        if improved {
            self.best = Some(val_loss);
            self.since_best = 0;
            self.lr *= 1.0 + self.rate;
        } else {
            self.since_best += 1;
            self.lr *= 1.0 - self.rate;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.since_best >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub is_best: bool,
}

pub fn write_log<W: Write>(log: &[EpochRecord], mut w: W) -> Result<()> {
    for r in log {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn log_bytes(log: &[EpochRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_log(log, &mut out).expect("writing to memory cannot fail");
    out
}

/// A phrase as network input: touches and target indices, cut to the window.
#[derive(Clone, Debug)]
struct Window {
    points: Vec<TouchPoint>,
    targets: Vec<usize>,
}

fn windows(d: &Dataset, window: usize) -> Vec<Window> {
    d.samples()
        .iter()
        .map(|s| {
            let n = s.len().min(window);
            Window {
                points: s.touches()[..n].to_vec(),
                targets: s.targets()[..n].to_vec(),
            }
        })
        .collect()
}

/// Shuffled batches of similar length: a shuffled order is cut into pools of
/// several batches, each pool sorted by length and cut into batches, and the
/// batch order shuffled again.
fn epoch_batches(items: &[Window], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 8) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| items[i].points.len());
        batches.extend(pool.chunks(batch_size).map(|c| c.to_vec()));
    }
    batches.shuffle(rng);
    batches
}

fn shard_batch(model: &NeuralDecoder<f32>, items: &[Window], idx: &[usize]) -> Result<crate::dnd::Batch<f32>> {
    let pts: Vec<&[TouchPoint]> = idx.iter().map(|&i| items[i].points.as_slice()).collect();
    let tg: Vec<&[usize]> = idx.iter().map(|&i| items[i].targets.as_slice()).collect();
    model.batch(&pts, Some(&tg))
}

/// Mean final cross-entropy of inference-mode decoding.
pub fn validation_loss(model: &NeuralDecoder<f32>, val: &Dataset, exec: Exec) -> Result<f64> {
    let items = windows(val, model.config().window);
    let idx: Vec<usize> = (0..items.len()).collect();
    let chunks: Vec<&[usize]> = idx.chunks(32).collect();
    let sums = exec.map(&chunks, |c| -> Result<LossSums> {
        let b = shard_batch(model, &items, c)?;
        let f = model.layout.forward(&model.params, &b, Mode::Inference);
        Ok(model.layout.loss_sums(&f, &b))
    });
    let mut total = LossSums::default();
    for s in sums {
        total.add(&s?);
    }
    if total.count == 0 {
        return Err(Error::Config("validation set has no keystrokes".into()));
    }
    Ok(total.final_ce / total.count as f64)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub log: Vec<EpochRecord>,
}

/// Trains a neural decoder and returns the minimum-validation-loss checkpoint.
pub fn fit(train: &Dataset, val: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<FitOutcome> {
    fit_with(train, val, cfg, exec, |_| {})
}

pub fn fit_with(
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    if cfg.model.variant == Variant::GaussianBaseline {
        let g = GaussianBaseline::fit(train)?;
        return Ok(FitOutcome {
            best: Checkpoint::new(Model::Gaussian(g), cfg.seed, 0, BTreeMap::new()),
            log: Vec::new(),
        });
    }
    let mut model = NeuralDecoder::<f32>::new(&cfg.model, cfg.seed)?;
    let items = windows(train, cfg.model.window);
    let mut adam = AdamState::new(&model.params);
    let mut sched = PlateauSchedule::new(cfg.initial_lr, cfg.lr_rate, cfg.patience);
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let lr = sched.lr;
        let mut sums = LossSums::default();
        for (bi, batch) in epoch_batches(&items, cfg.batch_size, &mut rng).iter().enumerate() {
            let count: usize = batch.iter().map(|&i| items[i].targets.iter().filter(|&&t| t != PAD_INDEX).count()).sum();
            let norm = count.max(1) as f64;
            let per = batch.len().div_ceil(cfg.grad_shards);
            let shards: Vec<&[usize]> = batch.chunks(per).collect();
            let results = exec.map(&shards, |idx| -> Result<(LossSums, GradBuffer<f32>)> {
                let b = shard_batch(&model, &items, idx)?;
                Ok(model.layout.loss_and_grad(&model.params, &b, norm))
            });
            let mut grads = model.params.grad_buffer();
            for r in results {
                let (s, g) = r?;
                sums.add(&s);
                grads.add_assign(&g);
            }
            if let Some(k) = grads.first_non_finite() {
                return Err(Error::NonFiniteGradient {
                    param: model.params.params()[k].name.clone(),
                    epoch,
                    batch: bi,
                });
            }
            let gn = grads.norm();
            if gn > cfg.clip_norm {
                grads.scale((cfg.clip_norm / gn) as f32);
            }
            adam_step(&mut model.params, &grads, &mut adam, lr)?;
        }
        let train_loss = model.layout.objective(&sums, sums.count.max(1) as f64);
        let val_loss = validation_loss(&model, val, exec)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("validation loss {val_loss}"),
            });
        }
        let is_best = sched.observe(val_loss);
        let rec = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
            is_best,
        };
        on_epoch(&rec);
        log.push(rec);
        if is_best {
            let mut metrics = BTreeMap::new();
            metrics.insert("train_loss".to_string(), train_loss);
            metrics.insert("val_loss".to_string(), val_loss);
            best = Some(Checkpoint::new(Model::Neural(model.clone()), cfg.seed, epoch, metrics));
        }
        if sched.should_stop() {
            break;
        }
    }
    Ok(FitOutcome {
        best: best.expect("the first epoch always sets a minimum"),
        log,
    })
}

/// One row of the ablation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub variant: Variant,
    pub stacks: usize,
    pub units: usize,
    pub aux: bool,
}

impl AblationCell {
    pub fn new(variant: Variant, stacks: usize, units: usize, aux: bool) -> Self {
        Self {
            variant,
            stacks,
            units,
            aux,
        }
    }

    pub fn model_config(&self, base: &DndConfig) -> DndConfig {
        DndConfig {
            variant: self.variant,
            dec_stacks: self.stacks,
            units: self.units,
            aux_loss_weight: match (self.aux, base.aux_loss_weight > 0.0) {
                (true, true) => base.aux_loss_weight,
                (true, false) => 1.0,
                (false, _) => 0.0,
            },
            ..base.clone()
        }
    }

    pub fn parameter(&self) -> String {
        if self.variant == Variant::GaussianBaseline {
            return "-".into();
        }
        self.model_config(&DndConfig::default()).cell_name()
    }
}

/// Ablation table row: model, parameter, CER, WER and decode time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub parameter: String,
    pub cer: f64,
    pub wer: f64,
    pub time_ms: f64,
    #[serde(skip)]
    pub report: Option<EvalReport>,
    #[serde(skip)]
    pub log: Vec<EpochRecord>,
    #[serde(skip)]
    pub train_seconds: f64,
    #[serde(skip)]
    pub checkpoint: Option<Checkpoint>,
}

/// Trains and evaluates every cell on the same split.
pub fn run_ablation(
    cells: &[AblationCell],
    split: &Split,
    base: &TrainConfig,
    exec: Exec,
    mut on_cell: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let cfg = TrainConfig {
            model: cell.model_config(&base.model),
            ..base.clone()
        };
        let start = Instant::now();
        let out = fit(&split.train, &split.val, &cfg, exec)?;
        let train_seconds = start.elapsed().as_secs_f64();
        let report = evaluate(&out.best.model, &split.test)?;
        let row = AblationRow {
            model: cell.variant.name().to_string(),
            parameter: cell.parameter(),
            cer: report.cer,
            wer: report.wer,
            time_ms: report.ms_per_word,
            report: Some(report),
            log: out.log,
            train_seconds,
            checkpoint: Some(out.best),
        };
        on_cell(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("model,parameter,cer,wer,time_ms\n");
    for r in rows {
        s.push_str(&format!("{},{},{:.2},{:.2},{:.3}\n", r.model, r.parameter, r.cer, r.wer, r.time_ms));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{simulate_dataset, SimConfig};

    #[test]
    fn adam_first_step_is_unit_scaled() {
        let mut p = ParamStore::<f32>::new();
        let id = p.add("w", Tensor::vector(&[0.0]).unwrap());
        let mut g = p.grad_buffer();
        g.get_mut(id).data_mut()[0] = 1.0;
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p.value(id).data()[0] as f64 - expected).abs() < 1e-9);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_fixed_point() {
        let mut p = ParamStore::<f32>::new();
        let id = p.add("w", Tensor::vector(&[0.5, -0.25]).unwrap());
        let g = p.grad_buffer();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, &mut s, 0.01).unwrap();
        assert_eq!(p.value(id).data(), &[0.5, -0.25]);
        assert_eq!(s.step, 1);
        let mut bad = p.grad_buffer();
        bad.get_mut(id).data_mut()[1] = f32::NAN;
        assert!(adam_step(&mut p, &bad, &mut s, 0.01).is_err());
    }

    #[test]
    fn schedule_scales_lr_and_stops_after_patience() {
        let mut s = PlateauSchedule::new(0.001, 0.1, 10);
        assert!(s.observe(2.0));
        assert!((s.lr - 0.0011).abs() < 1e-15);
        let mut t = PlateauSchedule::new(0.001, 0.1, 10);
        t.best = Some(1.0);
        assert!(!t.observe(1.0));
        assert!((t.lr - 0.0009).abs() < 1e-15);

        let mut s = PlateauSchedule::new(0.001, 0.1, 10);
        let losses = [2.0, 1.5].into_iter().chain(std::iter::repeat_n(1.5, 20));
        let mut best_epoch = 0;
        let mut stopped = 0;
        for (i, l) in losses.enumerate() {
            if s.observe(l) {
                best_epoch = i + 1;
            }
            if s.should_stop() {
                stopped = i + 1;
                break;
            }
        }
        assert_eq!((stopped, best_epoch), (12, 2));
    }

    fn tiny() -> (Dataset, Dataset) {
        let corpus = crate::dataset::bundled_corpus();
        let cfg = SimConfig {
            n_users: 2,
            phrases_per_user: 20,
            ..SimConfig::default()
        };
        let d = simulate_dataset(&cfg, &corpus, Exec::Sequential).unwrap();
        let users = d.users();
        let keep = |u: &str| d.filter_users(&[u.to_string()].into_iter().collect());
        (keep(&users[0]), keep(&users[1]))
    }

    #[test]
    fn tiny_run_halves_training_loss_and_is_deterministic() {
        let (train, val) = tiny();
        let cfg = TrainConfig {
            max_epochs: 30,
            batch_size: 4,
            model: DndConfig::new(Variant::Dnd, 2, 32),
            ..TrainConfig::default()
        };
        let a = fit(&train, &val, &cfg, Exec::Parallel).unwrap();
        let first = a.log.first().unwrap().train_loss;
        let last = a.log.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
        let best = a.log.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best.header.metrics["val_loss"], best);

        let short = TrainConfig { max_epochs: 3, ..cfg };
        let x = fit(&train, &val, &short, Exec::Sequential).unwrap();
        let y = fit(&train, &val, &short, Exec::Parallel).unwrap();
        assert_eq!(log_bytes(&x.log), log_bytes(&y.log));
        assert_eq!(x.best.to_bytes(), y.best.to_bytes());
    }

    #[test]
    fn checkpoint_round_trip_preserves_validation_loss() {
        let (train, val) = tiny();
        let cfg = TrainConfig {
            max_epochs: 2,
            model: DndConfig::new(Variant::Dnd, 1, 8),
            ..TrainConfig::default()
        };
        let out = fit(&train, &val, &cfg, Exec::Sequential).unwrap();
        let back = Checkpoint::read_from(out.best.to_bytes().as_slice()).unwrap();
        let (Model::Neural(a), Model::Neural(b)) = (&out.best.model, &back.model) else {
            panic!("neural checkpoint expected");
        };
        let la = validation_loss(a, &val, Exec::Sequential).unwrap();
        let lb = validation_loss(b, &val, Exec::Sequential).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(la, out.best.header.metrics["val_loss"]);
    }

    #[test]
    fn empty_ablation_is_an_empty_table() {
        let (train, val) = tiny();
        let split = Split {
            train: train.clone(),
            val: val.clone(),
            test: val,
        };
        let rows = run_ablation(&[], &split, &TrainConfig::default(), Exec::Sequential, |_| {}).unwrap();
        assert!(rows.is_empty());
        assert_eq!(ablation_csv(&rows), "model,parameter,cer,wer,time_ms\n");
        assert_eq!(AblationCell::new(Variant::Dnd, 2, 64, true).parameter(), "s2u64au");
        assert_eq!(AblationCell::new(Variant::Dnd, 2, 64, false).parameter(), "s2u64");
    }
}
