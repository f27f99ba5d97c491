//! Neural decoders: the full DND and its uni-rnn / bi-rnn ablations.
//!
//! Shapes are time-major: row `t * batch + b` holds step `t` of sequence `b`.
//! Layers are stored as [`ParamId`]s into a [`ParamStore`] so the same
//! layout can evaluate losses against perturbed copies of the parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{DndConfig, Variant};
use crate::alphabet::{PAD_INDEX, TYPEABLE};
use crate::compute::kernels::{self, gemm, View, ViewMut};
use crate::compute::ops::log_softmax_at;
use crate::compute::{grad_check, BiGru, GradBuffer, GradCheckConfig, GradCheckReport, GruCell, ParamId, ParamStore, Scalar, SeqBatch, Tensor};
use crate::dataset::TouchPoint;
use crate::error::{Error, Result};

/// Whether the CLM sees the soft mixture of embeddings (train) or the
/// embedding of the selected symbol (inference).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Padded batch of touch sequences with optional targets.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub x: SeqBatch<T>,
    pub lengths: Vec<usize>,
    /// Time-major targets, `PAD_INDEX` past each sequence's end.
    pub targets: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(points: &[&[TouchPoint]], targets: Option<&[&[usize]]>, input_scale: f64) -> Result<Self> {
        let batch = points.len();
        let steps = points.iter().map(|p| p.len()).max().unwrap_or(0);
        if batch == 0 || steps == 0 {
            return Err(Error::InputLength { len: 0, window: steps });
        }
        if let Some(t) = targets {
            if t.len() != batch || t.iter().zip(points).any(|(t, p)| t.len() != p.len()) {
                return Err(Error::Shape {
                    op: "batch",
                    detail: "targets must match touch sequences one to one".into(),
                });
            }
        }
        let mut x = SeqBatch::zeros(steps, batch, 2);
        let mut tgt = vec![PAD_INDEX; steps * batch];
        for (b, seq) in points.iter().enumerate() {
            for (t, p) in seq.iter().enumerate() {
                let row = &mut x.data[(t * batch + b) * 2..(t * batch + b) * 2 + 2];
                row[0] = T::of(input_scale * (p.x - 0.5));
                row[1] = T::of(input_scale * (p.y - 0.5));
                if let Some(tg) = targets {
                    tgt[t * batch + b] = tg[b][t];
                }
            }
        }
        Ok(Self {
            x,
            lengths: points.iter().map(|p| p.len()).collect(),
            targets: tgt,
        })
    }

    pub fn steps(&self) -> usize {
        self.x.steps
    }

    pub fn size(&self) -> usize {
        self.x.batch
    }

    /// Rows carrying a real target.
    pub fn count(&self) -> usize {
        self.targets.iter().filter(|&&t| t != PAD_INDEX).count()
    }
}

/// Fully connected map `y = x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = store.add(format!("{prefix}.w"), Tensor::uniform(&[input, output], bound, rng));
        let b = store.add(format!("{prefix}.b"), Tensor::uniform(&[output], bound, rng));
        Self { w, b, input, output }
    }

    fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.output];
        gemm(
            T::one(),
            View::new(x, rows, self.input),
            View::new(store.value(self.w).data(), self.input, self.output),
            T::zero(),
            ViewMut::new(&mut y, rows, self.output),
        );
        kernels::add_rows(&mut y, store.value(self.b).data());
        y
    }

    fn backward<T: Scalar>(&self, store: &ParamStore<T>, grads: &mut GradBuffer<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
        gemm(
            T::one(),
            View::new(x, rows, self.input).t(),
            View::new(dy, rows, self.output),
            T::one(),
            ViewMut::new(grads.get_mut(self.w).data_mut(), self.input, self.output),
        );
        kernels::col_sums_into(dy, grads.get_mut(self.b).data_mut());
        let mut dx = vec![T::zero(); rows * self.input];
        gemm(
            T::one(),
            View::new(dy, rows, self.output),
            View::new(store.value(self.w).data(), self.input, self.output).t(),
            T::zero(),
            ViewMut::new(&mut dx, rows, self.input),
        );
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recurrent {
    Uni(GruCell),
    Bi(BiGru),
}

#[derive(Clone, Debug)]
enum RecurrentTrace<T> {
    Uni(crate::compute::gru::GruTrace<T>),
    Bi(crate::compute::gru::BiGruTrace<T>),
}

impl<T> RecurrentTrace<T> {
    fn out(&self) -> &SeqBatch<T> {
        match self {
            RecurrentTrace::Uni(t) => &t.h,
            RecurrentTrace::Bi(t) => &t.out,
        }
    }
}

impl Recurrent {
    pub fn output_width(&self) -> usize {
        match self {
            Recurrent::Uni(c) => c.units,
            Recurrent::Bi(b) => 2 * b.units(),
        }
    }

    fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &SeqBatch<T>, lengths: &[usize]) -> RecurrentTrace<T> {
        match self {
            Recurrent::Uni(c) => RecurrentTrace::Uni(c.scan(store, x, lengths, false)),
            Recurrent::Bi(b) => RecurrentTrace::Bi(b.forward(store, x, lengths)),
        }
    }

    fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut GradBuffer<T>,
        x: &SeqBatch<T>,
        trace: &RecurrentTrace<T>,
        dout: &SeqBatch<T>,
        lengths: &[usize],
    ) -> SeqBatch<T> {
        match (self, trace) {
            (Recurrent::Uni(c), RecurrentTrace::Uni(t)) => c.scan_backward(store, grads, x, t, dout, lengths, false),
            (Recurrent::Bi(b), RecurrentTrace::Bi(t)) => b.backward(store, grads, x, t, dout, lengths),
            _ => unreachable!("trace produced by a different layer kind"),
        }
    }
}

/// Parameter addresses of a neural decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub config: DndConfig,
    pub decoder: Vec<Recurrent>,
    pub intermediate: Linear,
    pub embedding: Option<ParamId>,
    pub clm: Vec<Recurrent>,
    pub output: Option<Linear>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    mode: Mode,
    dec: Vec<RecurrentTrace<T>>,
    intermediate: Vec<T>,
    probs: Option<Vec<T>>,
    clm_in: Option<SeqBatch<T>>,
    clm: Vec<RecurrentTrace<T>>,
    final_logits: Option<Vec<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Time-major `[rows x dict]` logits of the acceleration layer.
    pub fn intermediate(&self) -> &[T] {
        &self.intermediate
    }

    /// Time-major `[rows x dict]` logits of the last layer. For variants
    /// without a CLM this is the intermediate map.
    pub fn final_logits(&self) -> &[T] {
        self.final_logits.as_deref().unwrap_or(&self.intermediate)
    }
}

/// Summed (not averaged) cross-entropies of a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub final_ce: f64,
    pub intermediate_ce: f64,
    pub count: usize,
}

impl LossSums {
    pub fn add(&mut self, o: &LossSums) {
        self.final_ce += o.final_ce;
        self.intermediate_ce += o.intermediate_ce;
        self.count += o.count;
    }
}

fn ce_sum<T: Scalar>(logits: &[T], targets: &[usize], width: usize) -> f64 {
    let mut s = 0.0;
    for (row, &t) in logits.chunks_exact(width).zip(targets) {
        if t != PAD_INDEX {
            s -= log_softmax_at(row, t).f64();
        }
    }
    s
}

/// `scale * (softmax - onehot)` on target rows, zero on padding.
fn ce_grad<T: Scalar>(logits: &[T], targets: &[usize], width: usize, scale: T) -> Vec<T> {
    let mut d = logits.to_vec();
    kernels::softmax_in_place(&mut d, width);
    for (row, &t) in d.chunks_exact_mut(width).zip(targets) {
        if t == PAD_INDEX {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else {
            row[t] -= T::one();
            row.iter_mut().for_each(|v| *v *= scale);
        }
    }
    d
}

impl Layout {
    pub fn build<T: Scalar>(config: &DndConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        if !config.variant.is_neural() {
            return Err(Error::Config("the gaussian baseline has no neural layout".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = config.units;
        let mut decoder = Vec::new();
        let mut width = 2;
        for i in 0..config.dec_stacks {
            let prefix = format!("dec{i}");
            let layer = if config.bidirectional() {
                Recurrent::Bi(BiGru::new(store, &prefix, width, u, &mut rng))
            } else {
                Recurrent::Uni(GruCell::new(store, &format!("{prefix}.fwd"), width, u, &mut rng))
            };
            width = layer.output_width();
            decoder.push(layer);
        }
        let intermediate = Linear::new(store, "inter", width, config.dict_size, &mut rng);
        let (mut embedding, mut clm, mut output) = (None, Vec::new(), None);
        if config.has_clm() {
            embedding = Some(store.add(
                "embed",
                Tensor::uniform(&[config.dict_size, config.embed_dim], 1.0, &mut rng),
            ));
            let mut width = config.embed_dim;
            for i in 0..config.clm_stacks {
                let layer = Recurrent::Bi(BiGru::new(store, &format!("clm{i}"), width, u, &mut rng));
                width = layer.output_width();
                clm.push(layer);
            }
            output = Some(Linear::new(store, "out", width, config.dict_size, &mut rng));
        }
        Ok(Self {
            config: config.clone(),
            decoder,
            intermediate,
            embedding,
            clm,
            output,
        })
    }

    /// Parameter names and shapes this layout expects, in store order.
    pub fn expected_shapes(config: &DndConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let mut store = ParamStore::<f32>::new();
        Layout::build(config, &mut store, 0)?;
        Ok(store.params().iter().map(|p| (p.name.clone(), p.value.shape().to_vec())).collect())
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, batch: &Batch<T>, mode: Mode) -> Forward<T> {
        let d = self.config.dict_size;
        let rows = batch.x.rows();
        let mut dec = Vec::with_capacity(self.decoder.len());
        for (i, layer) in self.decoder.iter().enumerate() {
            let input = if i == 0 { &batch.x } else { dec.last().map(RecurrentTrace::out).unwrap() };
            let trace = layer.forward(store, input, &batch.lengths);
            dec.push(trace);
        }
        let top = dec.last().unwrap().out();
        let intermediate = self.intermediate.forward(store, &top.data, rows);
        let mut fwd = Forward {
            mode,
            dec,
            intermediate,
            probs: None,
            clm_in: None,
            clm: Vec::new(),
            final_logits: None,
        };
        let (Some(emb), Some(out)) = (self.embedding, &self.output) else {
            return fwd;
        };
        let e = self.config.embed_dim;
        let table = store.value(emb).data();
        let mut clm_in = SeqBatch::zeros(batch.x.steps, batch.x.batch, e);
        match mode {
            Mode::Train => {
                let mut p = fwd.intermediate.clone();
                kernels::softmax_in_place(&mut p, d);
                gemm(
                    T::one(),
                    View::new(&p, rows, d),
                    View::new(table, d, e),
                    T::zero(),
                    ViewMut::new(&mut clm_in.data, rows, e),
                );
                fwd.probs = Some(p);
            }
            Mode::Inference => {
                for (r, logits) in fwd.intermediate.chunks_exact(d).enumerate() {
                    let k = kernels::argmax(logits);
                    clm_in.data[r * e..(r + 1) * e].copy_from_slice(&table[k * e..(k + 1) * e]);
                }
            }
        }
        for (i, layer) in self.clm.iter().enumerate() {
            let input = if i == 0 { &clm_in } else { fwd.clm.last().map(RecurrentTrace::out).unwrap() };
            let trace = layer.forward(store, input, &batch.lengths);
            fwd.clm.push(trace);
        }
        let top = fwd.clm.last().unwrap().out();
        fwd.final_logits = Some(out.forward(store, &top.data, rows));
        fwd.clm_in = Some(clm_in);
        fwd
    }

    pub fn loss_sums<T: Scalar>(&self, fwd: &Forward<T>, batch: &Batch<T>) -> LossSums {
        let d = self.config.dict_size;
        LossSums {
            final_ce: ce_sum(fwd.final_logits(), &batch.targets, d),
            intermediate_ce: ce_sum(fwd.intermediate(), &batch.targets, d),
            count: batch.count(),
        }
    }

    /// Training objective of a batch, `(final + aux * intermediate) / norm`.
    /// Variants without a CLM train their single output map alone.
    pub fn objective(&self, sums: &LossSums, norm: f64) -> f64 {
        if self.config.has_clm() {
            (sums.final_ce + self.config.aux_loss_weight * sums.intermediate_ce) / norm
        } else {
            sums.final_ce / norm
        }
    }

    /// Train-mode loss and its gradient, with cross-entropy sums divided by
    /// `norm` (the number of target rows of the full batch, which may span
    /// several shards).
    pub fn loss_and_grad<T: Scalar>(&self, store: &ParamStore<T>, batch: &Batch<T>, norm: f64) -> (LossSums, GradBuffer<T>) {
        let fwd = self.forward(store, batch, Mode::Train);
        let sums = self.loss_sums(&fwd, batch);
        let grads = self.backward(store, batch, &fwd, norm);
        (sums, grads)
    }

    pub fn backward<T: Scalar>(&self, store: &ParamStore<T>, batch: &Batch<T>, fwd: &Forward<T>, norm: f64) -> GradBuffer<T> {
        assert_eq!(fwd.mode, Mode::Train, "backward needs a train-mode forward");
        let d = self.config.dict_size;
        let rows = batch.x.rows();
        let (steps, bsz) = (batch.x.steps, batch.x.batch);
        let scale = T::of(1.0 / norm);
        let mut grads = store.grad_buffer();

        let mut d_inter = match (&self.output, self.embedding, &fwd.clm_in, &fwd.probs) {
            (Some(out), Some(emb), Some(clm_in), Some(p)) => {
                let final_logits = fwd.final_logits.as_ref().unwrap();
                let dlog = ce_grad(final_logits, &batch.targets, d, scale);
                let top = fwd.clm.last().unwrap().out();
                let dtop = out.backward(store, &mut grads, &top.data, &dlog, rows);
                let mut dcur = SeqBatch::from_data(steps, bsz, top.width, dtop);
                for i in (0..self.clm.len()).rev() {
                    let input = if i == 0 { clm_in } else { fwd.clm[i - 1].out() };
                    dcur = self.clm[i].backward(store, &mut grads, input, &fwd.clm[i], &dcur, &batch.lengths);
                }
                // Soft mixture: clm_in = P E.
                let e = self.config.embed_dim;
                let table = store.value(emb).data();
                gemm(
                    T::one(),
                    View::new(p, rows, d).t(),
                    View::new(&dcur.data, rows, e),
                    T::one(),
                    ViewMut::new(grads.get_mut(emb).data_mut(), d, e),
                );
                let mut dp = vec![T::zero(); rows * d];
                gemm(
                    T::one(),
                    View::new(&dcur.data, rows, e),
                    View::new(table, d, e).t(),
                    T::zero(),
                    ViewMut::new(&mut dp, rows, d),
                );
                // Softmax Jacobian.
                for (dpr, pr) in dp.chunks_exact_mut(d).zip(p.chunks_exact(d)) {
                    let dot: T = dpr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for (g, &pv) in dpr.iter_mut().zip(pr) {
                        *g = pv * (*g - dot);
                    }
                }
                let aux = T::of(self.config.aux_loss_weight) * scale;
                if aux != T::zero() {
                    let da = ce_grad(&fwd.intermediate, &batch.targets, d, aux);
                    for (g, a) in dp.iter_mut().zip(da) {
                        *g += a;
                    }
                }
                dp
            }
            _ => ce_grad(&fwd.intermediate, &batch.targets, d, scale),
        };

        let top = fwd.dec.last().unwrap().out();
        let dtop = self.intermediate.backward(store, &mut grads, &top.data, &d_inter, rows);
        d_inter.clear();
        let mut dcur = SeqBatch::from_data(steps, bsz, top.width, dtop);
        for i in (0..self.decoder.len()).rev() {
            let input = if i == 0 { &batch.x } else { fwd.dec[i - 1].out() };
            dcur = self.decoder[i].backward(store, &mut grads, input, &fwd.dec[i], &dcur, &batch.lengths);
        }
        grads
    }
}

/// A neural decoder with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralDecoder<T> {
    pub layout: Layout,
    pub params: ParamStore<T>,
}

impl<T: Scalar> NeuralDecoder<T> {
    pub fn new(config: &DndConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let layout = Layout::build(config, &mut params, seed)?;
        Ok(Self { layout, params })
    }

    pub fn config(&self) -> &DndConfig {
        &self.layout.config
    }

    pub fn batch(&self, points: &[&[TouchPoint]], targets: Option<&[&[usize]]>) -> Result<Batch<T>> {
        Batch::new(points, targets, self.config().input_scale)
    }

    /// Intermediate and final logits, each `[n x dict]`, of one sequence.
    pub fn forward(&self, touches: &[TouchPoint], mode: Mode) -> Result<(Tensor<T>, Tensor<T>)> {
        let window = self.config().window;
        if touches.is_empty() || touches.len() > window {
            return Err(Error::InputLength {
                len: touches.len(),
                window,
            });
        }
        let batch = self.batch(&[touches], None)?;
        let fwd = self.layout.forward(&self.params, &batch, mode);
        let shape = vec![touches.len(), self.config().dict_size];
        let inter = Tensor::new(shape.clone(), fwd.intermediate().to_vec())?.check_finite("forward")?;
        let fin = Tensor::new(shape, fwd.final_logits().to_vec())?.check_finite("forward")?;
        Ok((inter, fin))
    }

    /// Selected symbol indices for each sequence of a batch.
    pub fn decode_batch(&self, points: &[&[TouchPoint]]) -> Result<Vec<Vec<usize>>> {
        let batch = self.batch(points, None)?;
        let fwd = self.layout.forward(&self.params, &batch, Mode::Inference);
        let d = self.config().dict_size;
        let logits = fwd.final_logits();
        let n = batch.size();
        Ok(batch
            .lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| (0..len).map(|t| kernels::argmax(&logits[(t * n + b) * d..(t * n + b + 1) * d])).collect())
            .collect())
    }

    pub fn cast<U: Scalar>(&self) -> NeuralDecoder<U> {
        NeuralDecoder {
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    pub fn is_variant(&self, v: Variant) -> bool {
        self.config().variant == v
    }
}

/// Finite-difference check of the full train-mode objective of a freshly
/// initialized 64-bit model on random touch sequences of the given lengths.
pub fn check_model_gradients(config: &DndConfig, lengths: &[usize], seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    use rand::Rng;
    let longest = lengths.iter().copied().max().unwrap_or(0);
    if longest == 0 || lengths.contains(&0) {
        return Err(Error::InputLength { len: 0, window: config.window });
    }
    let config = DndConfig {
        window: config.window.max(longest),
        ..config.clone()
    };
    let model = NeuralDecoder::<f64>::new(&config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let points: Vec<Vec<TouchPoint>> = lengths
        .iter()
        .map(|&n| (0..n).map(|_| TouchPoint::new(rng.random(), rng.random())).collect())
        .collect();
    let targets: Vec<Vec<usize>> = lengths.iter().map(|&n| (0..n).map(|_| rng.random_range(0..TYPEABLE)).collect()).collect();
    let p: Vec<&[TouchPoint]> = points.iter().map(Vec::as_slice).collect();
    let t: Vec<&[usize]> = targets.iter().map(Vec::as_slice).collect();
    let batch = model.batch(&p, Some(&t))?;
    let norm = batch.count() as f64;
    let (_, grads) = model.layout.loss_and_grad(&model.params, &batch, norm);
    let loss = |s: &ParamStore<f64>| {
        let f = model.layout.forward(s, &batch, Mode::Train);
        let v = model.layout.objective(&model.layout.loss_sums(&f, &batch), norm);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("model objective".into()))
        }
    };
    grad_check(&model.params, &grads, loss, cfg)
}
