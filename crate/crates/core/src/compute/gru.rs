//! Gated recurrent units over padded, time-major batches.
//!
//! Cell update for input `x` and previous state `h`:
//!
//! ```text
//! r  = sigmoid(W_r x + U_r h + b_r)
//! z  = sigmoid(W_z x + U_z h + b_z)
//! c  = tanh(W_c x + U_c (r * h) + b_c)
//! h' = (1 - z) * h + z * c
//! ```
//!
//! Weights are fused per gate block `[r | z | c]`: `W` is `[input x 3U]`,
//! `U` is `[U x 3U]` and `b` is `[3U]`. Rows past a sequence's length carry
//! their state through unchanged, so a padded batch computes exactly what
//! each sequence would compute alone.

use rand::Rng;

use super::kernels::{self, gemm, sigmoid, View, ViewMut};
use super::{GradBuffer, ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Time-major batch: `data[(t * batch + b) * width + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch<T> {
    pub steps: usize,
    pub batch: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> SeqBatch<T> {
    pub fn zeros(steps: usize, batch: usize, width: usize) -> Self {
        Self {
            steps,
            batch,
            width,
            data: vec![T::zero(); steps * batch * width],
        }
    }

    pub fn from_data(steps: usize, batch: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), steps * batch * width);
        Self {
            steps,
            batch,
            width,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.steps * self.batch
    }

    pub fn step(&self, t: usize) -> &[T] {
        let n = self.batch * self.width;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [T] {
        let n = self.batch * self.width;
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn at(&self, t: usize, b: usize) -> &[T] {
        let start = (t * self.batch + b) * self.width;
        &self.data[start..start + self.width]
    }

    pub fn view(&self) -> View<'_, T> {
        View::new(&self.data, self.rows(), self.width)
    }

    /// Side-by-side concatenation of two batches with equal steps and batch.
    pub fn concat(a: &SeqBatch<T>, b: &SeqBatch<T>) -> SeqBatch<T> {
        assert_eq!((a.steps, a.batch), (b.steps, b.batch));
        let width = a.width + b.width;
        let mut data = Vec::with_capacity(a.rows() * width);
        for (ra, rb) in a.data.chunks_exact(a.width).zip(b.data.chunks_exact(b.width)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        SeqBatch::from_data(a.steps, a.batch, width, data)
    }

    /// Inverse of [`SeqBatch::concat`].
    pub fn split(&self, left: usize) -> (SeqBatch<T>, SeqBatch<T>) {
        let right = self.width - left;
        let mut a = Vec::with_capacity(self.rows() * left);
        let mut b = Vec::with_capacity(self.rows() * right);
        for row in self.data.chunks_exact(self.width) {
            a.extend_from_slice(&row[..left]);
            b.extend_from_slice(&row[left..]);
        }
        (
            SeqBatch::from_data(self.steps, self.batch, left, a),
            SeqBatch::from_data(self.steps, self.batch, right, b),
        )
    }

    pub fn add_assign(&mut self, other: &SeqBatch<T>) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// One GRU direction.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub units: usize,
}

/// Values kept from a forward scan for the backward pass.
#[derive(Clone, Debug)]
pub struct GruTrace<T> {
    /// Output state after every step.
    pub h: SeqBatch<T>,
    /// State entering every step.
    hprev: Vec<T>,
    /// Activated gates `[r | z | c]` per step.
    gates: Vec<T>,
    /// `r * hprev` per step.
    rh: Vec<T>,
}

impl GruCell {
    /// Registers `{prefix}.w`, `{prefix}.u`, `{prefix}.b`, each uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        units: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let wb = 1.0 / (input as f64).sqrt();
        let ub = 1.0 / (units as f64).sqrt();
        let w = store.add(format!("{prefix}.w"), Tensor::uniform(&[input, 3 * units], wb, rng));
        let u = store.add(format!("{prefix}.u"), Tensor::uniform(&[units, 3 * units], ub, rng));
        let b = store.add(format!("{prefix}.b"), Tensor::uniform(&[3 * units], ub, rng));
        Self {
            w,
            u,
            b,
            input,
            units,
        }
    }

    pub fn expected_shapes(input: usize, units: usize) -> [Vec<usize>; 3] {
        [vec![input, 3 * units], vec![units, 3 * units], vec![3 * units]]
    }

    /// Runs the cell over every step of `x`; backwards in time when `reverse`.
    pub fn scan<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        x: &SeqBatch<T>,
        lengths: &[usize],
        reverse: bool,
    ) -> GruTrace<T> {
        let (steps, batch, u) = (x.steps, x.batch, self.units);
        assert_eq!(x.width, self.input);
        assert_eq!(lengths.len(), batch);
        let w = store.value(self.w).data();
        let um = store.value(self.u).data();
        let bias = store.value(self.b).data();
        let g3 = 3 * u;

        // Input contributions for every step in one product.
        let mut gates = vec![T::zero(); x.rows() * g3];
        gemm(
            T::one(),
            x.view(),
            View::new(w, self.input, g3),
            T::zero(),
            ViewMut::new(&mut gates, x.rows(), g3),
        );
        kernels::add_rows(&mut gates, bias);

        let mut h = SeqBatch::zeros(steps, batch, u);
        let mut hprev = vec![T::zero(); steps * batch * u];
        let mut rh = vec![T::zero(); steps * batch * u];
        let mut rec = vec![T::zero(); batch * g3];
        let mut carry = vec![T::zero(); batch * u];
        let uview = View::new(um, u, g3);

        for k in 0..steps {
            let t = if reverse { steps - 1 - k } else { k };
            let step_gates = &mut gates[t * batch * g3..(t + 1) * batch * g3];
            hprev[t * batch * u..(t + 1) * batch * u].copy_from_slice(&carry);

            // Reset and update gates.
            gemm(
                T::one(),
                View::new(&carry, batch, u),
                uview.cols(0, 2 * u),
                T::zero(),
                ViewMut::strided(&mut rec, batch, 2 * u, g3, 1),
            );
            for bi in 0..batch {
                let g = &mut step_gates[bi * g3..bi * g3 + 2 * u];
                let r = &rec[bi * g3..bi * g3 + 2 * u];
                for j in 0..2 * u {
                    g[j] = sigmoid(g[j] + r[j]);
                }
            }
            let step_rh = &mut rh[t * batch * u..(t + 1) * batch * u];
            for bi in 0..batch {
                for j in 0..u {
                    step_rh[bi * u + j] = step_gates[bi * g3 + j] * carry[bi * u + j];
                }
            }
            // Candidate.
            gemm(
                T::one(),
                View::new(step_rh, batch, u),
                uview.cols(2 * u, g3),
                T::zero(),
                ViewMut::strided(&mut rec, batch, u, g3, 1),
            );
            let out = h.step_mut(t);
            for bi in 0..batch {
                let active = t < lengths[bi];
                for j in 0..u {
                    let c = (step_gates[bi * g3 + 2 * u + j] + rec[bi * g3 + j]).tanh();
                    step_gates[bi * g3 + 2 * u + j] = c;
                    let hp = carry[bi * u + j];
                    let next = if active {
                        let z = step_gates[bi * g3 + u + j];
                        hp + z * (c - hp)
                    } else {
                        hp
                    };
                    out[bi * u + j] = next;
                    carry[bi * u + j] = next;
                }
            }
        }
        GruTrace { h, hprev, gates, rh }
    }

    /// Backpropagates `dh` (gradient of the loss with respect to every
    /// output state) through a scan, accumulating parameter gradients into
    /// `grads` and returning the gradient with respect to `x`.
    #[allow(clippy::too_many_arguments)]
    pub fn scan_backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut GradBuffer<T>,
        x: &SeqBatch<T>,
        trace: &GruTrace<T>,
        dh: &SeqBatch<T>,
        lengths: &[usize],
        reverse: bool,
    ) -> SeqBatch<T> {
        let (steps, batch, u) = (x.steps, x.batch, self.units);
        let g3 = 3 * u;
        let um = store.value(self.u).data();
        let uview = View::new(um, u, g3);
        let mut da = vec![T::zero(); steps * batch * g3];
        let mut carry = vec![T::zero(); batch * u];
        let mut d_rh = vec![T::zero(); batch * u];
        let mut total = vec![T::zero(); batch * u];

        for k in 0..steps {
            let t = if reverse { k } else { steps - 1 - k };
            let gates = &trace.gates[t * batch * g3..(t + 1) * batch * g3];
            let hp = &trace.hprev[t * batch * u..(t + 1) * batch * u];
            let dht = dh.step(t);
            let step_da = &mut da[t * batch * g3..(t + 1) * batch * g3];
            for i in 0..batch * u {
                total[i] = dht[i] + carry[i];
            }
            for bi in 0..batch {
                let row = bi * u..(bi + 1) * u;
                if t >= lengths[bi] {
                    carry[row.clone()].copy_from_slice(&total[row]);
                    continue;
                }
                for j in 0..u {
                    let idx = bi * u + j;
                    let z = gates[bi * g3 + u + j];
                    let c = gates[bi * g3 + 2 * u + j];
                    let g = total[idx];
                    let dz = g * (c - hp[idx]);
                    let dc = g * z;
                    carry[idx] = g * (T::one() - z);
                    step_da[bi * g3 + 2 * u + j] = dc * (T::one() - c * c);
                    step_da[bi * g3 + u + j] = dz * z * (T::one() - z);
                }
            }
            gemm(
                T::one(),
                View::strided(&step_da[2 * u..], batch, u, g3, 1),
                uview.cols(2 * u, g3).t(),
                T::zero(),
                ViewMut::new(&mut d_rh, batch, u),
            );
            for bi in 0..batch {
                if t >= lengths[bi] {
                    continue;
                }
                for j in 0..u {
                    let idx = bi * u + j;
                    let r = gates[bi * g3 + j];
                    let dr = d_rh[idx] * hp[idx];
                    carry[idx] += d_rh[idx] * r;
                    step_da[bi * g3 + j] = dr * r * (T::one() - r);
                }
            }
            gemm(
                T::one(),
                View::strided(step_da, batch, 2 * u, g3, 1),
                uview.cols(0, 2 * u).t(),
                T::one(),
                ViewMut::new(&mut carry, batch, u),
            );
        }

        let rows = steps * batch;
        let da_view = View::new(&da, rows, g3);
        {
            let du = grads.get_mut(self.u).data_mut();
            gemm(
                T::one(),
                View::new(&trace.hprev, rows, u).t(),
                da_view.cols(0, 2 * u),
                T::one(),
                ViewMut::new(du, u, g3).cols(0, 2 * u),
            );
            gemm(
                T::one(),
                View::new(&trace.rh, rows, u).t(),
                da_view.cols(2 * u, g3),
                T::one(),
                ViewMut::new(du, u, g3).cols(2 * u, g3),
            );
        }
        gemm(
            T::one(),
            x.view().t(),
            da_view,
            T::one(),
            ViewMut::new(grads.get_mut(self.w).data_mut(), self.input, g3),
        );
        kernels::col_sums_into(&da, grads.get_mut(self.b).data_mut());
        let mut dx = SeqBatch::zeros(steps, batch, self.input);
        gemm(
            T::one(),
            da_view,
            View::new(store.value(self.w).data(), self.input, g3).t(),
            T::zero(),
            ViewMut::new(&mut dx.data, rows, self.input),
        );
        dx
    }

    /// A single cell update for one unbatched input.
    pub fn step<T: Scalar>(&self, store: &ParamStore<T>, x: &[T], h_prev: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input || h_prev.len() != self.units {
            return Err(Error::Shape {
                op: "gru_cell",
                detail: format!(
                    "x {} / h {} for a cell with input {} and {} units",
                    x.len(),
                    h_prev.len(),
                    self.input,
                    self.units
                ),
            });
        }
        // A one-step scan starting from `h_prev`: feed the state through the
        // generic path by running on a batch of one.
        let u = self.units;
        let g3 = 3 * u;
        let w = store.value(self.w).data();
        let um = store.value(self.u).data();
        let bias = store.value(self.b).data();
        let mut pre = bias.to_vec();
        gemm(
            T::one(),
            View::new(x, 1, self.input),
            View::new(w, self.input, g3),
            T::one(),
            ViewMut::new(&mut pre, 1, g3),
        );
        let mut rec = vec![T::zero(); g3];
        gemm(
            T::one(),
            View::new(h_prev, 1, u),
            View::new(um, u, g3).cols(0, 2 * u),
            T::zero(),
            ViewMut::new(&mut rec[..2 * u], 1, 2 * u),
        );
        let r: Vec<T> = (0..u).map(|j| sigmoid(pre[j] + rec[j])).collect();
        let z: Vec<T> = (0..u).map(|j| sigmoid(pre[u + j] + rec[u + j])).collect();
        let rh: Vec<T> = (0..u).map(|j| r[j] * h_prev[j]).collect();
        gemm(
            T::one(),
            View::new(&rh, 1, u),
            View::new(um, u, g3).cols(2 * u, g3),
            T::zero(),
            ViewMut::new(&mut rec[..u], 1, u),
        );
        let h: Vec<T> = (0..u)
            .map(|j| {
                let c = (pre[2 * u + j] + rec[j]).tanh();
                (T::one() - z[j]) * h_prev[j] + z[j] * c
            })
            .collect();
        if h.iter().all(|v| v.is_finite()) {
            Ok(h)
        } else {
            Err(Error::NonFinite("gru_cell".into()))
        }
    }
}

/// Forward and backward GRU directions whose states are concatenated.
#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

#[derive(Clone, Debug)]
pub struct BiGruTrace<T> {
    pub out: SeqBatch<T>,
    fwd: GruTrace<T>,
    bwd: GruTrace<T>,
}

impl BiGru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        units: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let fwd = GruCell::new(store, &format!("{prefix}.fwd"), input, units, rng);
        let bwd = GruCell::new(store, &format!("{prefix}.bwd"), input, units, rng);
        Self { fwd, bwd }
    }

    pub fn units(&self) -> usize {
        self.fwd.units
    }

    pub fn forward<T: Scalar>(&self, store: &ParamStore<T>, x: &SeqBatch<T>, lengths: &[usize]) -> BiGruTrace<T> {
        let fwd = self.fwd.scan(store, x, lengths, false);
        let bwd = self.bwd.scan(store, x, lengths, true);
        let out = SeqBatch::concat(&fwd.h, &bwd.h);
        BiGruTrace { out, fwd, bwd }
    }

    pub fn backward<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut GradBuffer<T>,
        x: &SeqBatch<T>,
        trace: &BiGruTrace<T>,
        dout: &SeqBatch<T>,
        lengths: &[usize],
    ) -> SeqBatch<T> {
        let (dfwd, dbwd) = dout.split(self.fwd.units);
        let mut dx = self.fwd.scan_backward(store, grads, x, &trace.fwd, &dfwd, lengths, false);
        let dx_b = self.bwd.scan_backward(store, grads, x, &trace.bwd, &dbwd, lengths, true);
        dx.add_assign(&dx_b);
        dx
    }
}

/// Single-step cell update, `h = GRU(x, h_prev)`.
pub fn gru_cell<T: Scalar>(store: &ParamStore<T>, cell: &GruCell, x: &Tensor<T>, h_prev: &Tensor<T>) -> Result<Tensor<T>> {
    let h = cell.step(store, x.data(), h_prev.data())?;
    Tensor::new(vec![cell.units], h)
}

/// Bidirectional scan of one `[n x input]` sequence from zero initial
/// states. Row `i` of the result is the forward state after step `i`
/// followed by the backward state after consuming steps `n-1..=i`.
pub fn bidirectional_scan<T: Scalar>(
    store: &ParamStore<T>,
    fwd: &GruCell,
    bwd: &GruCell,
    inputs: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, width) = match inputs.shape() {
        [n, w] => (*n, *w),
        s => {
            return Err(Error::Shape {
                op: "bidirectional_scan",
                detail: format!("expected [n x input], got {s:?}"),
            })
        }
    };
    if width != fwd.input || width != bwd.input {
        return Err(Error::Shape {
            op: "bidirectional_scan",
            detail: format!("input width {width} for cells of width {}/{}", fwd.input, bwd.input),
        });
    }
    let x = SeqBatch::from_data(n, 1, width, inputs.data().to_vec());
    let layer = BiGru {
        fwd: fwd.clone(),
        bwd: bwd.clone(),
    };
    let out = layer.forward(store, &x, &[n]).out;
    Tensor::new(vec![n, fwd.units + bwd.units], out.data)?.check_finite("bidirectional_scan")
}
