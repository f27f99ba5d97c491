//! Finite-difference checks of every primitive's backward pass.
//!
//! Each check treats the primitive's operands as parameters and verifies the
//! gradient of `sum(c * f(operands))` for a fixed random `c`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gru::{BiGru, GruCell, SeqBatch};
use super::{grad_check, ops, GradBuffer, GradCheckConfig, GradCheckReport, ParamId, ParamStore, Tensor};
use crate::error::Result;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 2.0, rng)
}

fn weighted_sum(c: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    c.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

struct Case {
    store: ParamStore<f64>,
    ids: Vec<ParamId>,
}

impl Case {
    fn new(operands: Vec<(&str, Tensor<f64>)>) -> Self {
        let mut store = ParamStore::new();
        let ids = operands.into_iter().map(|(n, t)| store.add(n, t)).collect();
        Self { store, ids }
    }
}

fn run<L, G>(case: &Case, loss: L, grad: G, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    L: Fn(&ParamStore<f64>, &[ParamId]) -> Result<f64> + Sync,
    G: Fn(&ParamStore<f64>, &[ParamId], &mut GradBuffer<f64>) -> Result<()>,
{
    let mut g = case.store.grad_buffer();
    grad(&case.store, &case.ids, &mut g)?;
    grad_check(&case.store, &g, |s| loss(s, &case.ids), cfg)
}

/// Small random dimensions for one round of checks.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl Dims {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            m: rng.random_range(1..=4),
            k: rng.random_range(1..=4),
            n: rng.random_range(2..=5),
        }
    }
}

/// Checks matmul, add-bias, sigmoid, tanh, concat, slice, embedding,
/// softmax cross-entropy, the GRU cell and the bidirectional scan.
pub fn check_primitives(seed: u64, dims: Dims, cfg: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Dims { m, k, n } = dims;
    let mut out = Vec::new();

    let case = Case::new(vec![("a", rand_tensor(&[m, k], &mut rng)), ("b", rand_tensor(&[k, n], &mut rng))]);
    let c = rand_tensor(&[m, n], &mut rng);
    out.push((
        "matmul".to_string(),
        run(
            &case,
            |s, id| Ok(weighted_sum(&c, &ops::matmul(s.value(id[0]), s.value(id[1]))?)),
            |s, id, g| {
                let (mut da, mut db) = (Tensor::zeros(&[m, k]), Tensor::zeros(&[k, n]));
                ops::matmul_backward(s.value(id[0]), s.value(id[1]), &c, &mut da, &mut db)?;
                g.get_mut(id[0]).add_assign(&da);
                g.get_mut(id[1]).add_assign(&db);
                Ok(())
            },
            cfg,
        )?,
    ));

    let case = Case::new(vec![("x", rand_tensor(&[m, n], &mut rng)), ("b", rand_tensor(&[n], &mut rng))]);
    let c = rand_tensor(&[m, n], &mut rng);
    out.push((
        "add_bias".to_string(),
        run(
            &case,
            |s, id| Ok(weighted_sum(&c, &ops::add_bias(s.value(id[0]), s.value(id[1]))?)),
            |_, id, g| {
                let mut db = Tensor::zeros(&[n]);
                let dx = ops::add_bias_backward(&c, &mut db)?;
                g.get_mut(id[0]).add_assign(&dx);
                g.get_mut(id[1]).add_assign(&db);
                Ok(())
            },
            cfg,
        )?,
    ));

    type Act = fn(&Tensor<f64>) -> Result<Tensor<f64>>;
    type ActBack = fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>;
    let acts: [(&str, Act, ActBack); 2] = [
        ("sigmoid", ops::sigmoid, ops::sigmoid_backward),
        ("tanh", ops::tanh, ops::tanh_backward),
    ];
    for (name, f, fb) in acts {
        let case = Case::new(vec![("x", rand_tensor(&[m, n], &mut rng))]);
        let c = rand_tensor(&[m, n], &mut rng);
        out.push((
            name.to_string(),
            run(
                &case,
                |s, id| Ok(weighted_sum(&c, &f(s.value(id[0]))?)),
                |s, id, g| {
                    let y = f(s.value(id[0]))?;
                    g.get_mut(id[0]).add_assign(&fb(&y, &c)?);
                    Ok(())
                },
                cfg,
            )?,
        ));
    }

    let case = Case::new(vec![("a", rand_tensor(&[m, k], &mut rng)), ("b", rand_tensor(&[m, n], &mut rng))]);
    let c = rand_tensor(&[m, k + n], &mut rng);
    out.push((
        "concat".to_string(),
        run(
            &case,
            |s, id| Ok(weighted_sum(&c, &ops::concat_cols(&[s.value(id[0]), s.value(id[1])])?)),
            |_, id, g| {
                let parts = ops::concat_cols_backward(&c, &[k, n])?;
                g.get_mut(id[0]).add_assign(&parts[0]);
                g.get_mut(id[1]).add_assign(&parts[1]);
                Ok(())
            },
            cfg,
        )?,
    ));

    let (start, end) = (1, n);
    let case = Case::new(vec![("x", rand_tensor(&[m, n], &mut rng))]);
    let c = rand_tensor(&[m, end - start], &mut rng);
    out.push((
        "slice".to_string(),
        run(
            &case,
            |s, id| Ok(weighted_sum(&c, &ops::slice_cols(s.value(id[0]), start, end)?)),
            |_, id, g| {
                g.get_mut(id[0]).add_assign(&ops::slice_cols_backward(&c, n, start)?);
                Ok(())
            },
            cfg,
        )?,
    ));

    let vocab = n + 1;
    let indices: Vec<usize> = (0..m + 2).map(|_| rng.random_range(0..vocab)).collect();
    let case = Case::new(vec![("table", rand_tensor(&[vocab, k], &mut rng))]);
    let c = rand_tensor(&[indices.len(), k], &mut rng);
    out.push((
        "embedding".to_string(),
        run(
            &case,
            |s, id| Ok(weighted_sum(&c, &ops::embedding(s.value(id[0]), &indices)?)),
            |_, id, g| ops::embedding_backward(&c, &indices, g.get_mut(id[0])),
            cfg,
        )?,
    ));

    let rows = m + 1;
    let ignore = n;
    let mut targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
    targets[0] = ignore;
    let case = Case::new(vec![("logits", rand_tensor(&[rows, n], &mut rng))]);
    out.push((
        "softmax_cross_entropy".to_string(),
        run(
            &case,
            |s, id| Ok(ops::softmax_cross_entropy(s.value(id[0]), &targets, Some(ignore))?.loss),
            |s, id, g| {
                let ce = ops::softmax_cross_entropy(s.value(id[0]), &targets, Some(ignore))?;
                g.get_mut(id[0]).add_assign(&ops::softmax_cross_entropy_backward(&ce, &targets, Some(ignore)));
                Ok(())
            },
            cfg,
        )?,
    ));

    // GRU cell over two steps so the recurrent weights see a non-zero state.
    let (input, units, steps) = (k + 1, m + 1, 2);
    let mut store = ParamStore::<f64>::new();
    let cell = GruCell::new(&mut store, "gru", input, units, &mut rng);
    let xs: Vec<f64> = (0..steps * input).map(|_| rng.random_range(-2.0..=2.0)).collect();
    let x = SeqBatch::from_data(steps, 1, input, xs);
    let c = SeqBatch::from_data(steps, 1, units, (0..steps * units).map(|_| rng.random_range(-2.0..=2.0)).collect());
    let mut g = store.grad_buffer();
    let trace = cell.scan(&store, &x, &[steps], false);
    cell.scan_backward(&store, &mut g, &x, &trace, &c, &[steps], false);
    let loss = |s: &ParamStore<f64>| {
        let h = cell.scan(s, &x, &[steps], false).h;
        Ok(h.data.iter().zip(&c.data).map(|(a, b)| a * b).sum())
    };
    out.push(("gru_cell".to_string(), grad_check(&store, &g, loss, cfg)?));

    // Bidirectional scan with n = 3, U = 4.
    let (input, units, steps) = (k, 4, 3);
    let mut store = ParamStore::<f64>::new();
    let bi = BiGru::new(&mut store, "bi", input, units, &mut rng);
    let x = SeqBatch::from_data(steps, 1, input, (0..steps * input).map(|_| rng.random_range(-2.0..=2.0)).collect());
    let c = SeqBatch::from_data(steps, 1, 2 * units, (0..steps * 2 * units).map(|_| rng.random_range(-2.0..=2.0)).collect());
    let mut g = store.grad_buffer();
    let trace = bi.forward(&store, &x, &[steps]);
    bi.backward(&store, &mut g, &x, &trace, &c, &[steps]);
    let loss = |s: &ParamStore<f64>| {
        let out = bi.forward(s, &x, &[steps]).out;
        Ok(out.data.iter().zip(&c.data).map(|(a, b)| a * b).sum())
    };
    out.push(("bidirectional_scan".to_string(), grad_check(&store, &g, loss, cfg)?));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_passes() {
        let cfg = GradCheckConfig::default();
        let reports = check_primitives(1, Dims { m: 3, k: 2, n: 4 }, &cfg).unwrap();
        assert_eq!(reports.len(), 10);
        for (name, r) in reports {
            assert!(r.max_rel_error < 1e-6, "{name}: {r:?}");
        }
    }
}
