//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Check at most this many entries of each parameter, chosen at random.
    /// `None` checks every entry.
    pub max_entries_per_param: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_entries_per_param: None,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked entries.
    pub max_rel_error: f64,
    /// Parameter name and offset of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `analytic` with central differences of `loss` around `store`.
pub fn grad_check<F>(
    store: &ParamStore<f64>,
    analytic: &GradBuffer<f64>,
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore<f64>) -> Result<f64> + Sync,
{
    if !(1e-7..=1e-3).contains(&cfg.epsilon) {
        return Err(Error::Config(format!(
            "finite-difference epsilon {} outside [1e-7, 1e-3]",
            cfg.epsilon
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries: Vec<(ParamId, usize)> = Vec::new();
    for (id, p) in store.ids().zip(store.params()) {
        let n = p.value.len();
        match cfg.max_entries_per_param {
            Some(cap) if cap < n => {
                let mut picked = sample(&mut rng, n, cap).into_vec();
                picked.sort_unstable();
                entries.extend(picked.into_iter().map(|i| (id, i)));
            }
            _ => entries.extend((0..n).map(|i| (id, i))),
        }
    }

    let chunks: Vec<&[(ParamId, usize)]> = entries.chunks(256).collect();
    let eps = cfg.epsilon;
    let results = cfg.exec.map(&chunks, |chunk| -> Result<(f64, Option<(ParamId, usize)>)> {
        let mut local = store.clone();
        let mut worst = (0.0, None);
        for &(id, i) in chunk.iter() {
            let orig = local.value(id).data()[i];
            *local.value_at_mut(id, i) = orig + eps;
            let up = loss(&local)?;
            *local.value_at_mut(id, i) = orig - eps;
            let down = loss(&local)?;
            *local.value_at_mut(id, i) = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).data()[i];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient check of {}[{i}]",
                    store.get(id).name
                )));
            }
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            if rel > worst.0 || worst.1.is_none() {
                worst = (rel, Some((id, i)));
            }
        }
        Ok(worst)
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: entries.len(),
    };
    for r in results {
        let (rel, at) = r?;
        if let Some((id, i)) = at {
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
