//! Classical statistical decoding: one diagonal Gaussian per key, each touch
//! decoded independently by maximum likelihood.

use super::config::{DndConfig, Variant};
use super::decode::Decoder;
use crate::alphabet::{CharacterDictionary, TYPEABLE};
use crate::dataset::{Dataset, TouchPoint};
use crate::error::{Error, Result};

/// Smallest variance kept, in normalized screen units squared.
const VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBaseline {
    pub config: DndConfig,
    /// Indexed by dictionary index over the typeable symbols.
    pub means: Vec<[f64; 2]>,
    pub vars: Vec<[f64; 2]>,
}

impl GaussianBaseline {
    /// Per-symbol mean and variance of touch positions pooled over `train`.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let mut sum = vec![[0.0f64; 2]; TYPEABLE];
        let mut sq = vec![[0.0f64; 2]; TYPEABLE];
        let mut n = vec![0usize; TYPEABLE];
        for s in train.samples() {
            for (t, p) in s.targets().into_iter().zip(s.touches()) {
                n[t] += 1;
                sum[t][0] += p.x;
                sum[t][1] += p.y;
            }
        }
        let dict = CharacterDictionary::standard();
        let missing: Vec<String> = (0..TYPEABLE)
            .filter(|&i| n[i] < 2)
            .map(|i| crate::alphabet::display_symbol(dict.symbol_at(i).unwrap()))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingSymbols(missing.join(" ")));
        }
        let means: Vec<[f64; 2]> = (0..TYPEABLE).map(|i| [sum[i][0] / n[i] as f64, sum[i][1] / n[i] as f64]).collect();
        for s in train.samples() {
            for (t, p) in s.targets().into_iter().zip(s.touches()) {
                sq[t][0] += (p.x - means[t][0]).powi(2);
                sq[t][1] += (p.y - means[t][1]).powi(2);
            }
        }
        let vars = (0..TYPEABLE)
            .map(|i| {
                let d = (n[i] - 1) as f64;
                [(sq[i][0] / d).max(VAR_FLOOR), (sq[i][1] / d).max(VAR_FLOOR)]
            })
            .collect();
        Ok(Self {
            config: DndConfig {
                variant: Variant::GaussianBaseline,
                ..DndConfig::default()
            },
            means,
            vars,
        })
    }

    pub fn log_likelihood(&self, symbol: usize, p: &TouchPoint) -> f64 {
        let (m, v) = (self.means[symbol], self.vars[symbol]);
        -0.5 * ((p.x - m[0]).powi(2) / v[0] + (p.y - m[1]).powi(2) / v[1] + v[0].ln() + v[1].ln())
    }

    pub fn decode_point(&self, p: &TouchPoint) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for s in 0..TYPEABLE {
            let ll = self.log_likelihood(s, p);
            if ll > best.1 {
                best = (s, ll);
            }
        }
        best.0
    }
}

impl Decoder for GaussianBaseline {
    fn window(&self) -> usize {
        self.config.window
    }

    fn decode_window(&self, touches: &[TouchPoint]) -> Result<Vec<usize>> {
        Ok(touches.iter().map(|p| self.decode_point(p)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TouchSample;
    use crate::simulator::{sample_mental_model, SimConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn clean_user() -> (crate::simulator::MentalModel, Dataset) {
        let cfg = SimConfig {
            tap_sigma_mm: 0.0,
            drift_step_mm: 0.0,
            ..SimConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = sample_mental_model(&cfg, &mut rng);
        let all: String = CharacterDictionary::standard().typeable().iter().collect();
        let mut d = Dataset::empty(cfg.screen);
        for _ in 0..3 {
            d.push(m.type_phrase("u", &all, &mut rng).unwrap());
        }
        (m, d)
    }

    #[test]
    fn noise_free_fit_recovers_key_centers() {
        let (m, d) = clean_user();
        let g = GaussianBaseline::fit(&d).unwrap();
        let dict = CharacterDictionary::standard();
        for (i, &c) in dict.typeable().iter().enumerate() {
            let (x, y) = m.placed_center(c).unwrap();
            let (nx, ny) = m.screen.mm_to_normalized(x, y);
            assert!((g.means[i][0] - nx).abs() < 1e-9 && (g.means[i][1] - ny).abs() < 1e-9, "{c:?}");
        }
        let centers: Vec<TouchPoint> = d.samples()[0].touches().to_vec();
        assert_eq!(g.decode(&centers).unwrap(), d.samples()[0].phrase());
    }

    #[test]
    fn missing_symbols_are_listed() {
        let d = Dataset::new(
            Default::default(),
            vec![TouchSample::new("u", "ab", vec![TouchPoint::new(0.1, 0.1), TouchPoint::new(0.2, 0.2)]).unwrap()],
        );
        match GaussianBaseline::fit(&d) {
            Err(Error::MissingSymbols(s)) => {
                assert!(s.contains('a') && s.contains('z'));
            }
            other => panic!("{other:?}"),
        }
    }
}
