//! Synthetic eyes-free typists.
//!
//! Each simulated user carries a mental model of the keyboard: a QWERTY
//! template stretched by `(scale_h, scale_v)`, rotated, and placed around the
//! screen center with an offset that drifts between phrases. Every touch is
//! the transformed key center plus isotropic Gaussian tap noise.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::alphabet::{ENTER, SPACE};
use crate::dataset::{split_dataset, Dataset, ScreenSpec, Split, TouchPoint, TouchSample};
use crate::error::{Error, Result};
use crate::par::Exec;

const ROWS: [(&str, f64); 3] = [("qwertyuiop", 0.0), ("asdfghjkl'", 0.25), ("zxcvbnm.", 0.75)];
const COLUMNS: f64 = 10.0;
const ROW_COUNT: f64 = 4.0;

/// Key centers of the reference layout at `size_mm`, relative to the center
/// of the keyboard's bounding box (x right, y down).
pub fn reference_template(size_mm: (f64, f64)) -> BTreeMap<char, (f64, f64)> {
    let pitch_x = size_mm.0 / COLUMNS;
    let pitch_y = size_mm.1 / ROW_COUNT;
    let place = |col: f64, row: f64| ((col - COLUMNS / 2.0) * pitch_x, (row - ROW_COUNT / 2.0) * pitch_y);
    let mut keys = BTreeMap::new();
    for (r, (row, indent)) in ROWS.iter().enumerate() {
        for (j, c) in row.chars().enumerate() {
            keys.insert(c, place(indent + j as f64 + 0.5, r as f64 + 0.5));
        }
    }
    // Enter sits at the right edge of the home row, space centered under the
    // bottom letter row.
    keys.insert(ENTER, place(0.25 + 10.5, 1.5));
    let bottom = ROWS[2].1 + ROWS[2].0.len() as f64 / 2.0;
    keys.insert(SPACE, place(bottom, 3.5));
    keys
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_users: usize,
    pub phrases_per_user: usize,
    pub scale_h_mean: f64,
    pub scale_h_std: f64,
    pub scale_v_mean: f64,
    pub scale_v_std: f64,
    pub keyboard_mm: (f64, f64),
    pub offset_std_px: (f64, f64),
    pub tap_sigma_mm: f64,
    pub drift_step_mm: f64,
    /// Rotation is uniform in `±rotation_deg`.
    pub rotation_deg: f64,
    /// Chance that a phrase is two corpus sentences joined by enter.
    pub pair_prob: f64,
    pub max_phrase_len: usize,
    pub screen: ScreenSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_users: 12,
            phrases_per_user: 150,
            scale_h_mean: 0.96,
            scale_h_std: 0.16,
            scale_v_mean: 1.00,
            scale_v_std: 0.13,
            keyboard_mm: (259.0, 125.9),
            offset_std_px: (75.81, 44.69),
            tap_sigma_mm: 2.5,
            drift_step_mm: 0.8,
            rotation_deg: 15.0,
            pair_prob: 0.3,
            max_phrase_len: 64,
            screen: ScreenSpec::default(),
            seed: 1234,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("simulator: {what}")));
        if self.n_users == 0 || self.phrases_per_user == 0 || self.max_phrase_len == 0 {
            return bad("counts must be at least 1");
        }
        let stds = [
            self.scale_h_std,
            self.scale_v_std,
            self.offset_std_px.0,
            self.offset_std_px.1,
            self.tap_sigma_mm,
            self.drift_step_mm,
            self.rotation_deg,
        ];
        if stds.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("standard deviations and ranges must be finite and non-negative");
        }
        if !(self.scale_h_mean > 0.5 && self.scale_v_mean > 0.5) {
            return bad("scale means must exceed the 0.5 truncation point");
        }
        if !(self.keyboard_mm.0 > 0.0 && self.keyboard_mm.1 > 0.0) {
            return bad("keyboard size must be positive");
        }
        if !(0.0..=1.0).contains(&self.pair_prob) {
            return bad("pair_prob must be a probability");
        }
        Ok(())
    }

    /// Augmentation bound used by the standard benchmark: twice the
    /// initial-offset standard deviation.
    pub fn default_augment_px(&self) -> (f64, f64) {
        (2.0 * self.offset_std_px.0, 2.0 * self.offset_std_px.1)
    }
}

/// One user's imagined keyboard.
#[derive(Clone, Debug, PartialEq)]
pub struct MentalModel {
    /// Reference key centers in mm relative to the keyboard center.
    pub key_centers: BTreeMap<char, (f64, f64)>,
    pub scale_h: f64,
    pub scale_v: f64,
    pub rotation_deg: f64,
    /// Current drift state.
    pub offset_mm: (f64, f64),
    pub tap_sigma_mm: f64,
    pub drift_step_mm: f64,
    pub screen: ScreenSpec,
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("validated standard deviation")
}

fn truncated_scale(mean: f64, std: f64, rng: &mut impl Rng) -> f64 {
    let d = normal(mean, std);
    loop {
        let v = d.sample(rng);
        if v > 0.5 {
            return v;
        }
    }
}

pub fn sample_mental_model(cfg: &SimConfig, rng: &mut impl Rng) -> MentalModel {
    let scale_h = truncated_scale(cfg.scale_h_mean, cfg.scale_h_std, rng);
    let scale_v = truncated_scale(cfg.scale_v_mean, cfg.scale_v_std, rng);
    let rotation_deg = if cfg.rotation_deg > 0.0 {
        rng.random_range(-cfg.rotation_deg..=cfg.rotation_deg)
    } else {
        0.0
    };
    let (sx, sy) = cfg.screen.px_to_mm(cfg.offset_std_px.0, cfg.offset_std_px.1);
    let offset_mm = (normal(0.0, sx).sample(rng), normal(0.0, sy).sample(rng));
    MentalModel {
        key_centers: reference_template(cfg.keyboard_mm),
        scale_h,
        scale_v,
        rotation_deg,
        offset_mm,
        tap_sigma_mm: cfg.tap_sigma_mm,
        drift_step_mm: cfg.drift_step_mm,
        screen: cfg.screen,
    }
}

impl MentalModel {
    /// Where the user believes key `c` is, in screen mm, before tap noise.
    pub fn placed_center(&self, c: char) -> Result<(f64, f64)> {
        let &(x, y) = self.key_centers.get(&c).ok_or(Error::NoKey(c))?;
        let (x, y) = (x * self.scale_h, y * self.scale_v);
        let (s, co) = self.rotation_deg.to_radians().sin_cos();
        let (cx, cy) = self.screen.center_mm();
        Ok((
            x * co - y * s + cx + self.offset_mm.0,
            x * s + y * co + cy + self.offset_mm.1,
        ))
    }

    /// Types `phrase`, then advances the drift random walk by one step.
    pub fn type_phrase(&mut self, user_id: &str, phrase: &str, rng: &mut impl Rng) -> Result<TouchSample> {
        let noise = normal(0.0, self.tap_sigma_mm);
        let mut touches = Vec::with_capacity(phrase.len());
        for c in phrase.chars() {
            let (x, y) = self.placed_center(c)?;
            let (x, y) = (x + noise.sample(rng), y + noise.sample(rng));
            let (nx, ny) = self.screen.mm_to_normalized(x, y);
            touches.push(TouchPoint::new(nx.clamp(0.0, 1.0), ny.clamp(0.0, 1.0)));
        }
        let sample = TouchSample::new(user_id, phrase, touches)?;
        let drift = normal(0.0, self.drift_step_mm);
        self.offset_mm.0 += drift.sample(rng);
        self.offset_mm.1 += drift.sample(rng);
        Ok(sample)
    }
}

/// Appends `copies` rigidly shifted duplicates of every sample. Offsets are
/// uniform within `±max_offset_px` and touches are clamped to the screen.
pub fn augment_offsets(d: &Dataset, copies: usize, max_offset_px: (f64, f64), rng: &mut impl Rng) -> Result<Dataset> {
    let (mx, my) = d.screen.px_to_normalized(max_offset_px.0.abs(), max_offset_px.1.abs());
    let mut out = d.samples().to_vec();
    out.reserve(copies * d.len());
    for _ in 0..copies {
        for s in d.samples() {
            let dx = rng.random_range(-mx..=mx);
            let dy = rng.random_range(-my..=my);
            out.push(s.map_touches(|p| TouchPoint {
                x: (p.x + dx).clamp(0.0, 1.0),
                y: (p.y + dy).clamp(0.0, 1.0),
                t_ms: p.t_ms,
            })?);
        }
    }
    Ok(Dataset::new(d.screen, out))
}

pub fn user_name(i: usize) -> String {
    format!("user{i:02}")
}

fn draw_phrase(corpus: &[String], cfg: &SimConfig, rng: &mut impl Rng) -> String {
    let first = &corpus[rng.random_range(0..corpus.len())];
    if rng.random_bool(cfg.pair_prob) {
        let second = &corpus[rng.random_range(0..corpus.len())];
        if first.len() + 1 + second.len() <= cfg.max_phrase_len {
            return format!("{first}\n{second}");
        }
    }
    first.clone()
}

/// Simulates `cfg.n_users` users typing `cfg.phrases_per_user` phrases each.
/// Each user draws from an independent random stream, so the result does not
/// depend on `exec`.
pub fn simulate_dataset(cfg: &SimConfig, corpus: &[String], exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    let corpus: Vec<String> = corpus
        .iter()
        .filter(|p| !p.is_empty() && p.chars().count() <= cfg.max_phrase_len)
        .cloned()
        .collect();
    if corpus.is_empty() {
        return Err(Error::Config("corpus has no usable phrases".into()));
    }
    let per_user = exec.map_range(cfg.n_users, |u| -> Result<Vec<TouchSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(u as u64 + 1);
        let mut model = sample_mental_model(cfg, &mut rng);
        let name = user_name(u);
        (0..cfg.phrases_per_user)
            .map(|_| {
                let phrase = draw_phrase(&corpus, cfg, &mut rng);
                model.type_phrase(&name, &phrase, &mut rng)
            })
            .collect()
    });
    let mut samples = Vec::with_capacity(cfg.n_users * cfg.phrases_per_user);
    for r in per_user {
        samples.extend(r?);
    }
    Ok(Dataset::new(cfg.screen, samples))
}

/// Simulation, user split and augmentation for a train/val/test benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub sim: SimConfig,
    pub n_test_users: usize,
    pub n_val_users: usize,
    pub augment_copies: usize,
    pub augment_max_px: (f64, f64),
}

impl Default for BenchmarkConfig {
    /// The standard benchmark: seed 1234, 12 users × 150 phrases, 9/1/2 user
    /// split, five augmented copies of the training users.
    fn default() -> Self {
        let sim = SimConfig::default();
        let augment_max_px = sim.default_augment_px();
        Self {
            sim,
            n_test_users: 2,
            n_val_users: 1,
            augment_copies: 5,
            augment_max_px,
        }
    }
}

pub fn build_benchmark(cfg: &BenchmarkConfig, corpus: &[String], exec: Exec) -> Result<Split> {
    let all = simulate_dataset(&cfg.sim, corpus, exec)?;
    prepare_benchmark(&all, cfg)
}

/// User-disjoint split of an existing dataset with the training users
/// augmented, exactly as [`build_benchmark`] does after simulating.
pub fn prepare_benchmark(all: &Dataset, cfg: &BenchmarkConfig) -> Result<Split> {
    let mut split = split_dataset(all, cfg.n_test_users, cfg.n_val_users, cfg.sim.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    rng.set_stream(0);
    split.train = augment_offsets(&split.train, cfg.augment_copies, cfg.augment_max_px, &mut rng)?;
    Ok(split)
}
