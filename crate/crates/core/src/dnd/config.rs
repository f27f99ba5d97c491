use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::alphabet::DICT_SIZE;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Decoding stack, acceleration layer, embedding and character language model.
    Dnd,
    /// Bidirectional GRU stack with a single output map.
    BiRnn,
    /// Forward-only GRU stack with a single output map.
    UniRnn,
    /// Per-symbol diagonal Gaussians, no learning beyond a fit.
    GaussianBaseline,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dnd, Variant::BiRnn, Variant::UniRnn, Variant::GaussianBaseline];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dnd => "dnd",
            Variant::BiRnn => "bi-rnn",
            Variant::UniRnn => "uni-rnn",
            Variant::GaussianBaseline => "gaussian-baseline",
        }
    }

    pub fn is_neural(self) -> bool {
        self != Variant::GaussianBaseline
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected dnd, bi-rnn, uni-rnn or gaussian-baseline)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DndConfig {
    pub variant: Variant,
    pub dec_stacks: usize,
    pub clm_stacks: usize,
    /// GRU state size per direction.
    pub units: usize,
    pub embed_dim: usize,
    pub dict_size: usize,
    pub window: usize,
    pub aux_loss_weight: f64,
    /// Touches enter the network as `input_scale * (p - 0.5)`.
    pub input_scale: f64,
}

impl Default for DndConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Dnd,
            dec_stacks: 2,
            clm_stacks: 2,
            units: 64,
            embed_dim: 16,
            dict_size: DICT_SIZE,
            window: 64,
            aux_loss_weight: 1.0,
            input_scale: 10.0,
        }
    }
}

impl DndConfig {
    pub fn new(variant: Variant, stacks: usize, units: usize) -> Self {
        Self {
            variant,
            dec_stacks: stacks,
            units,
            ..Self::default()
        }
    }

    pub fn with_aux(mut self, weight: f64) -> Self {
        self.aux_loss_weight = weight;
        self
    }

    pub fn has_clm(&self) -> bool {
        self.variant == Variant::Dnd
    }

    pub fn bidirectional(&self) -> bool {
        self.variant != Variant::UniRnn
    }

    /// Whether the auxiliary loss contributes to training.
    pub fn aux_active(&self) -> bool {
        self.has_clm() && self.aux_loss_weight > 0.0
    }

    /// Ablation cell label such as `s2u64au` (stacks, units, aux flag).
    pub fn cell_name(&self) -> String {
        let aux = if self.aux_active() { "au" } else { "" };
        format!("s{}u{}{aux}", self.dec_stacks, self.units)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.variant.is_neural() {
            if self.dec_stacks == 0 || self.units == 0 || self.embed_dim == 0 {
                return bad(format!(
                    "stacks ({}), units ({}) and embed_dim ({}) must be positive",
                    self.dec_stacks, self.units, self.embed_dim
                ));
            }
            if self.has_clm() && self.clm_stacks == 0 {
                return bad("the dnd variant needs at least one CLM stack".into());
            }
        }
        if self.dict_size != DICT_SIZE {
            return bad(format!("dict_size must be {DICT_SIZE}, got {}", self.dict_size));
        }
        if self.window == 0 {
            return bad("window must be positive".into());
        }
        if !self.aux_loss_weight.is_finite() || self.aux_loss_weight < 0.0 {
            return bad(format!("aux_loss_weight must be >= 0, got {}", self.aux_loss_weight));
        }
        if !self.input_scale.is_finite() || self.input_scale <= 0.0 {
            return bad(format!("input_scale must be positive, got {}", self.input_scale));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_names() {
        assert_eq!(DndConfig::default().cell_name(), "s2u64au");
        assert_eq!(DndConfig::default().with_aux(0.0).cell_name(), "s2u64");
        assert_eq!(DndConfig::new(Variant::BiRnn, 3, 32).cell_name(), "s3u32");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
        }
        assert!("lstm".parse::<Variant>().is_err());
    }

    #[test]
    fn validation() {
        assert!(DndConfig::default().validate().is_ok());
        assert!(DndConfig { units: 0, ..DndConfig::default() }.validate().is_err());
        assert!(DndConfig { window: 0, ..DndConfig::default() }.validate().is_err());
        assert!(DndConfig::default().with_aux(-1.0).validate().is_err());
    }
}
