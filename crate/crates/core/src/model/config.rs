use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Edge-update rule of a processor layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// `T(d_ij * (v_j - v_i))` with `d_ij = <v_i, e_ij>`.
    Dta,
    /// `T(v_j - v_i)`: no alignment score.
    AblD,
    /// `T(d_ij * (v_i || v_j))`: no latent difference.
    AblDiff,
    /// `T(v_i || v_j || e_ij)`: plain mesh message passing.
    Conventional,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Dta, Variant::AblD, Variant::AblDiff, Variant::Conventional];

    /// Input width of the transport MLP for latent width `d`.
    pub fn transport_input(self, d: usize) -> usize {
        match self {
            Variant::Dta | Variant::AblD => d,
            Variant::AblDiff => 2 * d,
            Variant::Conventional => 3 * d,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Dta => "DTA",
            Variant::AblD => "ABL_D",
            Variant::AblDiff => "ABL_DIFF",
            Variant::Conventional => "CONVENTIONAL",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DTA" => Ok(Variant::Dta),
            "ABL_D" => Ok(Variant::AblD),
            "ABL_DIFF" => Ok(Variant::AblDiff),
            "CONVENTIONAL" | "MESHGRAPHNETS" => Ok(Variant::Conventional),
            other => Err(Error::InvalidArgument(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub mask_latent_dim: usize,
    pub num_layers: usize,
    /// Affine layers per MLP.
    pub mlp_depth: usize,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            mask_latent_dim: 16,
            num_layers: 6,
            mlp_depth: 4,
            variant: Variant::Dta,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 || self.mask_latent_dim < 1 {
            return invalid("latent sizes must be positive");
        }
        if self.num_layers < 1 {
            return invalid("at least one processor layer is required");
        }
        if self.mlp_depth < 2 {
            return invalid("mlp_depth must be at least 2");
        }
        Ok(())
    }
}
