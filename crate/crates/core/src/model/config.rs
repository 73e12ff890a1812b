use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AirResConfig {
    pub num_units: usize,
    pub convs_per_unit: usize,
    pub kernel: usize,
    pub feature_width: usize,
    pub use_1x1: bool,
    /// Channel groups for the stem and the residual convolutions. With more
    /// than one group those layers are block-diagonal over channels, so only
    /// the inter-unit 1x1 layers exchange information between groups.
    pub groups: usize,
}

impl Default for AirResConfig {
    fn default() -> Self {
        AirResConfig {
            num_units: 4,
            convs_per_unit: 2,
            kernel: 3,
            feature_width: 64,
            use_1x1: true,
            groups: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            num_layers: 1,
            hidden_size: 128,
        }
    }
}

/// Which network family a model instantiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Residual CNN per frame, then LSTM. With `use_1x1 = false` this is the
    /// ResNet-LSTM ablation.
    DeepAir,
    /// LSTM over the centre-cell channel vectors only.
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub airres: AirResConfig,
    pub lstm: LstmConfig,
    pub input_channels: usize,
    pub patch_size: usize,
    pub window: usize,
    /// 0 for estimation (one output), otherwise the number of future hours.
    pub horizon: usize,
}

impl ModelConfig {
    pub fn outputs(&self) -> usize {
        self.horizon.max(1)
    }

    pub fn is_forecast(&self) -> bool {
        self.horizon > 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return bad(format!("patch_size must be odd, got {}", self.patch_size));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.lstm.num_layers == 0 || self.lstm.hidden_size == 0 {
            return bad("lstm needs at least one layer and a positive hidden size".into());
        }
        if self.architecture == Architecture::DeepAir {
            let a = &self.airres;
            if a.num_units == 0 || a.convs_per_unit == 0 || a.feature_width == 0 {
                return bad("airres needs positive num_units, convs_per_unit and feature_width".into());
            }
            if a.groups == 0 || self.input_channels % a.groups != 0 || a.feature_width % a.groups != 0 {
                return bad(format!(
                    "airres groups ({}) must divide input_channels ({}) and feature_width ({})",
                    a.groups, self.input_channels, a.feature_width
                ));
            }
            if a.kernel % 2 == 0 {
                return bad(format!("airres kernel must be odd, got {}", a.kernel));
            }
        }
        Ok(())
    }
}
