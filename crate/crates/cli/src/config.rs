//! Optional TOML file with defaults for every subcommand. Missing sections
//! and keys fall back to the built-in defaults; command-line flags win.

use std::path::Path;

use gaze_core::baselines::GaConfig;
use gaze_core::controller::ControllerPolicy;
use gaze_core::features::{LabelGeometry, Normalization};
use gaze_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub policy: ControllerPolicy,
    pub ga: GaConfig,
    pub geometry: LabelGeometry,
    pub normalization: Normalization,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: CliConfig = toml::from_str("[train]\nlr = 0.01\n[policy]\nmin_dwell_s = 1.0\n").unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.policy.min_dwell_s, 1.0);
        assert_eq!(cfg.ga, GaConfig::default());
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(toml::from_str::<CliConfig>("[trian]\nlr = 0.01\n").is_err());
    }
}
