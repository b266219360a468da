use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ModelParams;
use crate::model::train::TrainConfig;
use crate::representation::RepresentationMode;

pub const CHECKPOINT_FORMAT: &str = "meeqa-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Trained weights plus what is needed to encode inputs the same way again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub representation: RepresentationMode,
    pub train: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(params: ModelParams, representation: RepresentationMode, train: TrainConfig) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            representation,
            train,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                c.format, c.version
            )));
        }
        c.params.check_shapes()?;
        if !c.params.is_finite() {
            return Err(Error::Config("checkpoint holds non-finite weights".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;

    #[test]
    fn round_trips_exactly() {
        let mut c = ModelConfig::new(20, 16);
        c.d_model = 8;
        c.d_ff = 8;
        let p = ModelParams::init(c, 5).unwrap();
        let ck = Checkpoint::new(p, RepresentationMode::default(), TrainConfig::default());
        let json = ck.to_json().unwrap();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut c = ModelConfig::new(20, 16);
        c.d_model = 8;
        let mut ck = Checkpoint::new(
            ModelParams::init(c, 5).unwrap(),
            RepresentationMode::default(),
            TrainConfig::default(),
        );
        ck.params.config.vocab_size = 21;
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }
}
