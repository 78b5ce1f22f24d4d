//! Every tunable default in one JSON-overridable structure. Missing fields
//! keep their defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::StereoParams;
use crate::detectors::ClassicParams;
use crate::error::{Error, Result};
use crate::klt::PairSelectionParams;
use crate::net::FcnConfig;
use crate::succinctness::EvalParams;
use crate::synth::SceneSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub detectors: ClassicParams,
    pub eval: EvalParams,
    pub train: TrainConfig,
    pub network: FcnConfig,
    pub pairs: PairSelectionParams,
    pub stereo: StereoParams,
    pub scene: SceneSpec,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override() {
        let c = Config::from_json(r#"{"eval": {"k": 20}, "train": {"adam": {"learning_rate": 0.001}}}"#).unwrap();
        assert_eq!(c.eval.k, 20);
        assert_eq!(c.eval.n_max, 200);
        assert_eq!(c.train.adam.learning_rate, 1e-3);
        assert_eq!(c.train.adam.beta1, 0.9);
        assert_eq!(c.train.n, 500);
        assert_eq!(Config::from_json(&Config::default().to_json()).unwrap(), Config::default());
        assert!(Config::from_json(r#"{"evl": {}}"#).is_err());
    }
}
