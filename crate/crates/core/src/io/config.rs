//! JSON session configuration file.
//!
//! ```json
//! {"solo_track": 1, "accomp_track": 2, "tempo": {"obs_noise_match": 0.002}}
//! ```
//!
//! Every key is optional. `follower`, `tempo` and `engine` override individual
//! parameters and keep the defaults for the rest.

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::follower::FollowerParams;
use crate::pipeline::PipelineConfig;
use crate::score::TrackSelection;
use crate::tempo::TempoParams;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub solo_track: Option<usize>,
    pub accomp_track: Option<usize>,
    pub follower: FollowerParams,
    pub tempo: TempoParams,
    pub engine: EngineConfig,
}

impl FileConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn tracks(&self) -> TrackSelection {
        TrackSelection {
            solo_track: self.solo_track,
            accomp_track: self.accomp_track,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            follower: self.follower,
            tempo: self.tempo,
            engine: self.engine,
            ..PipelineConfig::default()
        }
    }
}
