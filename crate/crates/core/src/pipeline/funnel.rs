use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;

pub const INGESTED: &str = "ingested";
pub const DAYTIME: &str = "daytime";
pub const SEGMENTATION_GATE: &str = "segmentation_gate";
pub const WATER_COVERAGE: &str = "water_coverage";
pub const MATCHED: &str = "matched";

/// Pipeline order of the filter stages.
pub const STAGE_ORDER: [&str; 5] = [INGESTED, DAYTIME, SEGMENTATION_GATE, WATER_COVERAGE, MATCHED];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStage {
    pub name: String,
    /// Images entering the filter; absent for the first stage.
    pub before: Option<usize>,
    pub after: usize,
}

impl FunnelStage {
    pub fn dropped(&self) -> usize {
        self.before.map_or(0, |b| b.saturating_sub(self.after))
    }
}

/// Images surviving each filter stage, in pipeline order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Funnel {
    pub stages: Vec<FunnelStage>,
}

fn rank(name: &str) -> usize {
    STAGE_ORDER.iter().position(|s| *s == name).unwrap_or(STAGE_ORDER.len())
}

impl Funnel {
    /// Missing file reads as an empty funnel.
    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        match fs::read_to_string(path) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
                path: path.to_path_buf(),
                detail: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(PipelineError::io(path, e)),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        super::write_json(self, path)
    }

    /// Insert or replace the entry for `name`, keeping pipeline order.
    pub fn record(&mut self, name: &str, before: Option<usize>, after: usize) {
        let entry = FunnelStage {
            name: name.to_string(),
            before,
            after,
        };
        if let Some(e) = self.stages.iter_mut().find(|s| s.name == name) {
            *e = entry;
        } else {
            let at = self
                .stages
                .iter()
                .position(|s| rank(&s.name) > rank(name))
                .unwrap_or(self.stages.len());
            self.stages.insert(at, entry);
        }
    }

    pub fn get(&self, name: &str) -> Option<&FunnelStage> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Read, update one entry and write back.
    pub fn update(path: &Path, name: &str, before: Option<usize>, after: usize) -> Result<(), PipelineError> {
        let mut f = Self::read(path)?;
        f.record(name, before, after);
        f.write(path)
    }
}
