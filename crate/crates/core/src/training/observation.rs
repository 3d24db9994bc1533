use crate::dynamics::ControllerScript;
use crate::error::{Error, Result};
use crate::graph::Vec3;

/// Partial point observations of a trajectory with persistent tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// `points[t][k]` is the observed position of node `track_ids[k]` at frame `t`.
    pub points: Vec<Vec<Vec3>>,
    pub track_ids: Vec<usize>,
    pub script: ControllerScript,
}

impl Observation {
    pub fn new(points: Vec<Vec<Vec3>>, track_ids: Vec<usize>, script: ControllerScript) -> Result<Self> {
        let o = Observation { points, track_ids, script };
        o.validate()?;
        Ok(o)
    }

    pub fn frames(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::InvalidScene("observation needs at least two frames".into()));
        }
        if self.track_ids.is_empty() {
            return Err(Error::InvalidScene("observation has no tracked points".into()));
        }
        let mut sorted = self.track_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.track_ids.len() {
            return Err(Error::InvalidScene("duplicate track ids".into()));
        }
        for (t, f) in self.points.iter().enumerate() {
            if f.len() != self.track_ids.len() {
                return Err(Error::InvalidScene(format!("frame {t} has {} points, expected {}", f.len(), self.track_ids.len())));
            }
            if f.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::InvalidScene(format!("frame {t} has a non-finite point")));
            }
        }
        if self.script.trajectory.len() < self.points.len() {
            return Err(Error::InvalidScene("controller script is shorter than the observation".into()));
        }
        Ok(())
    }

    /// Checks against a scene with `nodes` level-0 nodes.
    pub fn check_nodes(&self, nodes: usize) -> Result<()> {
        if let Some(&i) = self.track_ids.iter().find(|&&i| i >= nodes) {
            return Err(Error::InvalidScene(format!("track id {i} exceeds the {nodes} scene nodes")));
        }
        Ok(())
    }

    /// First `frames` frames.
    pub fn truncated(&self, frames: usize) -> Result<Self> {
        if frames == 0 || frames > self.frames() {
            return Err(Error::InvalidConfig(format!(
                "cannot take {frames} frames of a {}-frame observation",
                self.frames()
            )));
        }
        Ok(Observation {
            points: self.points[..=frames].to_vec(),
            track_ids: self.track_ids.clone(),
            script: self.script.truncated(frames),
        })
    }
}
