use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Se3Pose;

/// Timestamped camera-to-world poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Se3Pose>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Se3Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} timestamps for {} poses",
                stamps.len(),
                poses.len()
            )));
        }
        if stamps.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if stamps.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("timestamp"));
        }
        if let Some(i) = stamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(Self { stamps, poses })
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, Se3Pose)>) -> Result<Self> {
        let (stamps, poses) = pairs.into_iter().unzip();
        Self::new(stamps, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Se3Pose] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Se3Pose)> {
        self.stamps.iter().copied().zip(self.poses.iter())
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| *p.translation()).collect()
    }

    /// Applies `g` on the left of every pose (a change of world frame).
    pub fn transformed(&self, g: &Se3Pose) -> Trajectory {
        Trajectory {
            stamps: self.stamps.clone(),
            poses: self.poses.iter().map(|p| g.compose(p)).collect(),
        }
    }

    /// Largest distance between any two camera positions.
    pub fn spatial_extent(&self) -> f64 {
        let pos = self.positions();
        let mut best = 0.0f64;
        for (i, a) in pos.iter().enumerate() {
            for b in &pos[i + 1..] {
                best = best.max((a - b).norm());
            }
        }
        best
    }

    /// Nearest-neighbour timestamp association: index pairs `(self, other)`
    /// with `|dt| <= max_dt`, each index of `other` used at most once.
    pub fn associate(&self, other: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        let mut last_j: Option<usize> = None;
        for (i, &t) in self.stamps.iter().enumerate() {
            let j = match other.stamps.binary_search_by(|s| s.total_cmp(&t)) {
                Ok(j) => j,
                Err(j) => {
                    let mut best = j.min(other.len() - 1);
                    if j > 0 && (other.stamps[j - 1] - t).abs() <= (other.stamps[best] - t).abs() {
                        best = j - 1;
                    }
                    best
                }
            };
            if (other.stamps[j] - t).abs() <= max_dt && last_j.map_or(true, |l| j > l) {
                pairs.push((i, j));
                last_j = Some(j);
            }
        }
        pairs
    }
}
