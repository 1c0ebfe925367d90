use std::f32::consts::PI;

use serde::{Deserialize, Serialize};

use super::SimError;

pub const WORKSPACE_CENTER: [f32; 2] = [0.5, 0.5];

/// Camera-viewpoint analogue: rotate about the workspace center, then offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewTransform {
    pub view_id: String,
    pub rotation_rad: f32,
    pub offset_xy: [f32; 2],
}

impl Default for ViewTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl ViewTransform {
    pub fn new(view_id: impl Into<String>, rotation_rad: f32, offset_xy: [f32; 2]) -> Result<Self, SimError> {
        let v = ViewTransform { view_id: view_id.into(), rotation_rad, offset_xy };
        v.validate()?;
        Ok(v)
    }

    pub fn identity() -> Self {
        ViewTransform { view_id: "A".into(), rotation_rad: 0.0, offset_xy: [0.0, 0.0] }
    }

    /// Named views: `A` is the identity, `B` and `C` shift the camera along x,
    /// with `C` halfway between `A` and `B`.
    pub fn named(view_id: &str) -> Result<Self, SimError> {
        match view_id {
            "A" => Ok(Self::identity()),
            "B" => Self::new("B", 0.0, [0.16, 0.0]),
            "C" => Self::new("C", 0.0, [0.08, 0.0]),
            other => Err(SimError::InvalidView(format!("unknown view {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(-PI..PI).contains(&self.rotation_rad) {
            return Err(SimError::InvalidView(format!("rotation {} outside [-pi, pi)", self.rotation_rad)));
        }
        if !self.offset_xy.iter().all(|x| x.is_finite()) {
            return Err(SimError::InvalidView("non-finite offset".into()));
        }
        Ok(())
    }

    pub fn apply(&self, p: [f32; 2]) -> [f32; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let dx = p[0] - WORKSPACE_CENTER[0];
        let dy = p[1] - WORKSPACE_CENTER[1];
        [
            WORKSPACE_CENTER[0] + c * dx - s * dy + self.offset_xy[0],
            WORKSPACE_CENTER[1] + s * dx + c * dy + self.offset_xy[1],
        ]
    }

    pub fn invert(&self, q: [f32; 2]) -> [f32; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let dx = q[0] - self.offset_xy[0] - WORKSPACE_CENTER[0];
        let dy = q[1] - self.offset_xy[1] - WORKSPACE_CENTER[1];
        [WORKSPACE_CENTER[0] + c * dx + s * dy, WORKSPACE_CENTER[1] - s * dx + c * dy]
    }
}
