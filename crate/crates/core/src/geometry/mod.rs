//! BEV geometry: rigid 2D poses, the grid lattice, oriented boxes,
//! map warping with validity tracking, rotated-box IoU, and NMS.

mod iou;
mod nms;
mod warp;

pub use iou::{footprint_corners, point_in_footprint, polygon_area, rotated_iou,
    segment_intersects_footprint};
pub use nms::nms;
pub use warp::warp_map;

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Rigid 2D pose: position in meters, yaw in radians normalized to (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2D {
            x,
            y,
            yaw: normalize_angle(yaw),
        }
    }

    /// Map a point from this pose's local frame into the world frame.
    pub fn local_to_world(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (self.x + c * px - s * py, self.y + s * px + c * py)
    }

    /// Map a world point into this pose's local frame.
    pub fn world_to_local(&self, wx: f64, wy: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        let dx = wx - self.x;
        let dy = wy - self.y;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

/// Normalize an angle to (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(std::f64::consts::TAU);
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    }
    a
}

/// Extent and resolution of a BEV grid. Rows index y, columns index x;
/// the cell (0, 0) center is at (x_min + cell/2, y_min + cell/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BEVGridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
}

impl BEVGridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell: f64) -> Result<Self> {
        let spec = BEVGridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            cell,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min && self.cell > 0.0) {
            return Err(CoreError::rejected("grid spec ranges/cell size invalid"));
        }
        for (range, name) in [
            (self.x_max - self.x_min, "x"),
            (self.y_max - self.y_min, "y"),
        ] {
            let n = range / self.cell;
            if (n - n.round()).abs() > 1e-6 || n.round() < 1.0 {
                return Err(CoreError::rejected(format!(
                    "{name} range {range} is not an integer multiple of cell {}",
                    self.cell
                )));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell).round() as usize
    }

    pub fn height(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell).round() as usize
    }

    pub fn cell_count(&self) -> usize {
        self.width() * self.height()
    }

    /// Center of cell (row, col).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell,
            self.y_min + (row as f64 + 0.5) * self.cell,
        )
    }

    /// Cell containing the point, or None if outside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if x < self.x_min || y < self.y_min {
            return None;
        }
        let col = ((x - self.x_min) / self.cell).floor() as isize;
        let row = ((y - self.y_min) / self.cell).floor() as isize;
        if col < 0 || row < 0 || col >= self.width() as isize || row >= self.height() as isize {
            return None;
        }
        Some((row as usize, col as usize))
    }
}

/// Oriented 3D box with a detection score. `yaw` rotates the footprint in
/// the BEV plane; `length` is along the box's local x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
    pub score: f64,
}

impl Box3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
        score: f64,
    ) -> Result<Self> {
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(CoreError::rejected("box dimensions must be positive"));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(CoreError::rejected("box score must be in [0, 1]"));
        }
        Ok(Box3D {
            x,
            y,
            z,
            length,
            width,
            height,
            yaw,
            score,
        })
    }

    /// The same box expressed in the world frame, given the frame it is
    /// currently in.
    pub fn to_world(&self, frame: &Pose2D) -> Box3D {
        let (x, y) = frame.local_to_world(self.x, self.y);
        Box3D {
            x,
            y,
            yaw: normalize_angle(self.yaw + frame.yaw),
            ..*self
        }
    }

    /// The same box expressed in `frame`'s local coordinates.
    pub fn to_frame(&self, frame: &Pose2D) -> Box3D {
        let (x, y) = frame.world_to_local(self.x, self.y);
        Box3D {
            x,
            y,
            yaw: normalize_angle(self.yaw - frame.yaw),
            ..*self
        }
    }
}
