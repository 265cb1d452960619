//! Nearest-neighbor resampling of a grid map between agent frames.

use super::{BEVGridSpec, Pose2D};
use crate::error::{CoreError, Result};
use crate::tensor::GridMap;

/// Resample `src` (a map in `src_pose`'s frame) into `dst_pose`'s frame.
///
/// Each destination cell samples the source map at the rigidly transformed
/// location of its center using nearest-neighbor lookup. Cells whose
/// preimage falls outside the source grid, or on an invalid source cell,
/// get value 0 and validity false.
pub fn warp_map(
    src: &GridMap,
    src_pose: &Pose2D,
    dst_pose: &Pose2D,
    grid: &BEVGridSpec,
) -> Result<GridMap> {
    let (h, w) = (grid.height(), grid.width());
    if src.height() != h || src.width() != w {
        return Err(CoreError::rejected(format!(
            "source map {}x{} does not match grid {}x{}",
            src.height(),
            src.width(),
            h,
            w
        )));
    }
    let channels = src.channels();
    let mut out = GridMap::zeros(channels, h, w);
    let mut validity = vec![false; h * w];

    for r in 0..h {
        for c in 0..w {
            let (dx, dy) = grid.cell_center(r, c);
            let (wx, wy) = dst_pose.local_to_world(dx, dy);
            let (sx, sy) = src_pose.world_to_local(wx, wy);
            if let Some((sr, sc)) = grid.cell_of(sx, sy) {
                if src.is_valid(sr, sc) {
                    validity[r * w + c] = true;
                    for ch in 0..channels {
                        out.set(ch, r, c, src.value(ch, sr, sc));
                    }
                }
            }
        }
    }
    out.with_validity(validity)
}
