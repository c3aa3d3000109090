use crate::autodiff::Tensor;
use crate::geometry::BBox;
use crate::model::{ArchitectureSpec, ModelError};

/// Placement of score-map cells in search-crop pixels: cell `(i, j)`
/// sits at `(offset + j * stride, offset + i * stride)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreGrid {
    pub size: usize,
    pub stride: f64,
    pub offset: f64,
}

impl ScoreGrid {
    pub fn from_spec(spec: &ArchitectureSpec) -> Result<Self, ModelError> {
        Ok(Self { size: spec.score_size()?, stride: spec.total_stride as f64, offset: spec.score_offset()? })
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.offset + j as f64 * self.stride, self.offset + i as f64 * self.stride)
    }
}

/// Per-cell training targets for one search crop.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMaps {
    /// `[1,S,S]`, 1 at positives.
    pub labels: Tensor,
    /// `[1,S,S]` centerness, 0 at negatives.
    pub quality: Tensor,
    /// `[4,S,S]` distances `(l,t,r,b)`; filled with 1 at negatives so the
    /// masked IoU stays finite.
    pub reg: Tensor,
    pub n_pos: usize,
}

impl TargetMaps {
    /// True when no cell is positive and the sample carries no box signal.
    pub fn is_empty(&self) -> bool {
        self.n_pos == 0
    }
}

/// Marks every cell whose point lies strictly inside `gt` as positive.
pub fn assign_targets(grid: &ScoreGrid, gt: &BBox) -> TargetMaps {
    let s = grid.size;
    let mut labels = vec![0.0; s * s];
    let mut quality = vec![0.0; s * s];
    let mut reg = vec![1.0; 4 * s * s];
    let mut n_pos = 0;
    for i in 0..s {
        for j in 0..s {
            let (px, py) = grid.point(i, j);
            let (l, t, r, b) = (px - gt.x, py - gt.y, gt.right() - px, gt.bottom() - py);
            if l <= 0.0 || t <= 0.0 || r <= 0.0 || b <= 0.0 {
                continue;
            }
            let k = i * s + j;
            labels[k] = 1.0;
            quality[k] = ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt();
            for (c, v) in [l, t, r, b].into_iter().enumerate() {
                reg[c * s * s + k] = v;
            }
            n_pos += 1;
        }
    }
    TargetMaps {
        labels: Tensor::new(vec![1, s, s], labels).expect("grid shape"),
        quality: Tensor::new(vec![1, s, s], quality).expect("grid shape"),
        reg: Tensor::new(vec![4, s, s], reg).expect("grid shape"),
        n_pos,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ScoreGrid {
        ScoreGrid { size: 5, stride: 1.0, offset: 0.0 }
    }

    #[test]
    fn center_point_has_unit_quality() {
        let t = assign_targets(&grid(), &BBox::new(0.0, 0.0, 4.0, 4.0));
        // Points 1..3 on each axis are strictly inside.
        assert_eq!(t.n_pos, 9);
        let k = 2 * 5 + 2;
        assert_eq!(t.labels.data()[k], 1.0);
        assert_eq!(t.quality.data()[k], 1.0);
        assert_eq!(t.labels.data()[0], 0.0);
        assert_eq!(t.quality.data()[0], 0.0);
    }

    #[test]
    fn asymmetric_point_centerness() {
        // Point (1, 2): l=1, r=3, t=2, b=2.
        let t = assign_targets(&grid(), &BBox::new(0.0, 0.0, 4.0, 4.0));
        let k = 2 * 5 + 1;
        assert!((t.quality.data()[k] - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let reg: Vec<f64> = (0..4).map(|c| t.reg.data()[c * 25 + k]).collect();
        assert_eq!(reg, vec![1.0, 2.0, 3.0, 2.0]);
    }

    #[test]
    fn box_outside_grid_has_no_positives() {
        let t = assign_targets(&grid(), &BBox::new(50.0, 50.0, 4.0, 4.0));
        assert!(t.is_empty());
    }
}
