//! Axis-aligned boxes and the frame/crop coordinate mapping.
//!
//! All coordinates are continuous pixel coordinates: pixel `(i, j)`
//! covers `[j, j+1) x [i, i+1)`, and a box `(x, y, w, h)` spans
//! `[x, x+w) x [y, y+h)`.

/// Box with a top-left origin, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { x: cx - w / 2.0, y: cy - h / 2.0, w, h }
    }

    /// Box spanning two corners.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x: x0, y: y0, w: x1 - x0, h: y1 - y0 }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let h = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        w * h
    }

    /// Intersection over union; 0 when the union is empty.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

/// Side of the square template region around a `w x h` target with
/// `context` times the box perimeter half-sum added on each axis.
pub fn context_side(w: f64, h: f64, context: f64) -> f64 {
    let p = context * (w + h);
    ((w + p) * (h + p)).sqrt()
}

/// Affine map between frame coordinates and a square crop.
///
/// `frame = origin + crop * scale`, where `scale` is frame pixels per
/// crop pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub scale: f64,
    pub size: usize,
}

impl CropTransform {
    /// Square region of `side` frame pixels centred on `(cx, cy)`,
    /// resampled to `size x size`.
    pub fn centered(cx: f64, cy: f64, side: f64, size: usize) -> Self {
        Self { origin_x: cx - side / 2.0, origin_y: cy - side / 2.0, scale: side / size as f64, size }
    }

    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        (self.origin_x + u * self.scale, self.origin_y + v * self.scale)
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.scale, (y - self.origin_y) / self.scale)
    }

    pub fn box_to_crop(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_crop(b.x, b.y);
        BBox::new(x, y, b.w / self.scale, b.h / self.scale)
    }

    pub fn box_to_frame(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_frame(b.x, b.y);
        BBox::new(x, y, b.w * self.scale, b.h * self.scale)
    }
}
