use crate::autodiff::Tensor;
use crate::geometry::CropTransform;

/// Interleaved 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (width > 0 && height > 0 && data.len() == width * height * 3).then_some(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = (y * self.width + x) * 3;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let k = (y * self.width + x) * 3;
        self.data[k..k + 3].copy_from_slice(&rgb);
    }

    /// Per-channel mean, used to pad crops that leave the frame.
    pub fn mean_color(&self) -> [f64; 3] {
        let mut sum = [0u64; 3];
        for px in self.data.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
        }
        let n = (self.width * self.height) as f64;
        sum.map(|s| s as f64 / n)
    }
}

fn normalize(v: f64) -> f64 {
    (v / 255.0 - 0.5) * 2.0
}

/// Bilinear resampling of the region described by `t` into a normalized
/// `[3, size, size]` tensor. Samples outside the frame take the mean color.
pub fn crop_tensor(img: &Image, t: &CropTransform) -> Tensor {
    let n = t.size;
    let mean = img.mean_color();
    let mut out = vec![0.0; 3 * n * n];
    let (w, h) = (img.width as isize, img.height as isize);
    let fetch = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w || y >= h {
            mean[c]
        } else {
            img.data[((y * w + x) * 3) as usize + c] as f64
        }
    };
    for v in 0..n {
        for u in 0..n {
            // Pixel centres sit at half-integer coordinates in both spaces.
            let (fx, fy) = t.to_frame(u as f64 + 0.5, v as f64 + 0.5);
            let (sx, sy) = (fx - 0.5, fy - 0.5);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (ax, ay) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let top = fetch(x0, y0, c) * (1.0 - ax) + fetch(x0 + 1, y0, c) * ax;
                let bot = fetch(x0, y0 + 1, c) * (1.0 - ax) + fetch(x0 + 1, y0 + 1, c) * ax;
                out[c * n * n + v * n + u] = normalize(top * (1.0 - ay) + bot * ay);
            }
        }
    }
    Tensor::new(vec![3, n, n], out).expect("crop shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_crop_reproduces_pixels() {
        let mut img = Image::filled(4, 4, [0, 0, 0]);
        img.put(1, 2, [255, 0, 51]);
        let t = CropTransform { origin_x: 0.0, origin_y: 0.0, scale: 1.0, size: 4 };
        let c = crop_tensor(&img, &t);
        assert_eq!(c.data()[2 * 4 + 1], 1.0);
        assert_eq!(c.data()[16 + 2 * 4 + 1], -1.0);
        assert!((c.data()[32 + 2 * 4 + 1] - normalize(51.0)).abs() < 1e-15);
    }

    #[test]
    fn outside_is_mean_padded() {
        let img = Image::filled(3, 3, [10, 20, 30]);
        let t = CropTransform { origin_x: -100.0, origin_y: -100.0, scale: 1.0, size: 2 };
        let c = crop_tensor(&img, &t);
        assert!((c.data()[0] - normalize(10.0)).abs() < 1e-12);
        assert!((c.data()[4] - normalize(20.0)).abs() < 1e-12);
    }
}
