//! Training-time augmentation: flips and free rotation.
//!
//! One transform is drawn per call and applied identically to image, mask
//! and fov. The image is resampled bilinearly (fill -0.5 outside), mask and
//! fov by nearest neighbor (fill 0), so masks stay binary.

use rand::Rng as _;

use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Sample;

/// Random flips (probability one half each) and a rotation angle uniform in
/// [0, 360) degrees.
pub fn augment<T: Scalar>(sample: &Sample<T>, rng: &mut Rng) -> Sample<T> {
    let flip_h = rng.random::<bool>();
    let flip_v = rng.random::<bool>();
    let angle = rng.random_range(0.0..360.0);
    apply_transform(sample, flip_h, flip_v, angle)
}

/// Deterministic core of [`augment`]: flips applied first, then rotation
/// about the image center. The identity transform returns the sample
/// unchanged.
pub fn apply_transform<T: Scalar>(
    sample: &Sample<T>,
    flip_h: bool,
    flip_v: bool,
    angle_deg: f64,
) -> Sample<T> {
    if !flip_h && !flip_v && angle_deg == 0.0 {
        return sample.clone();
    }
    let (h, w) = (sample.h(), sample.w());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();

    // inverse map from output pixel to source coordinates
    let src_of = |r: usize, c: usize| -> (f64, f64) {
        let dy = r as f64 - cy;
        let dx = c as f64 - cx;
        let mut sy = cos * dy + sin * dx + cy;
        let mut sx = -sin * dy + cos * dx + cx;
        if flip_v {
            sy = h as f64 - 1.0 - sy;
        }
        if flip_h {
            sx = w as f64 - 1.0 - sx;
        }
        (sy, sx)
    };

    let img = sample.image.data();
    let mut img_out = vec![T::c(-0.5); h * w];
    for r in 0..h {
        for c in 0..w {
            let (sy, sx) = src_of(r, c);
            img_out[r * w + c] = bilinear(img, h, w, sy, sx, T::c(-0.5));
        }
    }

    let nearest_plane = |src: &[T]| -> Vec<T> {
        let mut out = vec![T::zero(); h * w];
        for r in 0..h {
            for c in 0..w {
                let (sy, sx) = src_of(r, c);
                let (ry, rx) = (sy.round(), sx.round());
                if ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w {
                    out[r * w + c] = src[ry as usize * w + rx as usize];
                }
            }
        }
        out
    };

    let mask_out = nearest_plane(sample.mask.data());
    let fov_out = sample.fov.as_ref().map(|f| nearest_plane(f.data()));

    Sample {
        image: Tensor::new(vec![1, h, w], img_out).expect("same extent"),
        mask: Tensor::new(vec![h, w], mask_out).expect("same extent"),
        fov: fov_out.map(|f| Tensor::new(vec![h, w], f).expect("same extent")),
    }
}

fn bilinear<T: Scalar>(data: &[T], h: usize, w: usize, y: f64, x: f64, fill: T) -> T {
    let y0 = y.floor();
    let x0 = x.floor();
    let wy = T::c(y - y0);
    let wx = T::c(x - x0);
    let fetch = |yy: f64, xx: f64| -> T {
        if yy >= 0.0 && xx >= 0.0 && (yy as usize) < h && (xx as usize) < w {
            data[yy as usize * w + xx as usize]
        } else {
            fill
        }
    };
    let one = T::one();
    let v00 = fetch(y0, x0);
    let v01 = fetch(y0, x0 + 1.0);
    let v10 = fetch(y0 + 1.0, x0);
    let v11 = fetch(y0 + 1.0, x0 + 1.0);
    (one - wy) * ((one - wx) * v00 + wx * v01) + wy * ((one - wx) * v10 + wx * v11)
}
