//! Fundus-style dataset ingestion from image files.
//!
//! Expects a directory with `images/`, `masks/` and optionally `fovs/`
//! subdirectories holding PNG or PGM files paired by file stem. The green
//! channel is extracted from color images, intensities are normalized to
//! [-0.5, 0.5], and an optional integer-factor area downsampling is applied
//! before padding.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{DataError, Sample};

/// Load and pair image/mask(/fov) files, downsampling by `factor`.
pub fn ingest_fundus<T: Scalar>(dir: &Path, factor: usize) -> Result<Vec<Sample<T>>, DataError> {
    if factor == 0 {
        return Err(DataError::BadFactor);
    }
    let images = list_by_stem(&dir.join("images"))?;
    let masks = list_by_stem(&dir.join("masks"))?;
    let fovs_dir = dir.join("fovs");
    let fovs = if fovs_dir.is_dir() { list_by_stem(&fovs_dir)? } else { BTreeMap::new() };

    if images.is_empty() {
        return Err(DataError::EmptyDir(dir.join("images")));
    }
    for stem in masks.keys() {
        if !images.contains_key(stem) {
            return Err(DataError::Unpaired { stem: stem.clone(), missing: "images".into() });
        }
    }

    let mut samples = Vec::new();
    for (stem, img_path) in &images {
        let mask_path = masks
            .get(stem)
            .ok_or_else(|| DataError::Unpaired { stem: stem.clone(), missing: "masks".into() })?;
        let (img, h, w) = load_green(img_path)?;
        let (mask, mh, mw) = load_binary(mask_path)?;
        if (h, w) != (mh, mw) {
            return Err(DataError::SizeMismatch {
                stem: stem.clone(),
                a: (h, w),
                b: (mh, mw),
            });
        }
        let fov = match fovs.get(stem) {
            Some(p) => {
                let (f, fh, fw) = load_binary(p)?;
                if (h, w) != (fh, fw) {
                    return Err(DataError::SizeMismatch {
                        stem: stem.clone(),
                        a: (h, w),
                        b: (fh, fw),
                    });
                }
                Some(f)
            }
            None => None,
        };

        let (img_d, h2, w2) = downsample_mean(&img, h, w, factor);
        let mask_d = downsample_majority(&mask, h, w, factor);
        let fov_d = fov.map(|f| downsample_majority(&f, h, w, factor));

        let image = Tensor::new(vec![1, h2, w2], img_d.iter().map(|&v| T::c(v / 255.0 - 0.5)).collect())
            .expect("extent consistent");
        let mask_t =
            Tensor::new(vec![h2, w2], mask_d.iter().map(|&b| if b { T::one() } else { T::zero() }).collect())
                .expect("extent consistent");
        let fov_t = fov_d.map(|f| {
            Tensor::new(vec![h2, w2], f.iter().map(|&b| if b { T::one() } else { T::zero() }).collect())
                .expect("extent consistent")
        });
        samples.push(Sample::checked(image, mask_t, fov_t)?);
    }
    Ok(samples)
}

/// Pad a sample on the right/bottom so both extents are multiples of
/// `factor`. The image pads with -0.5, mask with 0, and the fov (created if
/// absent) excludes the padding, so padded pixels never count in metrics.
/// Returns the padded sample and the original extent for un-padding.
pub fn pad_to_multiple<T: Scalar>(s: &Sample<T>, factor: usize) -> (Sample<T>, (usize, usize)) {
    let (h, w) = (s.h(), s.w());
    let h2 = h.div_ceil(factor) * factor;
    let w2 = w.div_ceil(factor) * factor;
    if (h2, w2) == (h, w) && s.fov.is_some() {
        return (s.clone(), (h, w));
    }
    let pad_plane = |src: &[T], fill: T| -> Vec<T> {
        let mut out = vec![fill; h2 * w2];
        for r in 0..h {
            out[r * w2..r * w2 + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
        out
    };
    let image = Tensor::new(vec![1, h2, w2], pad_plane(s.image.data(), T::c(-0.5))).expect("sized");
    let mask = Tensor::new(vec![h2, w2], pad_plane(s.mask.data(), T::zero())).expect("sized");
    let fov_src = match &s.fov {
        Some(f) => pad_plane(f.data(), T::zero()),
        None => {
            let ones = vec![T::one(); h * w];
            pad_plane(&ones, T::zero())
        }
    };
    let fov = Some(Tensor::new(vec![h2, w2], fov_src).expect("sized"));
    (Sample { image, mask, fov }, (h, w))
}

/// Crop a padded H2 x W2 plane back to the original extent.
pub fn unpad_plane<T: Copy>(data: &[T], padded_w: usize, orig: (usize, usize)) -> Vec<T> {
    let (h, w) = orig;
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&data[r * padded_w..r * padded_w + w]);
    }
    out
}

/// Area-mean downsampling over full `f x f` blocks; remainder rows and
/// columns are dropped.
pub fn downsample_mean(data: &[f64], h: usize, w: usize, f: usize) -> (Vec<f64>, usize, usize) {
    if f == 1 {
        return (data.to_vec(), h, w);
    }
    let (h2, w2) = (h / f, w / f);
    let mut out = vec![0.0; h2 * w2];
    let norm = 1.0 / (f * f) as f64;
    for r in 0..h2 {
        for c in 0..w2 {
            let mut acc = 0.0;
            for dr in 0..f {
                for dc in 0..f {
                    acc += data[(r * f + dr) * w + c * f + dc];
                }
            }
            out[r * w2 + c] = acc * norm;
        }
    }
    (out, h2, w2)
}

fn downsample_majority(data: &[bool], h: usize, w: usize, f: usize) -> Vec<bool> {
    if f == 1 {
        return data.to_vec();
    }
    let (h2, w2) = (h / f, w / f);
    let mut out = vec![false; h2 * w2];
    let half = (f * f) as f64 / 2.0;
    for r in 0..h2 {
        for c in 0..w2 {
            let mut count = 0usize;
            for dr in 0..f {
                for dc in 0..f {
                    count += data[(r * f + dr) * w + c * f + dc] as usize;
                }
            }
            out[r * w2 + c] = count as f64 >= half;
        }
    }
    out
}

fn list_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>, DataError> {
    let mut map = BTreeMap::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    for entry in entries {
        let path = entry.map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if !matches!(ext.as_str(), "png" | "pgm" | "pbm" | "pnm") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| DataError::Unpaired { stem: format!("{:?}", path), missing: "stem".into() })?
            .to_string();
        map.insert(stem, path);
    }
    Ok(map)
}

fn open(path: &Path) -> Result<image::DynamicImage, DataError> {
    image::open(path).map_err(|e| DataError::Decode { path: path.to_path_buf(), detail: e.to_string() })
}

/// Green channel of a color image, or the single channel of a gray one,
/// as f64 in 0..=255.
fn load_green(path: &Path) -> Result<(Vec<f64>, usize, usize), DataError> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(g) => g.into_raw().iter().map(|&v| v as f64).collect(),
        other => other.to_rgb8().pixels().map(|p| p.0[1] as f64).collect(),
    };
    Ok((data, h, w))
}

fn load_binary(path: &Path) -> Result<(Vec<bool>, usize, usize), DataError> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = img.to_luma8();
    Ok((gray.into_raw().iter().map(|&v| v > 127).collect(), h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hrf_resolution_downsamples_by_four() {
        let (h, w) = (2336usize, 3504usize);
        let data = vec![128.0; h * w];
        let (_, h2, w2) = downsample_mean(&data, h, w, 4);
        assert_eq!((w2, h2), (876, 584));
    }

    #[test]
    fn normalization_endpoints() {
        // pixel 0 -> -0.5 and 255 -> 0.5 under v/255 - 0.5
        assert_eq!(0.0 / 255.0 - 0.5, -0.5);
        assert_eq!(255.0 / 255.0 - 0.5, 0.5);
    }

    #[test]
    fn downsample_mean_averages_blocks() {
        let data = vec![0.0, 4.0, 8.0, 12.0]; // 2x2
        let (out, h2, w2) = downsample_mean(&data, 2, 2, 2);
        assert_eq!((h2, w2), (1, 1));
        assert_eq!(out, vec![6.0]);
    }

    #[test]
    fn pad_records_original_extent() {
        let s = crate::segtrain::synth::synth_sample::<f64>(48, &mut crate::rng::rng_for(3, "pad"));
        // crop to an awkward 45x47 first
        let (h, w) = (45usize, 47usize);
        let img: Vec<f64> = (0..h)
            .flat_map(|r| s.image.data()[r * 48..r * 48 + w].to_vec())
            .collect();
        let mask: Vec<f64> =
            (0..h).flat_map(|r| s.mask.data()[r * 48..r * 48 + w].to_vec()).collect();
        let cropped = Sample {
            image: Tensor::new(vec![1, h, w], img).unwrap(),
            mask: Tensor::new(vec![h, w], mask).unwrap(),
            fov: None,
        };
        let (padded, orig) = pad_to_multiple(&cropped, 8);
        assert_eq!(orig, (45, 47));
        assert_eq!(padded.h() % 8, 0);
        assert_eq!(padded.w() % 8, 0);
        let fov = padded.fov.as_ref().unwrap();
        let inside: f64 = fov.data().iter().map(|v| *v).sum();
        assert_eq!(inside as usize, 45 * 47, "fov covers exactly the original pixels");
        let back = unpad_plane(padded.image.data(), padded.w(), orig);
        assert_eq!(back, cropped.image.data());
    }

    #[test]
    fn png_triple_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("masks")).unwrap();
        std::fs::create_dir_all(root.join("fovs")).unwrap();

        let (w, h) = (40u32, 32u32);
        let img = image::RgbImage::from_fn(w, h, |x, y| {
            image::Rgb([10, ((x + y) % 256) as u8, 200])
        });
        img.save(root.join("images/s1.png")).unwrap();
        let mask = image::GrayImage::from_fn(w, h, |x, _| if x < 8 { image::Luma([255]) } else { image::Luma([0]) });
        mask.save(root.join("masks/s1.png")).unwrap();
        let fov = image::GrayImage::from_fn(w, h, |x, _| if x < 30 { image::Luma([255]) } else { image::Luma([0]) });
        fov.save(root.join("fovs/s1.png")).unwrap();

        let samples = ingest_fundus::<f64>(root, 1).unwrap();
        assert_eq!(samples.len(), 1);
        let s = &samples[0];
        assert_eq!((s.h(), s.w()), (32, 40));
        // green channel at (0,0) is 0 -> -0.5
        assert_eq!(s.image.data()[0], -0.5);
        assert_eq!(s.mask.data()[0], 1.0);
        assert!(s.fov.is_some());
    }

    #[test]
    fn unpaired_mask_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("images")).unwrap();
        std::fs::create_dir_all(root.join("masks")).unwrap();
        let img = image::GrayImage::from_pixel(8, 8, image::Luma([100]));
        img.save(root.join("images/a.png")).unwrap();
        assert!(matches!(ingest_fundus::<f64>(root, 1), Err(DataError::Unpaired { .. })));
    }
}
