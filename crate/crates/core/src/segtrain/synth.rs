//! Procedural vessel-like dataset, the desk-scale stand-in for fundus data.
//!
//! Each sample draws a smooth illumination gradient, grows 2-4 branching
//! random-walk trees of dark tubes (thickness decaying 3 -> 1 px, optional
//! bright centerline mimicking the central vessel reflex), then adds
//! Gaussian noise. The mask is the union of tube supports, and every
//! sample is a pure function of its rng stream.

use std::f64::consts::TAU;

use rand::Rng as _;

use crate::rng::{rng_for, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{DataError, Sample};

pub const MIN_SIZE: usize = 32;
const NOISE_SIGMA: f64 = 0.05;

/// Deterministic dataset of `n` samples of extent `size` x `size`.
pub fn synth_vessels<T: Scalar>(n: usize, size: usize, seed: u64) -> Result<Vec<Sample<T>>, DataError> {
    if size < MIN_SIZE {
        return Err(DataError::TooSmall { size, min: MIN_SIZE });
    }
    Ok((0..n).map(|i| synth_sample(size, &mut rng_for(seed, &format!("synth:{i}")))).collect())
}

/// One synthetic sample.
pub fn synth_sample<T: Scalar>(size: usize, rng: &mut Rng) -> Sample<T> {
    synth_sample_parts(size, rng).0
}

/// One synthetic sample plus the per-root tube supports, used to verify
/// that every root's tube is 8-connected.
pub fn synth_sample_parts<T: Scalar>(size: usize, rng: &mut Rng) -> (Sample<T>, Vec<Vec<bool>>) {
    let px = size * size;
    let mut img = vec![0.0f64; px];

    // smooth illumination gradient
    let base = 0.55 + rng.random_range(-0.05..0.05);
    let phi = rng.random_range(0.0..TAU);
    let amp = rng.random_range(0.05..0.15);
    let (sin, cos) = phi.sin_cos();
    for r in 0..size {
        for c in 0..size {
            let u = r as f64 / size as f64 - 0.5;
            let v = c as f64 / size as f64 - 0.5;
            img[r * size + c] = base + amp * (u * cos + v * sin);
        }
    }

    // vessel trees
    let n_roots = rng.random_range(2..=4usize);
    let mut parts: Vec<Vec<bool>> = Vec::with_capacity(n_roots);
    for _ in 0..n_roots {
        let mut part = vec![false; px];
        let mut centers: Vec<(usize, usize)> = Vec::new();
        let contrast = 0.25 + rng.random_range(-0.05..0.05);
        let reflex = rng.random::<bool>();

        let along = rng.random_range(0.15..0.85) * size as f64;
        let edge = size as f64 - 1.0;
        use std::f64::consts::{FRAC_PI_2, PI};
        let (y0, x0, inward) = match rng.random_range(0..4u8) {
            0 => (0.0, along, FRAC_PI_2),
            1 => (edge, along, -FRAC_PI_2),
            2 => (along, 0.0, 0.0),
            _ => (along, edge, PI),
        };
        let dir = inward + rng.random_range(-0.5..0.5);
        let steps = (rng.random_range(0.65..1.0) * size as f64) as usize;
        walk(&mut part, &mut centers, size, y0, x0, dir, 3.0, 1.0, steps, 0, rng);

        // paint this tree: dark tube, optional bright centerline
        for (idx, hit) in part.iter().enumerate() {
            if *hit {
                img[idx] -= contrast;
            }
        }
        if reflex {
            for &(r, c) in &centers {
                img[r * size + c] += 0.12;
            }
        }
        parts.push(part);
    }

    // union mask before noise
    let mut mask = vec![false; px];
    for part in &parts {
        for (m, &p) in mask.iter_mut().zip(part) {
            *m |= p;
        }
    }

    // sensor noise
    for v in img.iter_mut() {
        let u1 = 1.0 - rng.random::<f64>();
        let u2 = rng.random::<f64>();
        let z = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        *v += NOISE_SIGMA * z;
    }

    let image = Tensor::new(
        vec![1, size, size],
        img.iter().map(|&v| T::c(v.clamp(0.0, 1.0) - 0.5)).collect(),
    )
    .expect("extent consistent");
    let mask_t = Tensor::new(
        vec![size, size],
        mask.iter().map(|&m| if m { T::one() } else { T::zero() }).collect(),
    )
    .expect("extent consistent");
    (Sample { image, mask: mask_t, fov: None }, parts)
}

/// Random-walk tube with linearly decaying thickness and occasional
/// branches. Steps are unit length, so consecutive disc centers stay
/// 8-adjacent and the painted support is connected per root.
#[allow(clippy::too_many_arguments)]
fn walk(
    part: &mut [bool],
    centers: &mut Vec<(usize, usize)>,
    size: usize,
    mut y: f64,
    mut x: f64,
    mut dir: f64,
    t0: f64,
    t1: f64,
    steps: usize,
    depth: usize,
    rng: &mut Rng,
) {
    let branch_prob = 1.2 / size as f64;
    let hi = size as f64 - 0.5;
    for i in 0..steps {
        // stop once the rounded center leaves the image, so every painted
        // disc stays 8-adjacent to the previous one
        if y <= -0.5 || x <= -0.5 || y >= hi || x >= hi {
            break;
        }
        let thick = t0 + (t1 - t0) * i as f64 / steps.max(1) as f64;
        paint_disc(part, centers, size, y, x, thick / 2.0);
        dir += rng.random_range(-0.25..0.25);
        y += dir.sin();
        x += dir.cos();
        if depth < 2 && rng.random::<f64>() < branch_prob {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let bdir = dir + side * rng.random_range(0.35..0.9);
            let bsteps = (steps - i) / 2;
            if bsteps > 2 {
                walk(part, centers, size, y, x, bdir, (thick * 0.85).max(1.0), 1.0, bsteps, depth + 1, rng);
            }
        }
    }
}

fn paint_disc(
    part: &mut [bool],
    centers: &mut Vec<(usize, usize)>,
    size: usize,
    cy: f64,
    cx: f64,
    radius: f64,
) {
    let r = radius.max(0.5);
    let (ry, rx) = (cy.round(), cx.round());
    if ry >= 0.0 && rx >= 0.0 && (ry as usize) < size && (rx as usize) < size {
        centers.push((ry as usize, rx as usize));
        // the rounded center can sit just outside the Euclidean disc when
        // the true center is near a pixel corner; paint it so consecutive
        // steps always stay 8-connected
        part[ry as usize * size + rx as usize] = true;
    }
    let lo_y = (cy - r).floor().max(0.0) as usize;
    let hi_y = ((cy + r).ceil() as isize).min(size as isize - 1).max(0) as usize;
    let lo_x = (cx - r).floor().max(0.0) as usize;
    let hi_x = ((cx + r).ceil() as isize).min(size as isize - 1).max(0) as usize;
    if cy + r < 0.0 || cx + r < 0.0 {
        return;
    }
    for py in lo_y..=hi_y {
        for px_ in lo_x..=hi_x {
            let dy = py as f64 - cy;
            let dx = px_ as f64 - cx;
            if dy * dy + dx * dx <= r * r {
                part[py * size + px_] = true;
            }
        }
    }
}
