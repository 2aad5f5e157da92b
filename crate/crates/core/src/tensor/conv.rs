//! Direct same-padded convolution kernels, stride 1.
//!
//! The inner loops run over contiguous output rows so the compiler can
//! vectorize them; input planes are padded into a scratch buffer once per
//! (batch, channel) to keep the hot loops branch-free.

use crate::scalar::Scalar;

/// Zero-pad one HxW plane into a (h+2p)x(w+2p) buffer.
fn pad_plane<T: Scalar>(src: &[T], h: usize, w: usize, p: usize, dst: &mut [T]) {
    let wp = w + 2 * p;
    for v in dst.iter_mut() {
        *v = T::zero();
    }
    for r in 0..h {
        let d = (r + p) * wp + p;
        dst[d..d + w].copy_from_slice(&src[r * w..r * w + w]);
    }
}

fn pad_batch<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize, dst: &mut [T]) {
    let plane = h * w;
    let plane_p = (h + 2 * p) * (w + 2 * p);
    for ci in 0..c {
        pad_plane(&x[ci * plane..(ci + 1) * plane], h, w, p, &mut dst[ci * plane_p..(ci + 1) * plane_p]);
    }
}

/// out[b,co,:,:] = bias[co] + sum_ci conv(x[b,ci], w[co,ci]), same padding.
pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    k: usize,
    out: &mut [T],
) {
    let p = (k - 1) / 2;
    let wp = wd + 2 * p;
    let plane = h * wd;
    let plane_p = (h + 2 * p) * wp;
    let mut xp = vec![T::zero(); cin * plane_p];
    for b in 0..batch {
        pad_batch(&x[b * cin * plane..], cin, h, wd, p, &mut xp);
        for co in 0..cout {
            let out_plane = &mut out[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            for v in out_plane.iter_mut() {
                *v = bias[co];
            }
            for ci in 0..cin {
                let xp_plane = &xp[ci * plane_p..(ci + 1) * plane_p];
                let w_base = ((co * cin) + ci) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w[w_base + kh * k + kw];
                        for oh in 0..h {
                            let src = &xp_plane[(oh + kh) * wp + kw..(oh + kh) * wp + kw + wd];
                            let dst = &mut out_plane[oh * wd..oh * wd + wd];
                            for i in 0..wd {
                                dst[i] = dst[i] + wv * src[i];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d w.r.t. input, weights and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    wd: usize,
    k: usize,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let p = (k - 1) / 2;
    let wp = wd + 2 * p;
    let plane = h * wd;
    let plane_p = (h + 2 * p) * wp;
    let mut xp = vec![T::zero(); cin * plane_p];
    let mut dxp = vec![T::zero(); cin * plane_p];

    for b in 0..batch {
        pad_batch(&x[b * cin * plane..], cin, h, wd, p, &mut xp);
        for v in dxp.iter_mut() {
            *v = T::zero();
        }
        for co in 0..cout {
            let dy_plane = &dy[(b * cout + co) * plane..(b * cout + co + 1) * plane];
            let mut bsum = T::zero();
            for &g in dy_plane.iter() {
                bsum += g;
            }
            db[co] += bsum;
            for ci in 0..cin {
                let xp_plane = &xp[ci * plane_p..(ci + 1) * plane_p];
                let dxp_plane = &mut dxp[ci * plane_p..(ci + 1) * plane_p];
                let w_base = ((co * cin) + ci) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = w[w_base + kh * k + kw];
                        let mut wsum = T::zero();
                        for oh in 0..h {
                            let row = (oh + kh) * wp + kw;
                            let src = &xp_plane[row..row + wd];
                            let dyr = &dy_plane[oh * wd..oh * wd + wd];
                            let mut acc = T::zero();
                            for i in 0..wd {
                                acc += src[i] * dyr[i];
                            }
                            wsum += acc;
                            let dst = &mut dxp_plane[row..row + wd];
                            for i in 0..wd {
                                dst[i] = dst[i] + wv * dyr[i];
                            }
                        }
                        dw[w_base + kh * k + kw] += wsum;
                    }
                }
            }
        }
        // un-pad accumulated input gradient
        let dxb = &mut dx[b * cin * plane..(b + 1) * cin * plane];
        for ci in 0..cin {
            let dxp_plane = &dxp[ci * plane_p..(ci + 1) * plane_p];
            for r in 0..h {
                let s = (r + p) * wp + p;
                let d = ci * plane + r * wd;
                for i in 0..wd {
                    dxb[d + i] = dxb[d + i] + dxp_plane[s + i];
                }
            }
        }
    }
}
