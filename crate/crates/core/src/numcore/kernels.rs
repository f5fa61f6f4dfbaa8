//! Raw slice kernels behind the graph operations.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// One active kernel tap: spatial offset plus its flat index in a `k×k` kernel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap {
    dh: isize,
    dw: isize,
    index: usize,
}

/// Taps whose shifted window overlaps the input at all. On a `H×1` grid only
/// the centre column of the kernel ever touches data.
pub(crate) fn active_taps(k: usize, h: usize, w: usize) -> Vec<Tap> {
    let p = (k / 2) as isize;
    let mut taps = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let dh = i as isize - p;
            let dw = j as isize - p;
            if dh.unsigned_abs() < h && dw.unsigned_abs() < w {
                taps.push(Tap {
                    dh,
                    dw,
                    index: i * k + j,
                });
            }
        }
    }
    taps
}

/// `c = a·b + beta·c` over strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: bounds of all three operands are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Valid output range `[lo, hi)` along an axis of length `n` for shift `d`.
fn shifted_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Writes the `[cin*taps, h*w]` column matrix of one batch item.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, taps: &[Tap], col: &mut [f64]) {
    let hw = h * w;
    let nt = taps.len();
    col.fill(0.0);
    for c in 0..cin {
        let xc = &x[c * hw..(c + 1) * hw];
        for (ti, tap) in taps.iter().enumerate() {
            let row = &mut col[(c * nt + ti) * hw..(c * nt + ti + 1) * hw];
            let (h0, h1) = shifted_range(h, tap.dh);
            let (w0, w1) = shifted_range(w, tap.dw);
            if tap.dw == 0 {
                let dst = h0 * w..h1 * w;
                let src = ((h0 as isize + tap.dh) as usize) * w;
                row[dst.clone()].copy_from_slice(&xc[src..src + dst.len()]);
            } else {
                for i in h0..h1 {
                    let si = (i as isize + tap.dh) as usize;
                    let sj = (w0 as isize + tap.dw) as usize;
                    row[i * w + w0..i * w + w1].copy_from_slice(&xc[si * w + sj..si * w + sj + (w1 - w0)]);
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], cin: usize, h: usize, w: usize, taps: &[Tap], gx: &mut [f64]) {
    let hw = h * w;
    let nt = taps.len();
    for c in 0..cin {
        let gc = &mut gx[c * hw..(c + 1) * hw];
        for (ti, tap) in taps.iter().enumerate() {
            let row = &col[(c * nt + ti) * hw..(c * nt + ti + 1) * hw];
            let (h0, h1) = shifted_range(h, tap.dh);
            let (w0, w1) = shifted_range(w, tap.dw);
            if tap.dw == 0 {
                let len = (h1 - h0) * w;
                let dst = ((h0 as isize + tap.dh) as usize) * w;
                for (g, r) in gc[dst..dst + len].iter_mut().zip(&row[h0 * w..h0 * w + len]) {
                    *g += r;
                }
            } else {
                for i in h0..h1 {
                    let si = (i as isize + tap.dh) as usize;
                    let sj = (w0 as isize + tap.dw) as usize;
                    let n = w1 - w0;
                    for (g, r) in gc[si * w + sj..si * w + sj + n]
                        .iter_mut()
                        .zip(&row[i * w + w0..i * w + w1])
                    {
                        *g += r;
                    }
                }
            }
        }
    }
}

/// Saved forward state of a convolution.
pub(crate) struct ConvCache {
    pub taps: Vec<Tap>,
    pub cols: Vec<f64>,
    pub wg: Vec<f64>,
}

pub(crate) fn conv2d_check(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<()> {
    let (_, cin, _, _) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if wcin != cin {
        return Err(Error::shape("conv2d", x.shape(), w.shape()));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Config(format!(
            "conv2d needs an odd square kernel, got {kh}x{kw}"
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv2d bias", w.shape(), bias.shape()));
    }
    Ok(())
}

/// Same-padded cross-correlation. Returns the output and, when `keep` is set,
/// the column buffers needed by the backward pass.
pub(crate) fn conv2d_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    keep: bool,
) -> Result<(Tensor, Option<ConvCache>)> {
    conv2d_check(x, w, bias)?;
    let (b, cin, h, wd) = x.dims4()?;
    let (cout, _, k, _) = w.dims4()?;
    let taps = active_taps(k, h, wd);
    let nt = taps.len();
    let r = cin * nt;
    let hw = h * wd;
    let mut wg = vec![0.0; cout * r];
    for o in 0..cout {
        for c in 0..cin {
            for (ti, tap) in taps.iter().enumerate() {
                wg[o * r + c * nt + ti] = w.data()[(o * cin + c) * k * k + tap.index];
            }
        }
    }
    let mut out = vec![0.0; b * cout * hw];
    let mut cols = vec![0.0; if keep { b * r * hw } else { r * hw }];
    for bi in 0..b {
        let col = if keep {
            &mut cols[bi * r * hw..(bi + 1) * r * hw]
        } else {
            &mut cols[..]
        };
        im2col(&x.data()[bi * cin * hw..(bi + 1) * cin * hw], cin, h, wd, &taps, col);
        let ob = &mut out[bi * cout * hw..(bi + 1) * cout * hw];
        for (o, row) in ob.chunks_mut(hw).enumerate() {
            row.fill(bias.data()[o]);
        }
        gemm(cout, r, hw, &wg, (r, 1), col, (hw, 1), 1.0, ob, (hw, 1));
    }
    let out = Tensor::new(&[b, cout, h, wd], out)?;
    Ok((out, keep.then_some(ConvCache { taps, cols, wg })))
}

/// Gradients `(dx, dw, dbias)`; `dx` is skipped when `need_dx` is false.
pub(crate) fn conv2d_backward(
    x_shape: &[usize],
    w_shape: &[usize],
    cache: &ConvCache,
    gout: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (b, cin, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (cout, k) = (w_shape[0], w_shape[2]);
    let nt = cache.taps.len();
    let r = cin * nt;
    let hw = h * wd;
    let mut gwg = vec![0.0; cout * r];
    let mut gb = vec![0.0; cout];
    let mut gx = need_dx.then(|| vec![0.0; b * cin * hw]);
    let mut gcol = vec![0.0; if need_dx { r * hw } else { 0 }];
    for bi in 0..b {
        let go = &gout[bi * cout * hw..(bi + 1) * cout * hw];
        let col = &cache.cols[bi * r * hw..(bi + 1) * r * hw];
        for (o, row) in go.chunks(hw).enumerate() {
            gb[o] += row.iter().sum::<f64>();
        }
        // dW += dY · colᵀ
        gemm(cout, hw, r, go, (hw, 1), col, (1, hw), 1.0, &mut gwg, (r, 1));
        if let Some(gx) = gx.as_mut() {
            // dcol = Wᵀ · dY
            gemm(r, cout, hw, &cache.wg, (1, r), go, (hw, 1), 0.0, &mut gcol, (hw, 1));
            col2im_add(&gcol, cin, h, wd, &cache.taps, &mut gx[bi * cin * hw..(bi + 1) * cin * hw]);
        }
    }
    let mut gw = vec![0.0; cout * cin * k * k];
    for o in 0..cout {
        for c in 0..cin {
            for (ti, tap) in cache.taps.iter().enumerate() {
                gw[(o * cin + c) * k * k + tap.index] = gwg[o * r + c * nt + ti];
            }
        }
    }
    (gx, gw, gb)
}

pub const GROUPNORM_EPS: f64 = 1e-5;

pub(crate) struct NormCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

pub(crate) fn groupnorm_forward(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
) -> Result<(Tensor, NormCache)> {
    let (b, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "groupnorm: {c} channels not divisible into {groups} groups"
        )));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("groupnorm affine", x.shape(), gamma.shape()));
    }
    let cg = c / groups;
    let n = cg * h * w;
    let hw = h * w;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; b * groups];
    let mut y = vec![0.0; x.len()];
    for bi in 0..b {
        for g in 0..groups {
            let start = (bi * c + g * cg) * hw;
            let xs = &x.data()[start..start + n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + GROUPNORM_EPS).sqrt();
            rstd[bi * groups + g] = rs;
            for (i, v) in xs.iter().enumerate() {
                let ch = g * cg + i / hw;
                let xh = (v - mean) * rs;
                xhat[start + i] = xh;
                y[start + i] = gamma.data()[ch] * xh + beta.data()[ch];
            }
        }
    }
    Ok((Tensor::new(x.shape(), y)?, NormCache { xhat, rstd }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn groupnorm_backward(
    shape: &[usize],
    gamma: &[f64],
    groups: usize,
    cache: &NormCache,
    gout: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let hw = h * w;
    let cg = c / groups;
    let n = cg * hw;
    let mut gx = vec![0.0; gout.len()];
    let mut gg = vec![0.0; c];
    let mut gb = vec![0.0; c];
    let mut dxhat = vec![0.0; n];
    for bi in 0..b {
        for g in 0..groups {
            let start = (bi * c + g * cg) * hw;
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for i in 0..n {
                let ch = g * cg + i / hw;
                let go = gout[start + i];
                let xh = cache.xhat[start + i];
                gg[ch] += go * xh;
                gb[ch] += go;
                let d = go * gamma[ch];
                dxhat[i] = d;
                mean_d += d;
                mean_dx += d * xh;
            }
            mean_d /= n as f64;
            mean_dx /= n as f64;
            let rs = cache.rstd[bi * groups + g];
            for i in 0..n {
                gx[start + i] = rs * (dxhat[i] - mean_d - cache.xhat[start + i] * mean_dx);
            }
        }
    }
    (gx, gg, gb)
}

pub(crate) fn avg_pool(x: &Tensor, fh: usize, fw: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if fh == 0 || fw == 0 || h % fh != 0 || w % fw != 0 {
        return Err(Error::Config(format!(
            "avg_pool factors ({fh},{fw}) do not divide {h}x{w}"
        )));
    }
    let (oh, ow) = (h / fh, w / fw);
    let inv = 1.0 / (fh * fw) as f64;
    let mut out = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        for i in 0..h {
            for j in 0..w {
                out[(bc * oh + i / fh) * ow + j / fw] += x.data()[(bc * h + i) * w + j] * inv;
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn avg_pool_backward(x_shape: &[usize], fh: usize, fw: usize, gout: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (h / fh, w / fw);
    let inv = 1.0 / (fh * fw) as f64;
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for i in 0..h {
            for j in 0..w {
                gx[(bc * h + i) * w + j] = gout[(bc * oh + i / fh) * ow + j / fw] * inv;
            }
        }
    }
    gx
}

pub(crate) fn upsample(x: &Tensor, fh: usize, fw: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if fh == 0 || fw == 0 {
        return Err(Error::Config("upsample factor must be positive".into()));
    }
    let (oh, ow) = (h * fh, w * fw);
    let mut out = vec![0.0; b * c * oh * ow];
    for bc in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                out[(bc * oh + i) * ow + j] = x.data()[(bc * h + i / fh) * w + j / fw];
            }
        }
    }
    Tensor::new(&[b, c, oh, ow], out)
}

pub(crate) fn upsample_backward(x_shape: &[usize], fh: usize, fw: usize, gout: &[f64]) -> Vec<f64> {
    let (b, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let (oh, ow) = (h * fh, w * fw);
    let mut gx = vec![0.0; b * c * h * w];
    for bc in 0..b * c {
        for i in 0..oh {
            for j in 0..ow {
                gx[(bc * h + i / fh) * w + j / fw] += gout[(bc * oh + i) * ow + j];
            }
        }
    }
    gx
}
