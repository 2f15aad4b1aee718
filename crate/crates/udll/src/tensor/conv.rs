//! 2-D convolution, its transpose (adjoint), and their analytic gradients.
//!
//! Layout conventions: activations are `[batch, height, width, channels]`,
//! kernels are `[k, k, cin, cout]`. Padding is "same"-style zero padding so
//! a stride-`s` convolution maps spatial size `h` to `ceil(h/s)`; when the
//! total padding is odd the extra row/column goes to the bottom/right.

use super::Tensor;
use crate::error::UdllError;
use crate::par;
use crate::Result;

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    in_h: usize,
    in_w: usize,
    cin: usize,
    ksize: usize,
    cout: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    pad_top: isize,
    pad_left: isize,
}

fn same_pad(in_size: usize, ksize: usize, stride: usize) -> (usize, isize) {
    let out = in_size.div_ceil(stride);
    let total = ((out - 1) * stride + ksize).saturating_sub(in_size);
    (out, (total / 2) as isize)
}

fn geometry(input: &Tensor, kernels: &Tensor, stride: usize, op: &'static str) -> Result<Geom> {
    if stride == 0 {
        return Err(UdllError::Param(format!("{op}: stride must be >= 1")));
    }
    let ishape = input.shape();
    let kshape = kernels.shape();
    if ishape.len() != 4 {
        return Err(UdllError::Shape {
            op,
            detail: format!("input must be [batch,h,w,cin], got {ishape:?}"),
        });
    }
    if kshape.len() != 4 || kshape[0] != kshape[1] || kshape[0] == 0 {
        return Err(UdllError::Shape {
            op,
            detail: format!("kernels must be [s,s,cin,cout] with square s >= 1, got {kshape:?}"),
        });
    }
    let (batch, in_h, in_w, cin) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if kshape[2] != cin {
        return Err(UdllError::Shape {
            op,
            detail: format!(
                "input has {cin} channels but kernels expect {} (kernel shape {kshape:?})",
                kshape[2]
            ),
        });
    }
    let (out_h, pad_top) = same_pad(in_h, kshape[0], stride);
    let (out_w, pad_left) = same_pad(in_w, kshape[0], stride);
    Ok(Geom {
        batch,
        in_h,
        in_w,
        cin,
        ksize: kshape[0],
        cout: kshape[3],
        stride,
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

fn check_bias(op: &'static str, bias: &Tensor, channels: usize) -> Result<()> {
    if bias.shape() != [channels] {
        return Err(UdllError::Shape {
            op,
            detail: format!("bias must be [{channels}], got {:?}", bias.shape()),
        });
    }
    Ok(())
}

/// Cross-correlation with zero padding: `[b,h,w,cin] -> [b,ceil(h/s),ceil(w/s),cout]`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let g = geometry(input, kernels, stride, "conv2d_forward")?;
    check_bias("conv2d_forward", bias, g.cout)?;
    let mut out = Tensor::zeros(&[g.batch, g.out_h, g.out_w, g.cout]);
    let ind = input.data();
    let kd = kernels.data();
    let bd = bias.data();
    // one task per (batch, output row); inner reduction order is fixed
    par::fill_chunks(out.data_mut(), g.out_w * g.cout, |row_idx, chunk| {
        let b = row_idx / g.out_h;
        let oi = row_idx % g.out_h;
        for oj in 0..g.out_w {
            for co in 0..g.cout {
                let mut acc = bd[co];
                for di in 0..g.ksize {
                    let y = (oi * g.stride + di) as isize - g.pad_top;
                    if y < 0 || y >= g.in_h as isize {
                        continue;
                    }
                    for dj in 0..g.ksize {
                        let x = (oj * g.stride + dj) as isize - g.pad_left;
                        if x < 0 || x >= g.in_w as isize {
                            continue;
                        }
                        let ibase = ((b * g.in_h + y as usize) * g.in_w + x as usize) * g.cin;
                        let kbase = ((di * g.ksize + dj) * g.cin) * g.cout + co;
                        for ci in 0..g.cin {
                            acc += ind[ibase + ci] * kd[kbase + ci * g.cout];
                        }
                    }
                }
                chunk[oj * g.cout + co] = acc;
            }
        }
    });
    Ok(out)
}

fn check_grad_out(op: &'static str, grad_out: &Tensor, g: &Geom) -> Result<()> {
    let want = [g.batch, g.out_h, g.out_w, g.cout];
    if grad_out.shape() != want {
        return Err(UdllError::Shape {
            op,
            detail: format!("grad_out must be {:?}, got {:?}", want, grad_out.shape()),
        });
    }
    Ok(())
}

// grad wrt kernels: gk[di,dj,ci,co] = sum_{b,i,j} in(b, i*s+di-pt, j*s+dj-pl, ci) * go[b,i,j,co]
fn grad_kernels(ind: &[f64], god: &[f64], g: &Geom) -> Tensor {
    let mut gk = Tensor::zeros(&[g.ksize, g.ksize, g.cin, g.cout]);
    par::fill_chunks(gk.data_mut(), g.cin * g.cout, |tap, chunk| {
        let di = tap / g.ksize;
        let dj = tap % g.ksize;
        for b in 0..g.batch {
            for oi in 0..g.out_h {
                let y = (oi * g.stride + di) as isize - g.pad_top;
                if y < 0 || y >= g.in_h as isize {
                    continue;
                }
                for oj in 0..g.out_w {
                    let x = (oj * g.stride + dj) as isize - g.pad_left;
                    if x < 0 || x >= g.in_w as isize {
                        continue;
                    }
                    let ibase = ((b * g.in_h + y as usize) * g.in_w + x as usize) * g.cin;
                    let obase = ((b * g.out_h + oi) * g.out_w + oj) * g.cout;
                    for ci in 0..g.cin {
                        let v = ind[ibase + ci];
                        if v == 0.0 {
                            continue;
                        }
                        let krow = &mut chunk[ci * g.cout..(ci + 1) * g.cout];
                        for (kv, &go) in krow.iter_mut().zip(&god[obase..obase + g.cout]) {
                            *kv += v * go;
                        }
                    }
                }
            }
        }
    });
    gk
}

// adjoint of the spatial map: out(b,y,x,ci) = sum_{i,j,co hitting (y,x)} k[di,dj,ci,co]*src[b,i,j,co]
fn adjoint_spatial(src: &[f64], kd: &[f64], g: &Geom) -> Tensor {
    let mut out = Tensor::zeros(&[g.batch, g.in_h, g.in_w, g.cin]);
    par::fill_chunks(out.data_mut(), g.in_w * g.cin, |row_idx, chunk| {
        let b = row_idx / g.in_h;
        let y = (row_idx % g.in_h) as isize;
        for x in 0..g.in_w as isize {
            for di in 0..g.ksize {
                let num = y + g.pad_top - di as isize;
                if num < 0 || num % g.stride as isize != 0 {
                    continue;
                }
                let oi = (num / g.stride as isize) as usize;
                if oi >= g.out_h {
                    continue;
                }
                for dj in 0..g.ksize {
                    let num = x + g.pad_left - dj as isize;
                    if num < 0 || num % g.stride as isize != 0 {
                        continue;
                    }
                    let oj = (num / g.stride as isize) as usize;
                    if oj >= g.out_w {
                        continue;
                    }
                    let sbase = ((b * g.out_h + oi) * g.out_w + oj) * g.cout;
                    let kbase = (di * g.ksize + dj) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let mut acc = 0.0;
                        let krow = &kd[kbase + ci * g.cout..kbase + (ci + 1) * g.cout];
                        for (&kv, &sv) in krow.iter().zip(&src[sbase..sbase + g.cout]) {
                            acc += kv * sv;
                        }
                        chunk[x as usize * g.cin + ci] += acc;
                    }
                }
            }
        }
    });
    out
}

fn channel_sums(data: &[f64], channels: usize) -> Tensor {
    let mut sums = Tensor::zeros(&[channels]);
    let sd = sums.data_mut();
    for frame in data.chunks_exact(channels) {
        for (s, v) in sd.iter_mut().zip(frame) {
            *s += v;
        }
    }
    sums
}

/// Analytic gradients of [`conv2d_forward`] with respect to input, kernels, and bias.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = geometry(input, kernels, stride, "conv2d_backward")?;
    check_grad_out("conv2d_backward", grad_out, &g)?;
    let grad_input = adjoint_spatial(grad_out.data(), kernels.data(), &g);
    let gk = grad_kernels(input.data(), grad_out.data(), &g);
    let gb = channel_sums(grad_out.data(), g.cout);
    Ok((grad_input, gk, gb))
}

/// Adjoint of [`conv2d_forward`] with the same kernel geometry:
/// `[b,h',w',cout] -> [b,out_h,out_w,cin]` where `ceil(out/s) == h'`.
///
/// `out_h`/`out_w` are explicit because `ceil` is not invertible: a stride-2
/// encoder maps both 21 and 22 to 11, and the decoder must reproduce the
/// exact original size.
pub fn conv2d_transpose_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let g = transpose_geometry(
        input,
        kernels,
        stride,
        out_h,
        out_w,
        "conv2d_transpose_forward",
    )?;
    check_bias("conv2d_transpose_forward", bias, g.cin)?;
    let mut out = adjoint_spatial(input.data(), kernels.data(), &g);
    let bd = bias.data();
    for frame in out.data_mut().chunks_exact_mut(g.cin) {
        for (v, b) in frame.iter_mut().zip(bd) {
            *v += b;
        }
    }
    Ok(out)
}

fn transpose_geometry(
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
    out_h: usize,
    out_w: usize,
    op: &'static str,
) -> Result<Geom> {
    if stride == 0 {
        return Err(UdllError::Param(format!("{op}: stride must be >= 1")));
    }
    let ishape = input.shape();
    let kshape = kernels.shape();
    if ishape.len() != 4 {
        return Err(UdllError::Shape {
            op,
            detail: format!("input must be [batch,h',w',cout], got {ishape:?}"),
        });
    }
    if kshape.len() != 4 || kshape[0] != kshape[1] || kshape[0] == 0 {
        return Err(UdllError::Shape {
            op,
            detail: format!("kernels must be [s,s,cin,cout] with square s >= 1, got {kshape:?}"),
        });
    }
    if kshape[3] != ishape[3] {
        return Err(UdllError::Shape {
            op,
            detail: format!(
                "input has {} channels but kernels expect {} (kernel shape {kshape:?})",
                ishape[3], kshape[3]
            ),
        });
    }
    if out_h.div_ceil(stride) != ishape[1] || out_w.div_ceil(stride) != ishape[2] {
        return Err(UdllError::Shape {
            op,
            detail: format!(
                "target {out_h}x{out_w} at stride {stride} implies input {}x{}, got {}x{}",
                out_h.div_ceil(stride),
                out_w.div_ceil(stride),
                ishape[1],
                ishape[2]
            ),
        });
    }
    let (_, pad_top) = same_pad(out_h, kshape[0], stride);
    let (_, pad_left) = same_pad(out_w, kshape[0], stride);
    Ok(Geom {
        batch: ishape[0],
        in_h: out_h,
        in_w: out_w,
        cin: kshape[2],
        ksize: kshape[0],
        cout: kshape[3],
        stride,
        out_h: ishape[1],
        out_w: ishape[2],
        pad_top,
        pad_left,
    })
}

/// Analytic gradients of [`conv2d_transpose_forward`].
///
/// `grad_out` has the transpose output shape `[b,out_h,out_w,cin]`.
pub fn conv2d_transpose_backward(
    grad_out: &Tensor,
    input: &Tensor,
    kernels: &Tensor,
    stride: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let gshape = grad_out.shape();
    if gshape.len() != 4 {
        return Err(UdllError::Shape {
            op: "conv2d_transpose_backward",
            detail: format!("grad_out must be rank 4, got {gshape:?}"),
        });
    }
    let g = transpose_geometry(
        input,
        kernels,
        stride,
        gshape[1],
        gshape[2],
        "conv2d_transpose_backward",
    )?;
    if gshape[0] != g.batch || gshape[3] != g.cin {
        return Err(UdllError::Shape {
            op: "conv2d_transpose_backward",
            detail: format!(
                "grad_out must be [{},h,w,{}], got {gshape:?}",
                g.batch, g.cin
            ),
        });
    }
    // adjoint of the adjoint is the forward spatial map
    let zero_bias = Tensor::zeros(&[g.cout]);
    let grad_input = conv2d_forward(grad_out, kernels, &zero_bias, stride)?;
    // kernel taps see (grad_out, input) in swapped roles relative to conv2d_backward
    let gk = grad_kernels(grad_out.data(), input.data(), &g);
    let gb = channel_sums(grad_out.data(), g.cin);
    Ok((grad_input, gk, gb))
}
