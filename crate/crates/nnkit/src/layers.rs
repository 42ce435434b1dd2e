//! Forward and backward passes for the layer types, one sample at a time.
//! Feature maps are `[channels, height, width]`.

use crate::{NnError, Tensor};

/// Gradients of a parameterized layer with respect to its input, weight and
/// bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize), NnError> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(NnError::Shape(format!("{what} must be [C, H, W], got {s:?}"))),
    }
}

fn dims4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize), NnError> {
    match *t.shape() {
        [a, b, h, w] => Ok((a, b, h, w)),
        ref s => Err(NnError::Shape(format!("{what} must be rank 4, got {s:?}"))),
    }
}

fn check_bias(b: &Tensor, n: usize) -> Result<(), NnError> {
    if b.shape() != [n] {
        return Err(NnError::Shape(format!("bias {:?}, expected [{n}]", b.shape())));
    }
    Ok(())
}

fn check_acc(gw: &Tensor, gb: &Tensor, w: &Tensor, outputs: usize) -> Result<(), NnError> {
    if gw.shape() != w.shape() || gb.shape() != [outputs] {
        return Err(NnError::Shape(format!(
            "gradient buffers {:?} / {:?} for weight {:?}",
            gw.shape(),
            gb.shape(),
            w.shape()
        )));
    }
    Ok(())
}

/// Output side length of a convolution.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize, NnError> {
    if stride == 0 || size + 2 * pad < k {
        return Err(NnError::Shape(format!(
            "kernel {k} does not fit input {size} with padding {pad}"
        )));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

/// Output indices `i` with `i * stride + kernel_offset - pad` inside
/// `0..size`, as a half-open range.
fn valid_range(kernel_offset: usize, pad: usize, stride: usize, size: usize, out: usize) -> (usize, usize) {
    let lo = if pad > kernel_offset {
        (pad - kernel_offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if size + pad > kernel_offset {
        (size + pad - kernel_offset - 1) / stride + 1
    } else {
        0
    };
    (lo.min(out), hi.min(out).max(lo.min(out)))
}

/// Output side length of a transposed convolution.
pub fn deconv_out(size: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> Result<usize, NnError> {
    let full = (size.max(1) - 1) * stride + k + out_pad;
    if size == 0 || full < 2 * pad + 1 {
        return Err(NnError::Shape(format!(
            "transposed conv of size {size} with padding {pad} is empty"
        )));
    }
    Ok(full - 2 * pad)
}

/// Cross-correlation, weight `[out, in, k, k]`.
pub fn conv2d_forward(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Result<Tensor, NnError> {
    let (ci, h, wd) = dims3(x, "conv input")?;
    let (co, wci, k, k2) = dims4(w, "conv weight")?;
    if wci != ci || k != k2 {
        return Err(NnError::Shape(format!(
            "conv weight {:?} for input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    check_bias(b, co)?;
    let ho = conv_out(h, k, stride, pad)?;
    let wo = conv_out(wd, k, stride, pad)?;
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    let mut out = Tensor::zeros(&[co, ho, wo]);
    let od = out.data_mut();
    for o in 0..co {
        let plane = &mut od[o * ho * wo..(o + 1) * ho * wo];
        plane.fill(bs[o]);
        for c in 0..ci {
            let xc = &xs[c * h * wd..(c + 1) * h * wd];
            for ki in 0..k {
                let (i0, i1) = valid_range(ki, pad, stride, h, ho);
                for kj in 0..k {
                    let (j0, j1) = valid_range(kj, pad, stride, wd, wo);
                    let wv = ws[((o * ci + c) * k + ki) * k + kj];
                    for i in i0..i1 {
                        let row = &xc[(i * stride + ki - pad) * wd..];
                        let orow = &mut plane[i * wo..(i + 1) * wo];
                        if stride == 1 {
                            let off = kj as isize - pad as isize;
                            for j in j0..j1 {
                                orow[j] += wv * row[(j as isize + off) as usize];
                            }
                        } else {
                            for j in j0..j1 {
                                orow[j] += wv * row[j * stride + kj - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::needless_range_loop)]
pub fn conv2d_backward_into(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    gy: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Result<Tensor, NnError> {
    let (ci, h, wd) = dims3(x, "conv input")?;
    let (co, _, k, _) = dims4(w, "conv weight")?;
    let ho = conv_out(h, k, stride, pad)?;
    let wo = conv_out(wd, k, stride, pad)?;
    if gy.shape() != [co, ho, wo] {
        return Err(NnError::Shape(format!(
            "conv output grad {:?}, expected {:?}",
            gy.shape(),
            [co, ho, wo]
        )));
    }
    check_acc(gw, gb, w, co)?;
    let mut gx = Tensor::zeros(x.shape());
    let (xs, ws, gys) = (x.data(), w.data(), gy.data());
    {
        let (gxd, gwd, gbd) = (gx.data_mut(), gw.data_mut(), gb.data_mut());
        for o in 0..co {
            let gplane = &gys[o * ho * wo..(o + 1) * ho * wo];
            gbd[o] += gplane.iter().sum::<f64>();
            for c in 0..ci {
                for ki in 0..k {
                    let (i0, i1) = valid_range(ki, pad, stride, h, ho);
                    for kj in 0..k {
                        let (j0, j1) = valid_range(kj, pad, stride, wd, wo);
                        let wi = ((o * ci + c) * k + ki) * k + kj;
                        let wv = ws[wi];
                        let mut acc = 0.0;
                        for i in i0..i1 {
                            let base = c * h * wd + (i * stride + ki - pad) * wd;
                            let grow = &gplane[i * wo..(i + 1) * wo];
                            for j in j0..j1 {
                                let xi = base + j * stride + kj - pad;
                                acc += grow[j] * xs[xi];
                                gxd[xi] += grow[j] * wv;
                            }
                        }
                        gwd[wi] += acc;
                    }
                }
            }
        }
    }
    Ok(gx)
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, gy: &Tensor) -> Result<LayerGrads, NnError> {
    let (mut weight, mut bias) = (
        Tensor::zeros(w.shape()),
        Tensor::zeros(&[w.shape().first().copied().unwrap_or(0)]),
    );
    let input = conv2d_backward_into(x, w, stride, pad, gy, &mut weight, &mut bias)?;
    Ok(LayerGrads { input, weight, bias })
}

/// Transposed convolution, weight `[in, out, k, k]`. Output side is
/// `(size - 1) * stride - 2 * pad + k + out_pad`.
pub fn deconv2d_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Result<Tensor, NnError> {
    let (ci, h, wd) = dims3(x, "deconv input")?;
    let (wci, co, k, k2) = dims4(w, "deconv weight")?;
    if wci != ci || k != k2 {
        return Err(NnError::Shape(format!(
            "deconv weight {:?} for input {:?}",
            w.shape(),
            x.shape()
        )));
    }
    check_bias(b, co)?;
    let ho = deconv_out(h, k, stride, pad, out_pad)?;
    let wo = deconv_out(wd, k, stride, pad, out_pad)?;
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    let mut out = Tensor::zeros(&[co, ho, wo]);
    let od = out.data_mut();
    for o in 0..co {
        od[o * ho * wo..(o + 1) * ho * wo].fill(bs[o]);
    }
    for c in 0..ci {
        for i in 0..h {
            for j in 0..wd {
                let xv = xs[(c * h + i) * wd + j];
                for o in 0..co {
                    for ki in 0..k {
                        let Some(y) = (i * stride + ki).checked_sub(pad).filter(|&y| y < ho) else {
                            continue;
                        };
                        for kj in 0..k {
                            let Some(xx) = (j * stride + kj).checked_sub(pad).filter(|&v| v < wo) else {
                                continue;
                            };
                            od[(o * ho + y) * wo + xx] += xv * ws[((c * co + o) * k + ki) * k + kj];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn deconv2d_backward_into(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
    gy: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Result<Tensor, NnError> {
    let (ci, h, wd) = dims3(x, "deconv input")?;
    let (_, co, k, _) = dims4(w, "deconv weight")?;
    let ho = deconv_out(h, k, stride, pad, out_pad)?;
    let wo = deconv_out(wd, k, stride, pad, out_pad)?;
    if gy.shape() != [co, ho, wo] {
        return Err(NnError::Shape(format!(
            "deconv output grad {:?}, expected {:?}",
            gy.shape(),
            [co, ho, wo]
        )));
    }
    check_acc(gw, gb, w, co)?;
    let mut gx = Tensor::zeros(x.shape());
    let (xs, ws, gys) = (x.data(), w.data(), gy.data());
    {
        let (gxd, gwd, gbd) = (gx.data_mut(), gw.data_mut(), gb.data_mut());
        for o in 0..co {
            gbd[o] += gys[o * ho * wo..(o + 1) * ho * wo].iter().sum::<f64>();
        }
        for c in 0..ci {
            for i in 0..h {
                for j in 0..wd {
                    let xi = (c * h + i) * wd + j;
                    let xv = xs[xi];
                    let mut acc = 0.0;
                    for o in 0..co {
                        for ki in 0..k {
                            let Some(y) = (i * stride + ki).checked_sub(pad).filter(|&y| y < ho) else {
                                continue;
                            };
                            for kj in 0..k {
                                let Some(xx) = (j * stride + kj).checked_sub(pad).filter(|&v| v < wo) else {
                                    continue;
                                };
                                let g = gys[(o * ho + y) * wo + xx];
                                let wi = ((c * co + o) * k + ki) * k + kj;
                                acc += g * ws[wi];
                                gwd[wi] += g * xv;
                            }
                        }
                    }
                    gxd[xi] = acc;
                }
            }
        }
    }
    Ok(gx)
}

pub fn deconv2d_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    out_pad: usize,
    gy: &Tensor,
) -> Result<LayerGrads, NnError> {
    let (mut weight, mut bias) = (
        Tensor::zeros(w.shape()),
        Tensor::zeros(&[w.shape().get(1).copied().unwrap_or(0)]),
    );
    let input = deconv2d_backward_into(x, w, stride, pad, out_pad, gy, &mut weight, &mut bias)?;
    Ok(LayerGrads { input, weight, bias })
}

/// `y = W x + b` with `W` of shape `[out, in]`. The input is flattened.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    let [o, i] = *w.shape() else {
        return Err(NnError::Shape(format!(
            "linear weight must be [out, in], got {:?}",
            w.shape()
        )));
    };
    if x.len() != i {
        return Err(NnError::Shape(format!(
            "linear input has {} values, expected {i}",
            x.len()
        )));
    }
    check_bias(b, o)?;
    let (xs, ws, bs) = (x.data(), w.data(), b.data());
    Ok(Tensor::from_fn(&[o], |r| {
        bs[r] + ws[r * i..(r + 1) * i].iter().zip(xs).map(|(a, b)| a * b).sum::<f64>()
    }))
}

pub fn linear_backward_into(
    x: &Tensor,
    w: &Tensor,
    gy: &Tensor,
    gw: &mut Tensor,
    gb: &mut Tensor,
) -> Result<Tensor, NnError> {
    let [o, i] = *w.shape() else {
        return Err(NnError::Shape(format!(
            "linear weight must be [out, in], got {:?}",
            w.shape()
        )));
    };
    if gy.len() != o || x.len() != i {
        return Err(NnError::Shape(format!(
            "linear grads {:?} / input {:?}",
            gy.shape(),
            x.shape()
        )));
    }
    let (xs, ws, gys) = (x.data(), w.data(), gy.data());
    check_acc(gw, gb, w, o)?;
    let mut gx = Tensor::zeros(x.shape());
    {
        let (gxd, gwd, gbd) = (gx.data_mut(), gw.data_mut(), gb.data_mut());
        for r in 0..o {
            let g = gys[r];
            gbd[r] += g;
            let wrow = &ws[r * i..(r + 1) * i];
            let gwrow = &mut gwd[r * i..(r + 1) * i];
            for c in 0..i {
                gxd[c] += g * wrow[c];
                gwrow[c] += g * xs[c];
            }
        }
    }
    Ok(gx)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, gy: &Tensor) -> Result<LayerGrads, NnError> {
    let (mut weight, mut bias) = (
        Tensor::zeros(w.shape()),
        Tensor::zeros(&[w.shape().first().copied().unwrap_or(0)]),
    );
    let input = linear_backward_into(x, w, gy, &mut weight, &mut bias)?;
    Ok(LayerGrads { input, weight, bias })
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| x.data()[i].max(0.0))
}

/// Gradient through ReLU given the pre-activation input.
pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    Tensor::from_fn(x.shape(), |i| if x.data()[i] > 0.0 { gy.data()[i] } else { 0.0 })
}

/// Softmax over the entries where `mask` is true; masked entries get
/// exactly 0.
pub fn masked_softmax(logits: &Tensor, mask: &[bool]) -> Result<Tensor, NnError> {
    if mask.len() != logits.len() {
        return Err(NnError::Shape(format!(
            "mask of {} for {} logits",
            mask.len(),
            logits.len()
        )));
    }
    let l = logits.data();
    let max = l
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::AllMasked);
    }
    let mut out = Tensor::from_fn(logits.shape(), |i| if mask[i] { (l[i] - max).exp() } else { 0.0 });
    let z: f64 = out.data().iter().sum();
    out.scale(1.0 / z);
    Ok(out)
}

/// Gradient with respect to the logits given the softmax output.
pub fn masked_softmax_backward(probs: &Tensor, gp: &Tensor) -> Tensor {
    let p = probs.data();
    let g = gp.data();
    let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    Tensor::from_fn(probs.shape(), |i| p[i] * (g[i] - dot))
}
