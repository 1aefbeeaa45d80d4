//! Per-layer forward and backward kernels over batched activations.

use super::gemm::gemm;
use super::layer::{Conv2d, Linear};
use crate::tensor::Tensor;

pub(crate) fn linear_forward(layer: &Linear, x: &Tensor) -> Tensor {
    let n = x.rows();
    let (out, inp) = (layer.out_features(), layer.in_features());
    let mut y = Tensor::zeros(&[n, out]);
    gemm(n, inp, out, x.data(), false, layer.weight.data(), true, 0.0, y.data_mut());
    y
}

/// Writes `dW = dYᵀ X` into the layer gradient and returns `dX = dY W` when requested.
pub(crate) fn linear_backward(layer: &mut Linear, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
    let n = x.rows();
    let (out, inp) = (layer.out_features(), layer.in_features());
    gemm(out, n, inp, dy.data(), true, x.data(), false, 0.0, layer.grad.data_mut());
    need_dx.then(|| {
        let mut dx = Tensor::zeros(&[n, inp]);
        gemm(n, out, inp, dy.data(), false, layer.weight.data(), false, 0.0, dx.data_mut());
        dx
    })
}

fn im2col(conv: &Conv2d, img: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let (kh, kw) = conv.kernel();
    let (oh, ow) = conv.output_hw(h, w);
    let (s, p) = (conv.stride as isize, conv.padding as isize);
    let plane = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - p;
                    for ox in 0..ow {
                        let ix = ox as isize * s + kx as isize - p;
                        dst[oy * ow + ox] = if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            img[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(conv: &Conv2d, col: &[f64], c: usize, h: usize, w: usize, img: &mut [f64]) {
    let (kh, kw) = conv.kernel();
    let (oh, ow) = conv.output_hw(h, w);
    let (s, p) = (conv.stride as isize, conv.padding as isize);
    let plane = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ci * kh + ky) * kw + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize - p;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = ox as isize * s + kx as isize - p;
                        if ix >= 0 && ix < w as isize {
                            img[(ci * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(conv: &Conv2d, x: &Tensor) -> Tensor {
    let [n, c, h, w] = dims4(x);
    let (kh, kw) = conv.kernel();
    let (oh, ow) = conv.output_hw(h, w);
    let oc = conv.out_channels();
    let ck = c * kh * kw;
    let plane = oh * ow;
    let mut y = Tensor::zeros(&[n, oc, oh, ow]);
    let mut col = vec![0.0; ck * plane];
    let in_stride = c * h * w;
    for b in 0..n {
        im2col(conv, &x.data()[b * in_stride..(b + 1) * in_stride], c, h, w, &mut col);
        let out = &mut y.data_mut()[b * oc * plane..(b + 1) * oc * plane];
        gemm(oc, ck, plane, conv.weight.data(), false, &col, false, 0.0, out);
    }
    y
}

pub(crate) fn conv_backward(conv: &mut Conv2d, x: &Tensor, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
    let [n, c, h, w] = dims4(x);
    let (kh, kw) = conv.kernel();
    let (oh, ow) = conv.output_hw(h, w);
    let oc = conv.out_channels();
    let ck = c * kh * kw;
    let plane = oh * ow;
    let in_stride = c * h * w;
    let mut col = vec![0.0; ck * plane];
    let mut dcol = vec![0.0; ck * plane];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    conv.grad.fill(0.0);
    for b in 0..n {
        im2col(conv, &x.data()[b * in_stride..(b + 1) * in_stride], c, h, w, &mut col);
        let g = &dy.data()[b * oc * plane..(b + 1) * oc * plane];
        gemm(oc, plane, ck, g, false, &col, true, 1.0, conv.grad.data_mut());
        if let Some(dx) = dx.as_mut() {
            gemm(ck, oc, plane, conv.weight.data(), true, g, false, 0.0, &mut dcol);
            col2im(conv, &dcol, c, h, w, &mut dx.data_mut()[b * in_stride..(b + 1) * in_stride]);
        }
    }
    dx
}

pub(crate) fn relu_forward(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub(crate) fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

pub(crate) fn maxpool_forward(x: &Tensor, size: usize) -> Tensor {
    let [n, c, h, w] = dims4(x);
    let (oh, ow) = (h / size, w / size);
    let mut y = Tensor::zeros(&[n, c, oh, ow]);
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..size {
                    for dx in 0..size {
                        best = best.max(src[base + (oy * size + dy) * w + ox * size + dx]);
                    }
                }
                dst[(plane * oh + oy) * ow + ox] = best;
            }
        }
    }
    y
}

/// Routes each output gradient to the first maximal input of its window.
pub(crate) fn maxpool_backward(x: &Tensor, dy: &Tensor, size: usize) -> Tensor {
    let [n, c, h, w] = dims4(x);
    let (oh, ow) = (h / size, w / size);
    let mut dx = Tensor::zeros(x.shape());
    let src = x.data();
    let g = dy.data();
    let out = dx.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if src[idx] > best {
                            best = src[idx];
                            arg = idx;
                        }
                    }
                }
                out[arg] += g[(plane * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

fn dims4(x: &Tensor) -> [usize; 4] {
    let s = x.shape();
    [s[0], s[1], s[2], s[3]]
}
