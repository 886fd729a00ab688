//! 3x3 convolution with ReLU, lowered to a matrix product over im2col patches.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const KSIZE: usize = 3;
const KAREA: usize = KSIZE * KSIZE;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `out_ch x (in_ch * 9)`, columns ordered `(channel, ky, kx)`.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

/// Activations kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    cols: Array2<f32>,
    /// Post-ReLU output, `out_ch x (out_h * out_w)`.
    pub output: Array2<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

pub fn out_size(size: usize, stride: usize) -> usize {
    // padding 1, kernel 3
    (size + 2 - KSIZE) / stride + 1
}

impl Conv2d {
    /// He-normal initialised layer.
    pub fn new<R: Rng>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Conv2d {
        let std = (2.0 / (in_ch * KAREA) as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let weight = Array2::from_shape_simple_fn((out_ch, in_ch * KAREA), || normal.sample(rng));
        Conv2d {
            in_ch,
            out_ch,
            stride,
            weight,
            bias: Array1::zeros(out_ch),
        }
    }

    /// `input` is `in_ch x (h * w)` row-major.
    pub fn forward(&self, input: ArrayView2<f32>, h: usize, w: usize) -> ConvTrace {
        let out_h = out_size(h, self.stride);
        let out_w = out_size(w, self.stride);
        let cols = im2col(input, h, w, self.stride, out_h, out_w);
        let mut output = Array2::<f32>::zeros((self.out_ch, out_h * out_w));
        general_mat_mul(1.0, &self.weight, &cols, 0.0, &mut output);
        for (mut row, &b) in output.axis_iter_mut(Axis(0)).zip(self.bias.iter()) {
            row.mapv_inplace(|v| (v + b).max(0.0));
        }
        ConvTrace {
            in_h: h,
            in_w: w,
            out_h,
            out_w,
            cols,
            output,
        }
    }

    /// Backpropagate `grad_out` (gradient w.r.t. the post-ReLU output).
    /// Returns parameter gradients and, when requested, the input gradient.
    pub fn backward(
        &self,
        trace: &ConvTrace,
        mut grad_out: Array2<f32>,
        need_input_grad: bool,
    ) -> (ConvGrads, Option<Array2<f32>>) {
        ndarray::Zip::from(&mut grad_out)
            .and(&trace.output)
            .for_each(|g, &o| {
                if o <= 0.0 {
                    *g = 0.0;
                }
            });
        let mut dw = Array2::<f32>::zeros(self.weight.raw_dim());
        general_mat_mul(1.0, &grad_out, &trace.cols.t(), 0.0, &mut dw);
        let db = grad_out.sum_axis(Axis(1));
        let dinput = need_input_grad.then(|| {
            let mut dcols = Array2::<f32>::zeros(trace.cols.raw_dim());
            general_mat_mul(1.0, &self.weight.t(), &grad_out, 0.0, &mut dcols);
            col2im(
                dcols.view(),
                self.in_ch,
                trace.in_h,
                trace.in_w,
                self.stride,
                trace.out_h,
                trace.out_w,
            )
        });
        (ConvGrads { weight: dw, bias: db }, dinput)
    }
}

fn im2col(
    input: ArrayView2<f32>,
    h: usize,
    w: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<f32> {
    let in_ch = input.nrows();
    let npos = out_h * out_w;
    let mut cols = Array2::<f32>::zeros((in_ch * KAREA, npos));
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    for c in 0..in_ch {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (c * KAREA + ky * KSIZE + kx) * npos;
                let out_row = &mut dst[row..row + npos];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &mut out_row[oy * out_w..(oy + 1) * out_w];
                    for (ox, v) in seg.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *v = line[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    cols: ArrayView2<f32>,
    in_ch: usize,
    h: usize,
    w: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<f32> {
    let npos = out_h * out_w;
    let mut out = Array2::<f32>::zeros((in_ch, h * w));
    let src = cols.as_slice().expect("standard layout");
    let dst = out.as_slice_mut().expect("standard layout");
    for c in 0..in_ch {
        let plane = &mut dst[c * h * w..(c + 1) * h * w];
        for ky in 0..KSIZE {
            for kx in 0..KSIZE {
                let row = (c * KAREA + ky * KSIZE + kx) * npos;
                let in_row = &src[row..row + npos];
                for oy in 0..out_h {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let seg = &in_row[oy * out_w..(oy + 1) * out_w];
                    for (ox, &g) in seg.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
    out
}
