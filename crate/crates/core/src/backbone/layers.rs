//! Dense and strided 3D convolution kernels with hand-written backward passes.

use crate::volume::Shape;

/// `c = a·b + beta·c` for row-major strided operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
    assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access in bounds.
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
            n as isize,
            1,
        );
    }
}

pub(crate) const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;
const NO_SOURCE: u32 = u32::MAX;

fn out_len(n: usize) -> usize {
    (n + 2 * PAD - KERNEL) / STRIDE + 1
}

/// Geometry of a 3×3×3, stride-2, pad-1 convolution, with a precomputed
/// im2col gather table.
#[derive(Debug, Clone)]
pub(crate) struct Conv3d {
    pub in_c: usize,
    pub out_c: usize,
    pub in_shape: Shape,
    pub out_shape: Shape,
    gather: Vec<u32>,
}

impl Conv3d {
    pub fn new(in_c: usize, out_c: usize, in_shape: Shape) -> Self {
        let out_shape = Shape::new(out_len(in_shape.d), out_len(in_shape.h), out_len(in_shape.w));
        let p_len = out_shape.len();
        let vox = in_shape.len();
        let mut gather = vec![NO_SOURCE; in_c * KERNEL.pow(3) * p_len];
        for ci in 0..in_c {
            for kd in 0..KERNEL {
                for kh in 0..KERNEL {
                    for kw in 0..KERNEL {
                        let row = ((ci * KERNEL + kd) * KERNEL + kh) * KERNEL + kw;
                        for p in 0..p_len {
                            let (od, oh, ow) = out_shape.coords(p);
                            let id = (od * STRIDE + kd) as isize - PAD as isize;
                            let ih = (oh * STRIDE + kh) as isize - PAD as isize;
                            let iw = (ow * STRIDE + kw) as isize - PAD as isize;
                            if id >= 0
                                && ih >= 0
                                && iw >= 0
                                && (id as usize) < in_shape.d
                                && (ih as usize) < in_shape.h
                                && (iw as usize) < in_shape.w
                            {
                                let src = ci * vox + in_shape.index(id as usize, ih as usize, iw as usize);
                                gather[row * p_len + p] = src as u32;
                            }
                        }
                    }
                }
            }
        }
        Conv3d {
            in_c,
            out_c,
            in_shape,
            out_shape,
            gather,
        }
    }

    pub fn k_len(&self) -> usize {
        self.in_c * KERNEL.pow(3)
    }

    pub fn p_len(&self) -> usize {
        self.out_shape.len()
    }

    pub fn n_params(&self) -> usize {
        self.out_c * self.k_len() + self.out_c
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        self.gather
            .iter()
            .map(|&g| if g == NO_SOURCE { 0.0 } else { input[g as usize] })
            .collect()
    }

    pub fn col2im(&self, dcol: &[f64], din: &mut [f64]) {
        for (&g, &d) in self.gather.iter().zip(dcol) {
            if g != NO_SOURCE {
                din[g as usize] += d;
            }
        }
    }

    /// `out = relu(W·col + b)`; `params` holds W (out_c × k_len) then b.
    pub fn forward_relu(&self, params: &[f64], col: &[f64]) -> Vec<f64> {
        let (k, p) = (self.k_len(), self.p_len());
        let (w, b) = params.split_at(self.out_c * k);
        let mut out = vec![0.0; self.out_c * p];
        gemm(self.out_c, k, p, w, (k, 1), col, (p, 1), 0.0, &mut out);
        for (co, row) in out.chunks_mut(p).enumerate() {
            for v in row {
                *v = (*v + b[co]).max(0.0);
            }
        }
        out
    }

    /// Backward through `relu(W·col + b)`. `dout` is the gradient w.r.t. the
    /// post-activation output `out`; parameter gradients accumulate into
    /// `dparams`. Returns the gradient w.r.t. the layer input when asked.
    pub fn backward_relu(
        &self,
        params: &[f64],
        col: &[f64],
        out: &[f64],
        dout: &mut [f64],
        dparams: &mut [f64],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (k, p) = (self.k_len(), self.p_len());
        for (d, &o) in dout.iter_mut().zip(out) {
            if o <= 0.0 {
                *d = 0.0;
            }
        }
        let (dw, db) = dparams.split_at_mut(self.out_c * k);
        gemm(self.out_c, p, k, dout, (p, 1), col, (1, p), 1.0, dw);
        for (co, row) in dout.chunks(p).enumerate() {
            db[co] += row.iter().sum::<f64>();
        }
        if !want_input_grad {
            return None;
        }
        let w = &params[..self.out_c * k];
        let mut dcol = vec![0.0; k * p];
        gemm(k, self.out_c, p, w, (1, k), dout, (p, 1), 0.0, &mut dcol);
        let mut din = vec![0.0; self.in_c * self.in_shape.len()];
        self.col2im(&dcol, &mut din);
        Some(din)
    }
}

/// Fully connected layer `y = W x + b`, W stored row-major (out × in).
#[derive(Debug, Clone, Copy)]
pub(crate) struct Dense {
    pub n_in: usize,
    pub n_out: usize,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize) -> Self {
        Dense { n_in, n_out }
    }

    pub fn n_params(&self) -> usize {
        self.n_out * self.n_in + self.n_out
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.n_out * self.n_in);
        (0..self.n_out)
            .map(|o| {
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates dW, db into `dparams` and returns dL/dx.
    pub fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        let (w, _) = params.split_at(self.n_out * self.n_in);
        let (dw, db) = dparams.split_at_mut(self.n_out * self.n_in);
        let mut dx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let drow = &mut dw[o * self.n_in..(o + 1) * self.n_in];
            for i in 0..self.n_in {
                drow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }
}

pub(crate) fn relu_inplace(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Zero the gradient where the activation was clipped.
pub(crate) fn relu_backward(act: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(c: &Conv3d, params: &[f64], input: &[f64]) -> Vec<f64> {
        let (k, s_in, s_out) = (c.k_len(), c.in_shape, c.out_shape);
        let mut out = vec![0.0; c.out_c * s_out.len()];
        for co in 0..c.out_c {
            for p in 0..s_out.len() {
                let (od, oh, ow) = s_out.coords(p);
                let mut acc = params[c.out_c * k + co];
                for ci in 0..c.in_c {
                    for kd in 0..3 {
                        for kh in 0..3 {
                            for kw in 0..3 {
                                let id = (2 * od + kd) as isize - 1;
                                let ih = (2 * oh + kh) as isize - 1;
                                let iw = (2 * ow + kw) as isize - 1;
                                if id < 0 || ih < 0 || iw < 0 {
                                    continue;
                                }
                                let (id, ih, iw) = (id as usize, ih as usize, iw as usize);
                                if id >= s_in.d || ih >= s_in.h || iw >= s_in.w {
                                    continue;
                                }
                                let widx = co * k + ((ci * 3 + kd) * 3 + kh) * 3 + kw;
                                acc += params[widx] * input[ci * s_in.len() + s_in.index(id, ih, iw)];
                            }
                        }
                    }
                }
                out[co * s_out.len() + p] = acc.max(0.0);
            }
        }
        out
    }

    #[test]
    fn gemm_conv_matches_direct_loops() {
        let c = Conv3d::new(2, 3, Shape::new(5, 6, 4));
        assert_eq!(c.out_shape, Shape::new(3, 3, 2));
        let params: Vec<f64> = (0..c.n_params()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let input: Vec<f64> = (0..2 * 120).map(|i| ((i * 13 % 17) as f64 - 8.0) / 5.0).collect();
        let fast = c.forward_relu(&params, &c.im2col(&input));
        let slow = naive_conv(&c, &params, &input);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_backward_matches_definition() {
        let d = Dense::new(3, 2);
        let params = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 0.1, -0.2];
        let x = [0.5, -1.0, 2.0];
        assert_eq!(d.forward(&params, &x), vec![0.1 + 0.5 - 2.0 + 6.0, -0.2 - 0.5 - 0.5]);
        let mut dp = vec![0.0; 8];
        let dx = d.backward(&params, &x, &[1.0, 2.0], &mut dp);
        assert_eq!(dx, vec![1.0 - 2.0, 2.0 + 1.0, 3.0]);
        assert_eq!(dp, vec![0.5, -1.0, 2.0, 1.0, -2.0, 4.0, 1.0, 2.0]);
    }
}
