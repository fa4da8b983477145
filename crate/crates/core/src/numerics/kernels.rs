//! Forward and adjoint kernels shared by the autodiff graph and by plain
//! (tape-free) callers. All matrices are row-major `[rows, cols]`.

use super::{NumericsError, Tensor};

/// `c = (accumulate ? c : 0) + op(a) * op(b)` where `op` optionally transposes.
///
/// `a` is `[m, k]` (or `[k, m]` when `a_t`), `b` is `[k, n]` (or `[n, k]` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(NumericsError::Shape(format!(
            "matmul: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    Tensor::new(&[m, n], out)
}

/// Geometry of a 1-D convolution over `[T, Cin]` with kernel `[K, Cin, Cout]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_len: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn for_conv(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self, NumericsError> {
        let (ks, is) = (kernel.shape(), input.shape());
        if is.len() != 2 || ks.len() != 3 || ks[1] != is[1] {
            return Err(NumericsError::Shape(format!(
                "conv1d: input {is:?} incompatible with kernel {ks:?} (expected [T, Cin] and [K, Cin, Cout])"
            )));
        }
        if stride == 0 {
            return Err(NumericsError::Shape("conv1d: stride must be >= 1".into()));
        }
        Ok(Self {
            in_len: is[0],
            in_ch: is[1],
            out_ch: ks[2],
            kernel: ks[0],
            stride,
            padding,
        })
    }

    pub fn conv_out_len(&self) -> Result<usize, NumericsError> {
        let padded = self.in_len + 2 * self.padding;
        if padded < self.kernel {
            return Err(NumericsError::Shape(format!(
                "conv1d: padded length {padded} shorter than kernel {}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn transpose_out_len(&self) -> Result<usize, NumericsError> {
        let full = (self.in_len - 1) * self.stride + self.kernel;
        if full <= 2 * self.padding {
            return Err(NumericsError::Shape(format!(
                "conv_transpose1d: padding {} consumes the whole output",
                self.padding
            )));
        }
        Ok(full - 2 * self.padding)
    }

    /// Input row feeding tap `k` of output position `t`, if inside the signal.
    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let pos = (t * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < self.in_len).then_some(pos as usize)
    }
}

fn im2col(input: &[f64], g: &ConvGeometry, out_len: usize) -> Vec<f64> {
    let width = g.kernel * g.in_ch;
    let mut cols = vec![0.0; out_len * width];
    for t in 0..out_len {
        for k in 0..g.kernel {
            if let Some(src) = g.source(t, k) {
                let dst = t * width + k * g.in_ch;
                cols[dst..dst + g.in_ch].copy_from_slice(&input[src * g.in_ch..(src + 1) * g.in_ch]);
            }
        }
    }
    cols
}

/// Cross-correlation of `input [T, Cin]` with `kernel [K, Cin, Cout]`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor, NumericsError> {
    let g = ConvGeometry::for_conv(input, kernel, stride, padding)?;
    let out_len = g.conv_out_len()?;
    let cols = im2col(input.data(), &g, out_len);
    let mut out = vec![0.0; out_len * g.out_ch];
    gemm(
        out_len,
        g.kernel * g.in_ch,
        g.out_ch,
        &cols,
        false,
        kernel.data(),
        false,
        &mut out,
        false,
    );
    Tensor::new(&[out_len, g.out_ch], out)
}

/// Returns `(d_input, d_kernel)` for [`conv1d`].
pub(crate) fn conv1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &ConvGeometry,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let out_len = grad_out.rows();
    let width = g.kernel * g.in_ch;
    let cols = im2col(input.data(), g, out_len);
    let mut d_kernel = vec![0.0; width * g.out_ch];
    gemm(
        width,
        out_len,
        g.out_ch,
        &cols,
        true,
        grad_out.data(),
        false,
        &mut d_kernel,
        false,
    );
    let mut d_cols = vec![0.0; out_len * width];
    gemm(
        out_len,
        g.out_ch,
        width,
        grad_out.data(),
        false,
        kernel.data(),
        true,
        &mut d_cols,
        false,
    );
    let mut d_input = vec![0.0; g.in_len * g.in_ch];
    for t in 0..out_len {
        for k in 0..g.kernel {
            if let Some(src) = g.source(t, k) {
                let from = &d_cols[t * width + k * g.in_ch..t * width + (k + 1) * g.in_ch];
                for (d, s) in d_input[src * g.in_ch..(src + 1) * g.in_ch].iter_mut().zip(from) {
                    *d += s;
                }
            }
        }
    }
    (d_input, d_kernel)
}

/// Transposed convolution: input row `t` scatters into output rows
/// `t * stride + k - padding` through kernel tap `k` (`[K, Cin, Cout]`).
pub fn conv_transpose1d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor, NumericsError> {
    let g = ConvGeometry::for_conv(input, kernel, stride, padding)?;
    let out_len = g.transpose_out_len()?;
    let tap = g.in_ch * g.out_ch;
    let mut out = vec![0.0; out_len * g.out_ch];
    let mut partial = vec![0.0; g.in_len * g.out_ch];
    for k in 0..g.kernel {
        gemm(
            g.in_len,
            g.in_ch,
            g.out_ch,
            input.data(),
            false,
            &kernel.data()[k * tap..(k + 1) * tap],
            false,
            &mut partial,
            false,
        );
        for t in 0..g.in_len {
            let pos = (t * stride + k) as isize - padding as isize;
            if pos >= 0 && (pos as usize) < out_len {
                let dst = pos as usize * g.out_ch;
                for (o, p) in out[dst..dst + g.out_ch]
                    .iter_mut()
                    .zip(&partial[t * g.out_ch..(t + 1) * g.out_ch])
                {
                    *o += p;
                }
            }
        }
    }
    Tensor::new(&[out_len, g.out_ch], out)
}

pub(crate) fn conv_transpose1d_backward(
    input: &Tensor,
    kernel: &Tensor,
    g: &ConvGeometry,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let out_len = grad_out.rows();
    let tap = g.in_ch * g.out_ch;
    let mut d_input = vec![0.0; g.in_len * g.in_ch];
    let mut d_kernel = vec![0.0; g.kernel * tap];
    let mut gathered = vec![0.0; g.in_len * g.out_ch];
    for k in 0..g.kernel {
        gathered.fill(0.0);
        for t in 0..g.in_len {
            let pos = (t * g.stride + k) as isize - g.padding as isize;
            if pos >= 0 && (pos as usize) < out_len {
                gathered[t * g.out_ch..(t + 1) * g.out_ch].copy_from_slice(grad_out.row(pos as usize));
            }
        }
        let w = &kernel.data()[k * tap..(k + 1) * tap];
        gemm(
            g.in_len,
            g.out_ch,
            g.in_ch,
            &gathered,
            false,
            w,
            true,
            &mut d_input,
            true,
        );
        gemm(
            g.in_ch,
            g.in_len,
            g.out_ch,
            input.data(),
            true,
            &gathered,
            false,
            &mut d_kernel[k * tap..(k + 1) * tap],
            false,
        );
    }
    (d_input, d_kernel)
}

/// Align-corners sampling plan: output row `j` reads `(1 - w) * in[i] + w * in[i + 1]`.
pub(crate) fn interp_plan(src_len: usize, dst_len: usize) -> Vec<(usize, f64)> {
    (0..dst_len)
        .map(|j| {
            if src_len == 1 || dst_len == 1 {
                return (0, 0.0);
            }
            // Integer arithmetic keeps grid-aligned samples exact.
            let num = j * (src_len - 1);
            let den = dst_len - 1;
            let mut i = num / den;
            let mut w = (num % den) as f64 / den as f64;
            if i == src_len - 1 {
                i -= 1;
                w = 1.0;
            }
            (i, w)
        })
        .collect()
}

/// Linear interpolation of `input [T, d]` along time to `target_len` rows.
pub fn interp_linear(input: &Tensor, target_len: usize) -> Result<Tensor, NumericsError> {
    if input.shape().len() != 2 || target_len == 0 {
        return Err(NumericsError::Shape(format!(
            "interp_linear: input {:?}, target_len {target_len}",
            input.shape()
        )));
    }
    let (src_len, d) = (input.rows(), input.cols());
    if src_len == target_len {
        return Ok(input.clone());
    }
    let plan = interp_plan(src_len, target_len);
    let mut out = vec![0.0; target_len * d];
    for (j, &(i, w)) in plan.iter().enumerate() {
        let dst = &mut out[j * d..(j + 1) * d];
        if src_len == 1 {
            dst.copy_from_slice(input.row(0));
            continue;
        }
        let (a, b) = (input.row(i), input.row(i + 1));
        for c in 0..d {
            dst[c] = (1.0 - w) * a[c] + w * b[c];
        }
    }
    Tensor::new(&[target_len, d], out)
}

pub(crate) fn interp_linear_backward(src_len: usize, grad_out: &Tensor) -> Vec<f64> {
    let (dst_len, d) = (grad_out.rows(), grad_out.cols());
    if src_len == dst_len {
        return grad_out.data().to_vec();
    }
    let mut d_in = vec![0.0; src_len * d];
    for (j, (i, w)) in interp_plan(src_len, dst_len).into_iter().enumerate() {
        let g = grad_out.row(j);
        if src_len == 1 {
            for c in 0..d {
                d_in[c] += g[c];
            }
            continue;
        }
        for c in 0..d {
            d_in[i * d + c] += (1.0 - w) * g[c];
            d_in[(i + 1) * d + c] += w * g[c];
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(values: &[f64]) -> Tensor {
        Tensor::new(&[values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn conv_zero_input_gives_zero() {
        let x = Tensor::zeros(&[7, 3]);
        let k = Tensor::from_fn(2 * 3, 4, |r, c| (r + c) as f64 * 0.1)
            .reshape(&[2, 3, 4])
            .unwrap();
        let y = conv1d(&x, &k, 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_fn(5, 3, |r, c| (r * 3 + c) as f64 - 4.0);
        let k = Tensor::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 })
            .reshape(&[1, 3, 3])
            .unwrap();
        assert_eq!(conv1d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_hand_computed() {
        let x = column(&[1.0, 2.0, 3.0]);
        let k = Tensor::new(&[2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(conv1d(&x, &k, 1, 0).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::zeros(&[4, 2]);
        let k = Tensor::zeros(&[3, 3, 1]);
        let err = conv1d(&x, &k, 1, 0).unwrap_err();
        assert!(err.to_string().contains("conv1d"));
        let k = Tensor::zeros(&[9, 2, 1]);
        assert!(conv1d(&x, &k, 1, 0).is_err());
    }

    #[test]
    fn conv_output_length_formula() {
        let x = Tensor::zeros(&[64, 2]);
        let k = Tensor::zeros(&[4, 2, 5]);
        assert_eq!(conv1d(&x, &k, 2, 1).unwrap().shape(), &[32, 5]);
        assert_eq!(
            conv_transpose1d(&Tensor::zeros(&[16, 2]), &k, 2, 1).unwrap().shape(),
            &[32, 5]
        );
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_transpose(y)> for matching geometry.
        let x = Tensor::from_fn(10, 2, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let k = Tensor::from_fn(4 * 2, 3, |r, c| ((r * 5 + c) % 7) as f64 * 0.25 - 0.5)
            .reshape(&[4, 2, 3])
            .unwrap();
        let y = conv1d(&x, &k, 2, 1).unwrap();
        let probe = Tensor::from_fn(y.rows(), 3, |r, c| ((r + 2 * c) % 3) as f64 - 1.0);
        // transpose conv maps Cout -> Cin, so swap the kernel's channel axes.
        let mut kt = vec![0.0; 4 * 3 * 2];
        for t in 0..4 {
            for i in 0..2 {
                for o in 0..3 {
                    kt[t * 6 + o * 2 + i] = k.data()[t * 6 + i * 3 + o];
                }
            }
        }
        let kt = Tensor::new(&[4, 3, 2], kt).unwrap();
        let back = conv_transpose1d(&probe, &kt, 2, 1).unwrap();
        let lhs: f64 = y.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn interp_examples() {
        let x = column(&[0.0, 1.0, 2.0]);
        assert_eq!(interp_linear(&x, 3).unwrap(), x);
        assert_eq!(interp_linear(&x, 2).unwrap().data(), &[0.0, 2.0]);
        assert_eq!(interp_linear(&column(&[0.0, 2.0]), 3).unwrap().data(), &[0.0, 1.0, 2.0]);
        assert_eq!(interp_linear(&column(&[4.0, 9.0]), 1).unwrap().data(), &[4.0]);
        assert_eq!(interp_linear(&column(&[4.0]), 3).unwrap().data(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn interp_round_trip_through_refined_grid() {
        for t in 2..20 {
            let ramp = Tensor::from_fn(t, 2, |r, c| (r as f64) * 3.0 - c as f64);
            let fine = interp_linear(&ramp, 2 * t - 1).unwrap();
            assert_eq!(interp_linear(&fine, t).unwrap(), ramp);
        }
    }
}
