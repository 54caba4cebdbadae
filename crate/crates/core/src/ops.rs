//! Layer forward/backward passes for the small trainable backbone.
//!
//! The architecture is a fixed pipeline, so each op is an explicit pair of
//! functions instead of nodes in a general autodiff graph. Argmax ties are
//! broken by lowest linear index everywhere.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cross-correlation of an HxWxD_in input with kxkxD_inxD_out kernels.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (h, w, d_in) = expect3(input, "conv2d input")?;
    if weights.ndim() != 4 {
        return Err(Error::shape("conv2d weights must be k x k x d_in x d_out"));
    }
    let k = weights.dim(0);
    if weights.dim(1) != k {
        return Err(Error::shape("conv2d kernels must be square"));
    }
    if k % 2 == 0 {
        return Err(Error::invalid("conv2d kernel size must be odd"));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d stride must be >= 1"));
    }
    if weights.dim(2) != d_in {
        return Err(Error::shape(format!(
            "conv2d: input depth {} != kernel depth {}",
            d_in,
            weights.dim(2)
        )));
    }
    let d_out = weights.dim(3);
    if bias.shape() != [d_out] {
        return Err(Error::shape("conv2d bias must have one entry per output channel"));
    }
    if h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::shape("conv2d: padded input smaller than kernel"));
    }
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;

    let mut out = Tensor::zeros(&[oh, ow, d_out]);
    let idata = input.data();
    let wdata = weights.data();
    let odata = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let obase = (oy * ow + ox) * d_out;
            for od in 0..d_out {
                odata[obase + od] = bias.data()[od];
            }
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * d_in;
                    let wbase = (ky * k + kx) * d_in * d_out;
                    for id in 0..d_in {
                        let v = idata[ibase + id];
                        let wrow = wbase + id * d_out;
                        for od in 0..d_out {
                            odata[obase + od] += v * wdata[wrow + od];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of conv2d w.r.t. input, weights and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (h, w, d_in) = expect3(input, "conv2d input")?;
    let k = weights.dim(0);
    let d_out = weights.dim(3);
    let (oh, ow, god) = expect3(grad_out, "conv2d grad_out")?;
    if god != d_out {
        return Err(Error::shape("conv2d backward: grad_out depth mismatch"));
    }
    if oh != (h + 2 * pad - k) / stride + 1 || ow != (w + 2 * pad - k) / stride + 1 {
        return Err(Error::shape("conv2d backward: grad_out spatial dims mismatch"));
    }

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut grad_bias = Tensor::zeros(&[d_out]);
    let idata = input.data();
    let wdata = weights.data();
    let gdata = grad_out.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let obase = (oy * ow + ox) * d_out;
            for od in 0..d_out {
                grad_bias.data_mut()[od] += gdata[obase + od];
            }
            for ky in 0..k {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let ibase = (iy as usize * w + ix as usize) * d_in;
                    let wbase = (ky * k + kx) * d_in * d_out;
                    for id in 0..d_in {
                        let v = idata[ibase + id];
                        let wrow = wbase + id * d_out;
                        let mut gi = 0.0;
                        for od in 0..d_out {
                            let g = gdata[obase + od];
                            grad_weights.data_mut()[wrow + od] += v * g;
                            gi += wdata[wrow + od] * g;
                        }
                        grad_input.data_mut()[ibase + id] += gi;
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_weights, grad_bias))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape("relu backward: shape mismatch"));
    }
    let mut grad = Tensor::zeros(input.shape());
    for i in 0..input.len() {
        if input.data()[i] > 0.0 {
            grad.data_mut()[i] = grad_out.data()[i];
        }
    }
    Ok(grad)
}

/// 2x2 non-overlapping max pool. Returns the pooled map and, per output
/// coordinate, the flat input offset that produced it (ties to the lowest
/// linear index).
pub fn maxpool2_forward(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let (h, w, d) = expect3(input, "maxpool2 input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2 requires even spatial dims, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[oh, ow, d]);
    let mut argmax = vec![0u32; oh * ow * d];
    let idata = input.data();
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..d {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let idx = ((2 * oy + dy) * w + 2 * ox + dx) * d + c;
                        if idata[idx] > best {
                            best = idata[idx];
                            best_idx = idx as u32;
                        }
                    }
                }
                let o = (oy * ow + ox) * d + c;
                out.data_mut()[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient back to the stored argmax position.
pub fn maxpool2_backward(
    argmax: &[u32],
    grad_out: &Tensor,
    input_shape: &[usize],
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool2 backward: argmax/grad length mismatch"));
    }
    let mut grad = Tensor::zeros(input_shape);
    for (i, &src) in argmax.iter().enumerate() {
        grad.data_mut()[src as usize] += grad_out.data()[i];
    }
    Ok(grad)
}

/// Affine map of a flat input: out = input * weights + bias, weights NxM.
pub fn linear_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    if weights.ndim() != 2 || weights.dim(0) != n {
        return Err(Error::shape(format!(
            "linear: input length {} vs weights {:?}",
            n,
            weights.shape()
        )));
    }
    let m = weights.dim(1);
    if bias.len() != m {
        return Err(Error::shape("linear: bias length mismatch"));
    }
    let mut out = Tensor::zeros(&[m]);
    let odata = out.data_mut();
    odata.copy_from_slice(bias.data());
    let wdata = weights.data();
    for (i, &v) in input.data().iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let row = i * m;
        for j in 0..m {
            odata[j] += v * wdata[row + j];
        }
    }
    Ok(out)
}

pub fn linear_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = input.len();
    let m = weights.dim(1);
    if grad_out.len() != m {
        return Err(Error::shape("linear backward: grad_out length mismatch"));
    }
    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weights = Tensor::zeros(weights.shape());
    let grad_bias = grad_out.clone();
    let wdata = weights.data();
    let gdata = grad_out.data();
    for i in 0..n {
        let row = i * m;
        let v = input.data()[i];
        let mut gi = 0.0;
        for j in 0..m {
            let g = gdata[j];
            gi += wdata[row + j] * g;
            grad_weights.data_mut()[row + j] += v * g;
        }
        grad_input.data_mut()[i] = gi;
    }
    Ok((grad_input, grad_weights, grad_bias))
}

/// Numerically stabilized softmax over a 1-d tensor.
pub fn softmax(scores: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(scores.shape());
    softmax_slice(scores.data(), out.data_mut());
    out
}

pub fn softmax_slice(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// log(softmax(row)) computed without forming the exponentials' ratio.
pub fn log_softmax_slice(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
}

/// Softmax into `out` plus the log-probability of `target`, sharing one set
/// of exponentials.
pub fn softmax_with_logp(row: &[f64], out: &mut [f64], target: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    row[target] - max - sum.ln()
}

fn expect3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    if t.ndim() != 3 {
        return Err(Error::shape(format!("{} must be 3-d, got {:?}", what, t.shape())));
    }
    Ok((t.dim(0), t.dim(1), t.dim(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let input = Tensor::from_vec(&[1, 1, 1], vec![5.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn conv_scalar_scaling() {
        let input = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &w, &b, 1, 0).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn conv_rejects_depth_mismatch() {
        let input = Tensor::zeros(&[4, 4, 3]);
        let w = Tensor::zeros(&[3, 3, 2, 4]);
        let b = Tensor::zeros(&[4]);
        assert!(conv2d_forward(&input, &w, &b, 1, 1).is_err());
    }

    #[test]
    fn relu_definition() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&t).data(), &[0.0, 0.0, 2.0]);
        let zeros = Tensor::zeros(&[4]);
        assert_eq!(relu_forward(&zeros).data(), &[0.0; 4]);
    }

    #[test]
    fn maxpool_definition_and_ties() {
        let t = Tensor::from_vec(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, argmax) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        assert_eq!(argmax, vec![3]);

        // Constant input: tie broken to the first (lowest) index, value kept.
        let c = Tensor::filled(&[4, 4, 2], 7.5);
        let (out, argmax) = maxpool2_forward(&c).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.5));
        assert_eq!(argmax[0], 0);
        assert_eq!(argmax[1], 1);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2_forward(&Tensor::zeros(&[3, 4, 1])).is_err());
        assert!(maxpool2_forward(&Tensor::zeros(&[4, 5, 1])).is_err());
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let input = Tensor::from_vec(&[2], vec![3.0, 7.0]).unwrap();
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let zero_b = Tensor::zeros(&[2]);
        let out = linear_forward(&input, &eye, &zero_b).unwrap();
        assert_eq!(out.data(), &[3.0, 7.0]);

        let zero_w = Tensor::zeros(&[2, 2]);
        let b = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let out = linear_forward(&input, &zero_w, &b).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_rejects_shape_mismatch() {
        let input = Tensor::zeros(&[3]);
        let w = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(linear_forward(&input, &w, &b).is_err());
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let t = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax(&t).data(), &[0.5, 0.5]);

        let big = Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap();
        let out = softmax(&big);
        assert!(out.data().iter().all(|v| v.is_finite()));
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let t = Tensor::from_vec(&[2], vec![1.0f64.ln(), 3.0f64.ln()]).unwrap();
        let out = softmax(&t);
        assert!((out.data()[0] - 0.25).abs() < 1e-15);
        assert!((out.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_sums_to_one() {
        let t = Tensor::from_vec(&[4], vec![-3.0, 11.0, 0.5, 2.0]).unwrap();
        let sum: f64 = softmax(&t).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let input = Tensor::from_vec(&[4, 4, 2], (0..32).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let w = Tensor::from_vec(&[3, 3, 2, 3], (0..54).map(|i| (i as f64).cos()).collect())
            .unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let a = conv2d_forward(&input, &w, &b, 1, 1).unwrap();
        let b2 = conv2d_forward(&input, &w, &b, 1, 1).unwrap();
        assert_eq!(a.data(), b2.data());
    }
}
