//! Layer kernels with explicit backward passes: 1D convolution, per-position
//! dense maps, ReLU, sigmoid, and row softmax.
//!
//! Convolutions are stride 1 with zero same-padding so the sequence length
//! never changes. Activations over a `[T, C]` tensor treat each row as one
//! token position.

use super::tensor::{NnError, Parameter, Tensor};

/// 1D convolution over `[T, C_in] -> [T, C_out]` with an odd kernel,
/// stride 1, and zero same-padding.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Shape `[kernel, C_in, C_out]`.
    pub weight: Parameter,
    /// Shape `[C_out]`.
    pub bias: Parameter,
}

impl Conv1d {
    pub fn new(
        name: &str,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd for same-padding");
        Self {
            kernel,
            in_channels,
            out_channels,
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::zeros(&[kernel, in_channels, out_channels]),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_channels])),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let (t_len, c_in) = input.dims2();
        if c_in != self.in_channels {
            return Err(NnError::ShapeMismatch {
                expected: vec![t_len, self.in_channels],
                got: input.shape().to_vec(),
            });
        }
        let c_out = self.out_channels;
        let half = (self.kernel / 2) as isize;
        let mut out = Tensor::zeros(&[t_len, c_out]);
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        for t in 0..t_len {
            let orow = out.row_mut(t);
            orow.copy_from_slice(b);
            for j in 0..self.kernel {
                let src = t as isize + j as isize - half;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let irow = input.row(src as usize);
                let wslab = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                for c in 0..c_in {
                    let x = irow[c];
                    let wrow = &wslab[c * c_out..(c + 1) * c_out];
                    for (o, wv) in wrow.iter().enumerate() {
                        orow[o] += x * wv;
                    }
                }
            }
        }
        debug_assert!(out.all_finite());
        Ok(out)
    }

    /// Exact gradients of the forward definition. Accumulates weight and
    /// bias gradients in place and returns the input gradient.
    pub fn backward(&mut self, input: &Tensor, upstream: &Tensor) -> Result<Tensor, NnError> {
        let (t_len, c_in) = input.dims2();
        let (ut, c_out) = upstream.dims2();
        if ut != t_len || c_out != self.out_channels || c_in != self.in_channels {
            return Err(NnError::ShapeMismatch {
                expected: vec![t_len, self.out_channels],
                got: upstream.shape().to_vec(),
            });
        }
        let half = (self.kernel / 2) as isize;
        let mut d_input = Tensor::zeros(&[t_len, c_in]);
        let w = self.weight.value.data().to_vec();
        let dw = self.weight.grad.data_mut();
        for t in 0..t_len {
            let urow = upstream.row(t);
            for j in 0..self.kernel {
                let src = t as isize + j as isize - half;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let src = src as usize;
                let irow = input.row(src);
                let dirow = d_input.row_mut(src);
                let wslab = &w[j * c_in * c_out..(j + 1) * c_in * c_out];
                let dwslab = &mut dw[j * c_in * c_out..(j + 1) * c_in * c_out];
                for c in 0..c_in {
                    let x = irow[c];
                    let wrow = &wslab[c * c_out..(c + 1) * c_out];
                    let dwrow = &mut dwslab[c * c_out..(c + 1) * c_out];
                    let mut acc = 0.0;
                    for o in 0..c_out {
                        let u = urow[o];
                        acc += u * wrow[o];
                        dwrow[o] += x * u;
                    }
                    dirow[c] += acc;
                }
            }
            let db = self.bias.grad.data_mut();
            for o in 0..c_out {
                db[o] += urow[o];
            }
        }
        Ok(d_input)
    }
}

/// Per-position linear map `[T, F_in] -> [T, F_out]`, weights shared across
/// positions.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    /// Shape `[F_in, F_out]`.
    pub weight: Parameter,
    /// Shape `[F_out]`.
    pub bias: Parameter,
}

impl Dense {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Parameter::new(
                format!("{name}.weight"),
                Tensor::zeros(&[in_features, out_features]),
            ),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(&[out_features])),
        }
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let (t_len, f_in) = input.dims2();
        if f_in != self.in_features {
            return Err(NnError::ShapeMismatch {
                expected: vec![t_len, self.in_features],
                got: input.shape().to_vec(),
            });
        }
        let f_out = self.out_features;
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        let mut out = Tensor::zeros(&[t_len, f_out]);
        for t in 0..t_len {
            let irow = input.row(t);
            let orow = out.row_mut(t);
            orow.copy_from_slice(b);
            for (c, &x) in irow.iter().enumerate() {
                let wrow = &w[c * f_out..(c + 1) * f_out];
                for (o, wv) in wrow.iter().enumerate() {
                    orow[o] += x * wv;
                }
            }
        }
        debug_assert!(out.all_finite());
        Ok(out)
    }

    pub fn backward(&mut self, input: &Tensor, upstream: &Tensor) -> Result<Tensor, NnError> {
        let (t_len, f_in) = input.dims2();
        let (ut, f_out) = upstream.dims2();
        if ut != t_len || f_out != self.out_features || f_in != self.in_features {
            return Err(NnError::ShapeMismatch {
                expected: vec![t_len, self.out_features],
                got: upstream.shape().to_vec(),
            });
        }
        let w = self.weight.value.data().to_vec();
        let dw = self.weight.grad.data_mut();
        let mut d_input = Tensor::zeros(&[t_len, f_in]);
        for t in 0..t_len {
            let urow = upstream.row(t);
            let irow = input.row(t);
            let dirow = d_input.row_mut(t);
            for c in 0..f_in {
                let x = irow[c];
                let wrow = &w[c * f_out..(c + 1) * f_out];
                let dwrow = &mut dw[c * f_out..(c + 1) * f_out];
                let mut acc = 0.0;
                for o in 0..f_out {
                    let u = urow[o];
                    acc += u * wrow[o];
                    dwrow[o] += x * u;
                }
                dirow[c] = acc;
            }
        }
        let db = self.bias.grad.data_mut();
        for t in 0..t_len {
            let urow = upstream.row(t);
            for o in 0..f_out {
                db[o] += urow[o];
            }
        }
        Ok(d_input)
    }
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// `pre` is the pre-activation input to the forward pass; the subgradient at
/// exactly zero is taken as zero.
pub fn relu_backward(pre: &Tensor, upstream: &Tensor) -> Tensor {
    assert_eq!(pre.shape(), upstream.shape(), "relu shapes must match");
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(pre.data().iter()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

pub fn sigmoid_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    out
}

/// `output` is the sigmoid forward result.
pub fn sigmoid_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    assert_eq!(output.shape(), upstream.shape(), "sigmoid shapes must match");
    let mut out = upstream.clone();
    for (g, &y) in out.data_mut().iter_mut().zip(output.data().iter()) {
        *g *= y * (1.0 - y);
    }
    out
}

/// Numerically stable softmax over each row of a rank-2 tensor.
pub fn softmax_rows(input: &Tensor) -> Tensor {
    let (rows, cols) = input.dims2();
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let irow = input.row(r);
        let max = irow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let orow = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &x) in orow.iter_mut().zip(irow.iter()) {
            let e = (x - max).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// `output` is the softmax forward result; rows are independent.
pub fn softmax_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    assert_eq!(output.shape(), upstream.shape(), "softmax shapes must match");
    let (rows, cols) = output.dims2();
    let mut out = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let s = output.row(r);
        let u = upstream.row(r);
        let dot: f64 = s.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        let orow = out.row_mut(r);
        for c in 0..cols {
            orow[c] = s[c] * (u[c] - dot);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init::init_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded(tensor_shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Tensor::zeros(tensor_shape);
        init_uniform(&mut t, 1.0, &mut rng);
        t
    }

    #[test]
    fn conv_k1_identity_passes_input_through() {
        let mut conv = Conv1d::new("c", 1, 2, 2);
        conv.weight.value.data_mut()[0] = 1.0; // (0,0)
        conv.weight.value.data_mut()[3] = 1.0; // (1,1)
        let input = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = conv.forward(&input).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_k3_hand_computed() {
        // Single channel, all-one weights, zero bias, input [1,2,3]:
        // zero padding gives [0+1+2, 1+2+3, 2+3+0].
        let mut conv = Conv1d::new("c", 3, 1, 1);
        conv.weight.value.fill(1.0);
        let input = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let out = conv.forward(&input).unwrap();
        assert_eq!(out.data(), &[3.0, 6.0, 5.0]);
    }

    #[test]
    fn conv_zero_input_broadcasts_bias() {
        let mut conv = Conv1d::new("c", 3, 2, 3);
        conv.bias.value.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let input = Tensor::zeros(&[4, 2]);
        let out = conv.forward(&input).unwrap();
        for t in 0..4 {
            assert_eq!(out.row(t), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let conv = Conv1d::new("c", 1, 2, 2);
        let input = Tensor::zeros(&[3, 5]);
        assert!(matches!(
            conv.forward(&input),
            Err(NnError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv_backward_zero_upstream_gives_zero_grads() {
        let mut conv = Conv1d::new("c", 3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_uniform(&mut conv.weight.value, 1.0, &mut rng);
        let input = seeded(&[4, 2], 2);
        let d_in = conv.backward(&input, &Tensor::zeros(&[4, 2])).unwrap();
        assert!(d_in.data().iter().all(|&v| v == 0.0));
        assert!(conv.weight.grad.data().iter().all(|&v| v == 0.0));
        assert!(conv.bias.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_k1_input_grad_is_weight_times_upstream() {
        let mut conv = Conv1d::new("c", 1, 1, 1);
        conv.weight.value.data_mut()[0] = 2.5;
        let input = Tensor::from_vec(&[3, 1], vec![1.0, -1.0, 0.5]).unwrap();
        let upstream = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let d_in = conv.backward(&input, &upstream).unwrap();
        assert_eq!(d_in.data(), &[2.5, 5.0, 7.5]);
    }

    /// Central-difference check of the conv backward on a random small case.
    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut conv = Conv1d::new("c", 3, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        init_uniform(&mut conv.weight.value, 0.8, &mut rng);
        init_uniform(&mut conv.bias.value, 0.2, &mut rng);
        let input = seeded(&[5, 2], 11);
        // Loss: sum of squares of the output.
        let loss = |c: &Conv1d, x: &Tensor| -> f64 {
            c.forward(x).unwrap().data().iter().map(|v| v * v).sum()
        };
        let out = conv.forward(&input).unwrap();
        let mut upstream = out.clone();
        upstream.scale(2.0);
        let d_in = conv.backward(&input, &upstream).unwrap();

        let eps = 1e-5;
        let check = |analytic: f64, numeric: f64| {
            let rel = (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs());
            assert!(rel < 1e-6, "rel error {rel}: {analytic} vs {numeric}");
        };
        for i in 0..input.len() {
            let mut xp = input.clone();
            xp.data_mut()[i] += eps;
            let mut xm = input.clone();
            xm.data_mut()[i] -= eps;
            check(d_in.data()[i], (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps));
        }
        for i in 0..conv.weight.value.len() {
            let mut cp = conv.clone();
            cp.weight.value.data_mut()[i] += eps;
            let mut cm = conv.clone();
            cm.weight.value.data_mut()[i] -= eps;
            check(
                conv.weight.grad.data()[i],
                (loss(&cp, &input) - loss(&cm, &input)) / (2.0 * eps),
            );
        }
        for i in 0..conv.bias.value.len() {
            let mut cp = conv.clone();
            cp.bias.value.data_mut()[i] += eps;
            let mut cm = conv.clone();
            cm.bias.value.data_mut()[i] -= eps;
            check(
                conv.bias.grad.data()[i],
                (loss(&cp, &input) - loss(&cm, &input)) / (2.0 * eps),
            );
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_constant_row_is_uniform() {
        let x = Tensor::from_vec(&[1, 4], vec![3.0; 4]).unwrap();
        let s = softmax_rows(&x);
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        // softmax([0, ln 3]) = [1/4, 3/4].
        let x = Tensor::from_vec(&[1, 2], vec![0.0, 3.0f64.ln()]).unwrap();
        let s = softmax_rows(&x);
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let x = seeded(&[6, 5], 3);
        let s = softmax_rows(&x);
        for r in 0..6 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    /// Kernel-1 convolution and a dense layer with the same weights are the
    /// same map.
    #[test]
    fn conv_k1_equals_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv1d::new("c", 1, 3, 4);
        init_uniform(&mut conv.weight.value, 1.0, &mut rng);
        init_uniform(&mut conv.bias.value, 1.0, &mut rng);
        let mut dense = Dense::new("d", 3, 4);
        dense
            .weight
            .value
            .data_mut()
            .copy_from_slice(conv.weight.value.data());
        dense
            .bias
            .value
            .data_mut()
            .copy_from_slice(conv.bias.value.data());
        let input = seeded(&[7, 3], 9);
        assert_eq!(
            conv.forward(&input).unwrap(),
            dense.forward(&input).unwrap()
        );
    }
}
