//! Dense numeric kernels for the reference network: 3x3 stride-2
//! convolution, fully connected layers, pooling and activations, each with a
//! hand-written backward pass. All math runs in f64.

/// A named parameter tensor (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedTensor {
    pub fn zeros(name: &str, dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        NamedTensor {
            name: name.to_string(),
            dims,
            data: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

pub fn conv_out_dim(input: usize) -> usize {
    // kernel 3, stride 2, zero padding 1
    (input - 1) / 2 + 1
}

/// 3x3 stride-2 convolution with zero padding 1.
/// `input` is CHW, `weight` is [out_c, in_c, 3, 3], `bias` is [out_c].
pub fn conv_forward(
    input: &[f64],
    (in_c, in_h, in_w): (usize, usize, usize),
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
) -> (Vec<f64>, usize, usize) {
    let out_h = conv_out_dim(in_h);
    let out_w = conv_out_dim(in_w);
    let mut out = vec![0.0f64; out_c * out_h * out_w];
    for oc in 0..out_c {
        let w_oc = &weight[oc * in_c * 9..(oc + 1) * in_c * 9];
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = bias[oc];
                for ic in 0..in_c {
                    let w_ic = &w_oc[ic * 9..ic * 9 + 9];
                    let plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * in_w..(iy as usize + 1) * in_w];
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += w_ic[ky * 3 + kx] * row[ix as usize];
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    (out, out_h, out_w)
}

/// Backward pass of `conv_forward`. Returns (d_input, d_weight, d_bias).
pub fn conv_backward(
    d_out: &[f64],
    input: &[f64],
    (in_c, in_h, in_w): (usize, usize, usize),
    weight: &[f64],
    out_c: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let out_h = conv_out_dim(in_h);
    let out_w = conv_out_dim(in_w);
    let mut d_in = vec![0.0f64; in_c * in_h * in_w];
    let mut d_w = vec![0.0f64; weight.len()];
    let mut d_b = vec![0.0f64; out_c];
    for oc in 0..out_c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let g = d_out[(oc * out_h + oy) * out_w + ox];
                if g == 0.0 {
                    continue;
                }
                d_b[oc] += g;
                for ic in 0..in_c {
                    let w_base = (oc * in_c + ic) * 9;
                    let p_base = ic * in_h * in_w;
                    for ky in 0..3usize {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            let idx = p_base + iy as usize * in_w + ix as usize;
                            d_w[w_base + ky * 3 + kx] += g * input[idx];
                            d_in[idx] += g * weight[w_base + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    (d_in, d_w, d_b)
}

/// Bounded rectifier used after convolutions: clamp to `[0, 1]`.
pub fn clamp01_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.clamp(0.0, 1.0)).collect()
}

pub fn clamp01_backward(d_out: &[f64], pre: &[f64]) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .map(|(&g, &p)| if p > 0.0 && p < 1.0 { g } else { 0.0 })
        .collect()
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    // f64::max would swallow NaN here; keep it so poisoned parameters are
    // caught by the non-finite loss guard.
    x.iter()
        .map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
        .collect()
}

pub fn relu_backward(d_out: &[f64], pre: &[f64]) -> Vec<f64> {
    d_out
        .iter()
        .zip(pre)
        .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
        .collect()
}

/// Global average pooling over the spatial dimensions of a CHW tensor.
pub fn gap_forward(x: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let n = (h * w) as f64;
    (0..c)
        .map(|ci| x[ci * h * w..(ci + 1) * h * w].iter().sum::<f64>() / n)
        .collect()
}

pub fn gap_backward(d_out: &[f64], (c, h, w): (usize, usize, usize)) -> Vec<f64> {
    let n = (h * w) as f64;
    let mut d_in = vec![0.0f64; c * h * w];
    for ci in 0..c {
        let g = d_out[ci] / n;
        for v in &mut d_in[ci * h * w..(ci + 1) * h * w] {
            *v = g;
        }
    }
    d_in
}

/// `weight` is [out_dim, in_dim] row-major.
pub fn fc_forward(x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let in_dim = x.len();
    bias.iter()
        .enumerate()
        .map(|(o, &b)| {
            let row = &weight[o * in_dim..(o + 1) * in_dim];
            b + row.iter().zip(x).map(|(&w, &v)| w * v).sum::<f64>()
        })
        .collect()
}

/// Backward pass of `fc_forward`. Returns (d_x, d_weight, d_bias).
pub fn fc_backward(
    d_out: &[f64],
    x: &[f64],
    weight: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = x.len();
    let out_dim = d_out.len();
    let mut d_x = vec![0.0f64; in_dim];
    let mut d_w = vec![0.0f64; weight.len()];
    for o in 0..out_dim {
        let g = d_out[o];
        let row = &weight[o * in_dim..(o + 1) * in_dim];
        let d_row = &mut d_w[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            d_x[i] += g * row[i];
            d_row[i] = g * x[i];
        }
    }
    (d_x, d_w, d_out.to_vec())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randv(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn conv_output_dims() {
        assert_eq!(conv_out_dim(1), 1);
        assert_eq!(conv_out_dim(5), 3);
        assert_eq!(conv_out_dim(6), 3);
        assert_eq!(conv_out_dim(256), 128);
    }

    #[test]
    fn conv_known_value() {
        // 1x3x3 input, single 3x3 kernel of ones, bias 0: output at (0,0)
        // sees the padded top-left 2x2 block.
        let input = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let weight = vec![1.0; 9];
        let (out, oh, ow) = conv_forward(&input, (1, 3, 3), &weight, &[0.0], 1);
        assert_eq!((oh, ow), (2, 2));
        assert_eq!(out[0], 1.0 + 2.0 + 4.0 + 5.0);
        assert_eq!(out[3], 5.0 + 6.0 + 8.0 + 9.0);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let dims = (2usize, 5usize, 4usize);
        let out_c = 3usize;
        let input = randv(&mut rng, dims.0 * dims.1 * dims.2);
        let weight = randv(&mut rng, out_c * dims.0 * 9);
        let bias = randv(&mut rng, out_c);
        // scalar objective: weighted sum of outputs
        let (out, oh, ow) = conv_forward(&input, dims, &weight, &bias, out_c);
        let probe = randv(&mut rng, out.len());
        let obj = |input: &[f64], weight: &[f64], bias: &[f64]| -> f64 {
            let (o, _, _) = conv_forward(input, dims, weight, bias, out_c);
            o.iter().zip(&probe).map(|(a, b)| a * b).sum()
        };
        let _ = (oh, ow);
        let (d_in, d_w, d_b) = conv_backward(&probe, &input, dims, &weight, out_c);

        let h = 1e-5;
        for idx in [0usize, 7, 19] {
            let mut ip = input.clone();
            ip[idx] += h;
            let mut im = input.clone();
            im[idx] -= h;
            let fd = (obj(&ip, &weight, &bias) - obj(&im, &weight, &bias)) / (2.0 * h);
            assert!((fd - d_in[idx]).abs() < 1e-7, "d_in[{idx}]");
        }
        for idx in [0usize, 10, weight.len() - 1] {
            let mut wp = weight.clone();
            wp[idx] += h;
            let mut wm = weight.clone();
            wm[idx] -= h;
            let fd = (obj(&input, &wp, &bias) - obj(&input, &wm, &bias)) / (2.0 * h);
            assert!((fd - d_w[idx]).abs() < 1e-7, "d_w[{idx}]");
        }
        for idx in 0..out_c {
            let mut bp = bias.clone();
            bp[idx] += h;
            let mut bm = bias.clone();
            bm[idx] -= h;
            let fd = (obj(&input, &weight, &bp) - obj(&input, &weight, &bm)) / (2.0 * h);
            assert!((fd - d_b[idx]).abs() < 1e-7, "d_b[{idx}]");
        }
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1.0, -2.0, 0.5, 30.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gap_roundtrip() {
        let x = vec![1.0, 3.0, 5.0, 7.0, 2.0, 2.0, 2.0, 2.0];
        let g = gap_forward(&x, (2, 2, 2));
        assert_eq!(g, vec![4.0, 2.0]);
        let d = gap_backward(&[8.0, 4.0], (2, 2, 2));
        assert_eq!(d[0], 2.0);
        assert_eq!(d[4], 1.0);
    }
}
