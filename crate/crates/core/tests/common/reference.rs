//! A plain nested-loop encoder used as an oracle for the tape-based one.
//! Weights are read as `[in × out]`, applied as `x · W + b`.

use sbprune::encoder::{EncoderModel, LayerParams};

pub type Matrix = Vec<Vec<f64>>;

fn linear(x: &Matrix, w: &[f64], b: &[f64]) -> Matrix {
    let out = b.len();
    x.iter()
        .map(|row| {
            (0..out)
                .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i * out + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Matrix {
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + eps).sqrt() * gain[i] + bias[i])
                .collect()
        })
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn block(p: &LayerParams<f64>, x: &Matrix, mask: &[bool], heads: usize, eps: f64) -> Matrix {
    let d = x[0].len();
    let hd = d / heads;
    let q = linear(x, p.query_weight.data(), p.query_bias.data());
    let k = linear(x, p.key_weight.data(), p.key_bias.data());
    let v = linear(x, p.value_weight.data(), p.value_bias.data());
    let n = x.len();
    let mut ctx = vec![vec![0.0; d]; n];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    let s: f64 = cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt();
                    if mask[j] {
                        s
                    } else {
                        s - 1e9
                    }
                })
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = exp.iter().sum();
            for c in cols.clone() {
                ctx[i][c] = (0..n).map(|j| exp[j] / z * v[j][c]).sum();
            }
        }
    }
    let attn = linear(&ctx, p.attn_out_weight.data(), p.attn_out_bias.data());
    let h1 = layer_norm(&add(x, &attn), p.attn_norm_gain.data(), p.attn_norm_bias.data(), eps);
    let inner: Matrix = linear(&h1, p.ffn_in_weight.data(), p.ffn_in_bias.data())
        .into_iter()
        .map(|r| r.into_iter().map(gelu).collect())
        .collect();
    let ffn = linear(&inner, p.ffn_out_weight.data(), p.ffn_out_bias.data());
    layer_norm(&add(&h1, &ffn), p.ffn_norm_gain.data(), p.ffn_norm_bias.data(), eps)
}

/// Hidden states after applying the blocks listed in `layers`, in that order.
pub fn forward(model: &EncoderModel<f64>, layers: &[usize], ids: &[usize], mask: &[bool]) -> Matrix {
    let cfg = &model.config;
    let mut x: Matrix = ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| {
            model
                .token_embedding
                .row(id)
                .iter()
                .zip(model.position_embedding.row(pos))
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    for &l in layers {
        x = block(&model.layers[l], &x, mask, cfg.num_heads, cfg.layer_norm_eps);
    }
    x
}

pub fn max_diff(a: &Matrix, b: &sbprune::tensor::Tensor<f64>) -> f64 {
    a.iter()
        .flatten()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
