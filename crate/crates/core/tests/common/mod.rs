#![allow(dead_code, clippy::type_complexity, clippy::needless_range_loop)]

pub mod reference;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sbprune::data::{Tokens, Vocab};
use sbprune::encoder::{EncoderConfig, EncoderModel};
use sbprune::tensor::{Tape, Tensor, Var};
use sbprune::training::{nli_loss_on, sts_loss_on, NliHead};
use sbprune::Result;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 10;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap().with_grad()
}

/// Like `random_tensor`, but every entry has magnitude in [0.2, 1) so that
/// kinks at zero are out of finite-difference reach.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random_tensor(rng, shape);
    for x in t.data_mut() {
        let sign = if *x < 0.0 { -1.0 } else { 1.0 };
        *x = sign * (0.2 + 0.8 * x.abs());
    }
    t
}

/// Scalar objective `Σ w ⊙ f(inputs)` with fixed random weights, so every
/// output element contributes a distinct direction.
fn objective(
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
    inputs: &[Tensor<f64>],
    weights_seed: u64,
) -> Result<(Tape<f64>, Vec<Var>, Var)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&mut tape, &vars)?;
    let shape = tape.shape(out).to_vec();
    let mut r = rng(weights_seed);
    let w: Vec<f64> = (0..tape.value(out).len()).map(|_| r.random_range(0.5..1.5)).collect();
    let w = tape.constant(&Tensor::new(shape, w)?);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod)?;
    Ok((tape, vars, loss))
}

/// Largest relative error between analytic and central-difference gradients
/// over all inputs; each input is compared as a whole vector,
/// `|a - n| / max(|a|, |n|, GRAD_FLOOR)` in the Euclidean norm.
pub fn grad_check(f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>, inputs: &[Tensor<f64>]) -> f64 {
    const WSEED: u64 = 0xfd;
    let (tape, vars, loss) = objective(f, inputs, WSEED).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let eval = |inputs: &[Tensor<f64>]| -> f64 {
        let (tape, _, loss) = objective(f, inputs, WSEED).expect("forward");
        tape.value(loss)[0]
    };
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = grads
            .get(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        let mut probe = inputs.to_vec();
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + FD_STEP;
            let up = eval(&probe);
            probe[i].data_mut()[j] = x - FD_STEP;
            let down = eval(&probe);
            probe[i].data_mut()[j] = x;
            numeric[j] = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Gradient norms below this are compared absolutely. Some gradients are
/// exactly zero in theory (a key bias shifts every score of a softmax row
/// equally) and the difference quotient then only sees round-off, ~1e-10.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(GRAD_FLOOR)
}

/// Small encoder configurations exercised by the end-to-end checks.
pub fn tiny_config(seed: u64) -> EncoderConfig {
    let mut r = rng(seed);
    let num_heads = r.random_range(1..=2);
    EncoderConfig {
        vocab_size: r.random_range(6..=10),
        // width 2 is degenerate for layer norm: the output is ±1 whatever the input
        hidden_dim: if num_heads == 1 {
            r.random_range(3..=4)
        } else {
            2 * r.random_range(2..=3)
        },
        num_layers: r.random_range(1..=2),
        num_heads,
        ffn_dim: r.random_range(3..=6),
        max_seq_len: 5,
        layer_norm_eps: 1e-12,
        seed,
    }
}

/// A model whose parameters are scaled up from the 0.02 init so the
/// gradients are far from zero.
pub fn tiny_model(seed: u64) -> EncoderModel<f64> {
    let mut m = EncoderModel::<f64>::init(tiny_config(seed)).unwrap();
    let mut r = rng(seed ^ 0x55);
    for p in m.params_mut() {
        for x in p.data_mut() {
            *x += r.random_range(-0.5..0.5);
        }
    }
    m
}

pub fn random_tokens(r: &mut impl Rng, cfg: &EncoderConfig) -> Tokens {
    let len = r.random_range(2..=cfg.max_seq_len);
    let real = r.random_range(1..=len);
    Tokens {
        ids: (0..len)
            .map(|i| if i < real { r.random_range(0..cfg.vocab_size) } else { 0 })
            .collect(),
        mask: (0..len).map(|i| i < real).collect(),
    }
}

/// Gradient check of a loss built from the model's parameters.
pub fn model_grad_check(
    model: &EncoderModel<f64>,
    extra: &[Tensor<f64>],
    loss: &dyn Fn(&mut Tape<f64>, &EncoderModel<f64>, &sbprune::encoder::EncoderVars, &[Var]) -> Result<Var>,
) -> f64 {
    let mut inputs: Vec<Tensor<f64>> = model.params().into_iter().map(|(_, t)| t.clone()).collect();
    let n_model = inputs.len();
    inputs.extend(extra.iter().cloned());
    let template = model.clone();
    let f = move |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        // the forward reads parameters from the tape; the model supplies the config
        let ev = encoder_vars(&template, vars, n_model);
        loss(tape, &template, &ev, &vars[n_model..])
    };
    grad_check(&f, &inputs)
}

fn encoder_vars(m: &EncoderModel<f64>, vars: &[Var], n: usize) -> sbprune::encoder::EncoderVars {
    let parts = sbprune::encoder::NUM_LAYER_PARTS;
    assert_eq!(n, 2 + parts * m.num_layers());
    sbprune::encoder::EncoderVars {
        token: vars[0],
        position: vars[1],
        layers: (0..m.num_layers())
            .map(|l| sbprune::encoder::LayerVars {
                parts: std::array::from_fn(|p| vars[2 + l * parts + p]),
            })
            .collect(),
    }
}

pub fn encoder_grad_error(seed: u64) -> f64 {
    let m = tiny_model(seed);
    let mut r = rng(seed + 1000);
    let toks = random_tokens(&mut r, &m.config);
    model_grad_check(&m, &[], &|tape, m, ev, _| {
        m.encode_on(tape, ev, &toks.ids, &toks.mask, None)
    })
}

pub fn nli_loss_grad_error(seed: u64) -> f64 {
    let m = tiny_model(seed);
    let mut r = rng(seed + 2000);
    let (a, b) = (random_tokens(&mut r, &m.config), random_tokens(&mut r, &m.config));
    let label = r.random_range(0..3);
    let mut head = NliHead::<f64>::init(m.config.hidden_dim, seed);
    for x in head.weight.data_mut().iter_mut().chain(head.bias.data_mut()) {
        *x += r.random_range(-0.5..0.5);
    }
    let extra = [head.weight.clone().with_grad(), head.bias.clone().with_grad()];
    model_grad_check(&m, &extra, &|tape, m, ev, hv| {
        let head = sbprune::training::HeadVars {
            weight: hv[0],
            bias: hv[1],
        };
        nli_loss_on(tape, m, ev, head, &a, &b, label)
    })
}

pub fn sts_loss_grad_error(seed: u64) -> f64 {
    let m = tiny_model(seed);
    let mut r = rng(seed + 3000);
    let (a, b) = (random_tokens(&mut r, &m.config), random_tokens(&mut r, &m.config));
    let gold = r.random_range(0.0..=5.0);
    model_grad_check(&m, &[], &|tape, m, ev, _| sts_loss_on(tape, m, ev, &a, &b, gold))
}

/// Vocabulary `[PAD] [OOV] w0 .. w{n-1}`.
pub fn word_vocab(n: usize) -> Vocab {
    let mut tokens = vec!["[PAD]".to_string(), "[OOV]".to_string()];
    tokens.extend((0..n).map(|i| format!("w{i}")));
    Vocab::from_tokens(tokens).unwrap()
}

pub type OpCase = (&'static str, fn(u64) -> f64);

fn dims(seed: u64) -> (ChaCha8Rng, usize, usize, usize) {
    let mut r = rng(seed);
    let (a, b, c) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=4));
    (r, a, b, c)
}

fn unary(seed: u64, op: fn(&mut Tape<f64>, Var) -> Result<Var>) -> f64 {
    let (mut r, m, n, _) = dims(seed);
    let x = away_from_zero(&mut r, &[m, n]);
    grad_check(&|t, v| op(t, v[0]), &[x])
}

fn binary(seed: u64, op: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> f64 {
    let (mut r, m, n, _) = dims(seed);
    let (a, b) = (random_tensor(&mut r, &[m, n]), random_tensor(&mut r, &[m, n]));
    grad_check(&|t, v| op(t, v[0], v[1]), &[a, b])
}

fn random_mask(r: &mut impl Rng, n: usize) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
    let keep = r.random_range(0..n);
    mask[keep] = true;
    mask
}

/// Every differentiable operation with a per-seed random instance.
pub const OP_CASES: &[OpCase] = &[
    ("matmul", |s| {
        let (mut r, m, k, n) = dims(s);
        let (a, b) = (random_tensor(&mut r, &[m, k]), random_tensor(&mut r, &[k, n]));
        grad_check(&|t, v| t.matmul(v[0], v[1]), &[a, b])
    }),
    ("transpose", |s| unary(s, |t, x| t.transpose(x))),
    ("reshape", |s| {
        let (mut r, m, n, _) = dims(s);
        let x = random_tensor(&mut r, &[m, n]);
        grad_check(&|t, v| t.reshape(v[0], &[n, m]), &[x])
    }),
    ("add", |s| binary(s, |t, a, b| t.add(a, b))),
    ("sub", |s| binary(s, |t, a, b| t.sub(a, b))),
    ("mul", |s| binary(s, |t, a, b| t.mul(a, b))),
    ("scale", |s| unary(s, |t, x| t.scale(x, -1.7))),
    ("abs", |s| unary(s, |t, x| t.abs(x))),
    ("tanh", |s| unary(s, |t, x| t.tanh(x))),
    ("gelu", |s| {
        let (mut r, m, n, _) = dims(s);
        let mut x = random_tensor(&mut r, &[m, n]);
        x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        grad_check(&|t, v| t.gelu(v[0]), &[x])
    }),
    ("add_row_bias", |s| {
        let (mut r, m, n, _) = dims(s);
        let (x, b) = (random_tensor(&mut r, &[m, n]), random_tensor(&mut r, &[n]));
        grad_check(&|t, v| t.add_row_bias(v[0], v[1]), &[x, b])
    }),
    ("softmax_rows", |s| {
        let (mut r, m, n, _) = dims(s);
        let mut x = random_tensor(&mut r, &[m, n + 1]);
        x.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        grad_check(&|t, v| t.softmax_rows(v[0]), &[x])
    }),
    ("layer_norm", |s| {
        let (mut r, m, n, _) = dims(s);
        // d >= 3: at d = 2 the normalized row is ±1 and the true gradient vanishes
        let x = random_tensor(&mut r, &[m, n + 2]);
        let (g, b) = (random_tensor(&mut r, &[n + 2]), random_tensor(&mut r, &[n + 2]));
        grad_check(&|t, v| t.layer_norm(v[0], v[1], v[2], 1e-12), &[x, g, b])
    }),
    ("gather_rows", |s| {
        let (mut r, m, n, k) = dims(s);
        let table = random_tensor(&mut r, &[m, n]);
        // repeated ids exercise gradient accumulation
        let ids: Vec<usize> = (0..k + 2).map(|_| r.random_range(0..m)).collect();
        grad_check(&|t, v| t.gather_rows(v[0], &ids), &[table])
    }),
    ("slice_cols", |s| {
        let (mut r, m, n, _) = dims(s);
        let x = random_tensor(&mut r, &[m, n + 2]);
        let start = r.random_range(0..=2);
        grad_check(&|t, v| t.slice_cols(v[0], start, n), &[x])
    }),
    ("concat_cols", |s| {
        let (mut r, m, n, k) = dims(s);
        let (a, b, c) = (
            random_tensor(&mut r, &[m, n]),
            random_tensor(&mut r, &[m, k]),
            random_tensor(&mut r, &[m, 1]),
        );
        grad_check(&|t, v| t.concat_cols(&[v[0], v[1], v[2], v[0]]), &[a, b, c])
    }),
    ("mask_cols", |s| {
        let (mut r, m, n, _) = dims(s);
        let x = random_tensor(&mut r, &[m, n + 1]);
        let keep = random_mask(&mut r, n + 1);
        // the mask is only meaningful ahead of a softmax
        grad_check(
            &|t, v| {
                let masked = t.mask_cols(v[0], &keep)?;
                t.softmax_rows(masked)
            },
            &[x],
        )
    }),
    ("mean_rows_masked", |s| {
        let (mut r, m, n, _) = dims(s);
        let x = random_tensor(&mut r, &[m + 1, n]);
        let keep = random_mask(&mut r, m + 1);
        grad_check(&|t, v| t.mean_rows_masked(v[0], &keep), &[x])
    }),
    ("sum", |s| unary(s, |t, x| t.sum(x))),
    ("cosine", |s| {
        let (mut r, n, _, _) = dims(s);
        let (a, b) = (random_tensor(&mut r, &[n + 1]), random_tensor(&mut r, &[n + 1]));
        grad_check(&|t, v| t.cosine(v[0], v[1]), &[a, b])
    }),
    ("cross_entropy", |s| {
        let (mut r, n, _, _) = dims(s);
        let mut z = random_tensor(&mut r, &[1, n + 1]);
        z.data_mut().iter_mut().for_each(|v| *v *= 3.0);
        let label = r.random_range(0..=n);
        grad_check(&|t, v| t.cross_entropy(v[0], label), &[z])
    }),
    ("mse", |s| binary(s, |t, a, b| t.mse(a, b))),
];

/// Whole-model cases: the encoder forward and both training losses.
pub const MODEL_CASES: &[OpCase] = &[
    ("encoder", encoder_grad_error),
    ("nli_loss", nli_loss_grad_error),
    ("sts_loss", sts_loss_grad_error),
];
