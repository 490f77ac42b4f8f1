//! BERT-style bidirectional encoder with post-layer-norm residual blocks and
//! mean pooling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            hidden_dim: 32,
            num_layers: 4,
            num_heads: 4,
            ffn_dim: 64,
            max_seq_len: 24,
            layer_norm_eps: 1e-12,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        if self.num_heads > 0 && !self.hidden_dim.is_multiple_of(self.num_heads) {
            problems.push(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            problems.push("layer_norm_eps must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Closed-form number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        let (d, f) = (self.hidden_dim, self.ffn_dim);
        let per_layer = 4 * (d * d + d) + (d * f + f) + (f * d + d) + 4 * d;
        (self.vocab_size + self.max_seq_len) * d + self.num_layers * per_layer
    }
}

/// Parameters of one encoder block, in canonical order (see [`LayerParams::PARTS`]).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f32> {
    pub query_weight: Tensor<T>,
    pub query_bias: Tensor<T>,
    pub key_weight: Tensor<T>,
    pub key_bias: Tensor<T>,
    pub value_weight: Tensor<T>,
    pub value_bias: Tensor<T>,
    pub attn_out_weight: Tensor<T>,
    pub attn_out_bias: Tensor<T>,
    pub attn_norm_gain: Tensor<T>,
    pub attn_norm_bias: Tensor<T>,
    pub ffn_in_weight: Tensor<T>,
    pub ffn_in_bias: Tensor<T>,
    pub ffn_out_weight: Tensor<T>,
    pub ffn_out_bias: Tensor<T>,
    pub ffn_norm_gain: Tensor<T>,
    pub ffn_norm_bias: Tensor<T>,
}

pub const NUM_LAYER_PARTS: usize = 16;

impl<T: Scalar> LayerParams<T> {
    pub const PARTS: [&'static str; NUM_LAYER_PARTS] = [
        "attention.query.weight",
        "attention.query.bias",
        "attention.key.weight",
        "attention.key.bias",
        "attention.value.weight",
        "attention.value.bias",
        "attention.output.weight",
        "attention.output.bias",
        "attention.norm.gain",
        "attention.norm.bias",
        "ffn.input.weight",
        "ffn.input.bias",
        "ffn.output.weight",
        "ffn.output.bias",
        "ffn.norm.gain",
        "ffn.norm.bias",
    ];

    /// Expected shape of each part, in [`Self::PARTS`] order.
    pub fn shapes(cfg: &EncoderConfig) -> [Vec<usize>; NUM_LAYER_PARTS] {
        let (d, f) = (cfg.hidden_dim, cfg.ffn_dim);
        [
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d, d],
            vec![d],
            vec![d],
            vec![d],
            vec![d, f],
            vec![f],
            vec![f, d],
            vec![d],
            vec![d],
            vec![d],
        ]
    }

    pub fn tensors(&self) -> [&Tensor<T>; NUM_LAYER_PARTS] {
        [
            &self.query_weight,
            &self.query_bias,
            &self.key_weight,
            &self.key_bias,
            &self.value_weight,
            &self.value_bias,
            &self.attn_out_weight,
            &self.attn_out_bias,
            &self.attn_norm_gain,
            &self.attn_norm_bias,
            &self.ffn_in_weight,
            &self.ffn_in_bias,
            &self.ffn_out_weight,
            &self.ffn_out_bias,
            &self.ffn_norm_gain,
            &self.ffn_norm_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; NUM_LAYER_PARTS] {
        [
            &mut self.query_weight,
            &mut self.query_bias,
            &mut self.key_weight,
            &mut self.key_bias,
            &mut self.value_weight,
            &mut self.value_bias,
            &mut self.attn_out_weight,
            &mut self.attn_out_bias,
            &mut self.attn_norm_gain,
            &mut self.attn_norm_bias,
            &mut self.ffn_in_weight,
            &mut self.ffn_in_bias,
            &mut self.ffn_out_weight,
            &mut self.ffn_out_bias,
            &mut self.ffn_norm_gain,
            &mut self.ffn_norm_bias,
        ]
    }

    pub fn from_parts(parts: [Tensor<T>; NUM_LAYER_PARTS]) -> Self {
        let [query_weight, query_bias, key_weight, key_bias, value_weight, value_bias, attn_out_weight, attn_out_bias, attn_norm_gain, attn_norm_bias, ffn_in_weight, ffn_in_bias, ffn_out_weight, ffn_out_bias, ffn_norm_gain, ffn_norm_bias] =
            parts;
        Self {
            query_weight,
            query_bias,
            key_weight,
            key_bias,
            value_weight,
            value_bias,
            attn_out_weight,
            attn_out_bias,
            attn_norm_gain,
            attn_norm_bias,
            ffn_in_weight,
            ffn_in_bias,
            ffn_out_weight,
            ffn_out_bias,
            ffn_norm_gain,
            ffn_norm_bias,
        }
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.tensors().iter().zip(other.tensors()).all(|(a, b)| a.bit_eq(b))
    }

    /// Largest absolute elementwise difference; `None` on any shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f64> {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| a.max_abs_diff(b))
            .try_fold(0.0, |acc, d| d.map(|d| f64::max(acc, d)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T = f32> {
    pub config: EncoderConfig,
    pub token_embedding: Tensor<T>,
    pub position_embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding<T = f32> {
    pub vector: Tensor<T>,
}

pub const TOKEN_EMBEDDING: &str = "embeddings.token";
pub const POSITION_EMBEDDING: &str = "embeddings.position";

pub fn layer_param_name(layer: usize, part: &str) -> String {
    format!("layer.{layer}.{part}")
}

/// Tape handles for one bound layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub parts: [Var; NUM_LAYER_PARTS],
}

/// Tape handles for all encoder parameters, in [`EncoderModel::params`] order.
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub token: Var,
    pub position: Var,
    pub layers: Vec<LayerVars>,
}

impl EncoderVars {
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.token, self.position];
        out.extend(self.layers.iter().flat_map(|l| l.parts));
        out
    }
}

fn sample<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of(z * INIT_STD)
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape").with_grad()
}

impl<T: Scalar> EncoderModel<T> {
    /// Seeded initialization: weights ~ N(0, 0.02²), biases 0, norm gains 1.
    pub fn init(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.hidden_dim;
        let token_embedding = sample(&mut rng, &[config.vocab_size, d]);
        let position_embedding = sample(&mut rng, &[config.max_seq_len, d]);
        let shapes = LayerParams::<T>::shapes(&config);
        let layers = (0..config.num_layers)
            .map(|_| {
                let parts = std::array::from_fn(|i| {
                    let name = LayerParams::<T>::PARTS[i];
                    let shape = &shapes[i];
                    if name.ends_with("norm.gain") {
                        Tensor::full(shape, T::one()).with_grad()
                    } else if name.ends_with("bias") {
                        Tensor::zeros(shape).with_grad()
                    } else {
                        sample(&mut rng, shape)
                    }
                });
                LayerParams::from_parts(parts)
            })
            .collect();
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// All parameters with canonical names, embeddings first then layers bottom-up.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            (TOKEN_EMBEDDING.to_string(), &self.token_embedding),
            (POSITION_EMBEDDING.to_string(), &self.position_embedding),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (part, t) in LayerParams::<T>::PARTS.iter().zip(layer.tensors()) {
                out.push((layer_param_name(i, part), t));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.token_embedding.bit_eq(&other.token_embedding)
            && self.position_embedding.bit_eq(&other.position_embedding)
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.bit_eq(b))
    }

    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            token_embedding: self.token_embedding.cast(),
            position_embedding: self.position_embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::from_parts(l.tensors().map(|t| t.cast())))
                .collect(),
        }
    }

    /// Records every parameter on `tape`; `trainable` selects leaves vs constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> EncoderVars {
        let mut put = |t: &Tensor<T>| {
            if trainable {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        };
        let token = put(&self.token_embedding);
        let position = put(&self.position_embedding);
        let layers = self
            .layers
            .iter()
            .map(|l| LayerVars {
                parts: l.tensors().map(&mut put),
            })
            .collect();
        EncoderVars {
            token,
            position,
            layers,
        }
    }

    fn check_input(&self, ids: &[usize], mask: &[bool]) -> Result<()> {
        let cfg = &self.config;
        if ids.is_empty() {
            return Err(Error::input("cannot encode an empty token sequence"));
        }
        if ids.len() > cfg.max_seq_len {
            return Err(Error::input(format!(
                "sequence length {} exceeds max_seq_len {}",
                ids.len(),
                cfg.max_seq_len
            )));
        }
        if mask.len() != ids.len() {
            return Err(Error::input(format!(
                "mask length {} differs from sequence length {}",
                mask.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(Error::input(format!(
                "token id {bad} out of range for vocabulary of {}",
                cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// Hidden states `[len × d]` recorded on `tape`. When `trace` is given, the
    /// attention probabilities of every layer and head are appended to it.
    pub fn encode_on(
        &self,
        tape: &mut Tape<T>,
        vars: &EncoderVars,
        ids: &[usize],
        mask: &[bool],
        mut trace: Option<&mut Vec<Vec<Var>>>,
    ) -> Result<Var> {
        self.check_input(ids, mask)?;
        let positions: Vec<usize> = (0..ids.len()).collect();
        let tok = tape.gather_rows(vars.token, ids)?;
        let pos = tape.gather_rows(vars.position, &positions)?;
        let mut x = tape.add(tok, pos)?;
        for layer in &vars.layers {
            let probs = self.layer_forward(tape, layer, &mut x, mask)?;
            if let Some(t) = trace.as_deref_mut() {
                t.push(probs);
            }
        }
        Ok(x)
    }

    fn layer_forward(&self, tape: &mut Tape<T>, layer: &LayerVars, x: &mut Var, mask: &[bool]) -> Result<Vec<Var>> {
        let [qw, qb, kw, kb, vw, vb, ow, ob, ag, ab, fw1, fb1, fw2, fb2, fg, fbias] = layer.parts;
        let cfg = &self.config;
        let eps = T::of(cfg.layer_norm_eps);
        let hd = cfg.head_dim();
        let scale = T::one() / T::of(hd as f64).sqrt();

        let linear = |tape: &mut Tape<T>, input: Var, w: Var, b: Var| -> Result<Var> {
            let y = tape.matmul(input, w)?;
            tape.add_row_bias(y, b)
        };
        let q = linear(tape, *x, qw, qb)?;
        let k = linear(tape, *x, kw, kb)?;
        let v = linear(tape, *x, vw, vb)?;

        let mut heads = Vec::with_capacity(cfg.num_heads);
        let mut probs = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, h * hd, hd)?;
            let kh = tape.slice_cols(k, h * hd, hd)?;
            let vh = tape.slice_cols(v, h * hd, hd)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = tape.mask_cols(scores, mask)?;
            let p = tape.softmax_rows(scores)?;
            probs.push(p);
            heads.push(tape.matmul(p, vh)?);
        }
        let ctx = tape.concat_cols(&heads)?;
        let attn = linear(tape, ctx, ow, ob)?;
        let res = tape.add(*x, attn)?;
        let h1 = tape.layer_norm(res, ag, ab, eps)?;

        let inner = linear(tape, h1, fw1, fb1)?;
        let inner = tape.gelu(inner)?;
        let ffn = linear(tape, inner, fw2, fb2)?;
        let res = tape.add(h1, ffn)?;
        *x = tape.layer_norm(res, fg, fbias, eps)?;
        Ok(probs)
    }

    /// Per-token hidden states `[len × d]` without gradient tracking.
    pub fn encode(&self, ids: &[usize], mask: &[bool]) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let h = self.encode_on(&mut tape, &vars, ids, mask, None)?;
        Ok(tape.to_tensor(h))
    }

    /// Hidden states plus attention probabilities indexed `[layer][head]`.
    #[allow(clippy::type_complexity)]
    pub fn encode_traced(&self, ids: &[usize], mask: &[bool]) -> Result<(Tensor<T>, Vec<Vec<Tensor<T>>>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false);
        let mut trace = Vec::new();
        let h = self.encode_on(&mut tape, &vars, ids, mask, Some(&mut trace))?;
        let attn = trace
            .iter()
            .map(|heads| heads.iter().map(|&p| tape.to_tensor(p)).collect())
            .collect();
        Ok((tape.to_tensor(h), attn))
    }

    /// Mean-pooled sentence embedding of one token sequence.
    pub fn embed(&self, ids: &[usize], mask: &[bool]) -> Result<SentenceEmbedding<T>> {
        let hidden = self.encode(ids, mask)?;
        pool_mean(&hidden, mask)
    }
}

/// Mean of the unmasked rows of `hidden`.
pub fn pool_mean<T: Scalar>(hidden: &Tensor<T>, mask: &[bool]) -> Result<SentenceEmbedding<T>> {
    let mut tape = Tape::new();
    let h = tape.constant(hidden);
    let m = tape.mean_rows_masked(h, mask)?;
    Ok(SentenceEmbedding {
        vector: tape.to_tensor(m),
    })
}
