use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::autograd::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{Real, Tensor};

/// Samples are redrawn outside ±TRUNCATION·σ.
const TRUNCATION: f64 = 3.0;

#[derive(Debug, Clone, Copy)]
pub struct LayerIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub attn_norm_gain: ParamId,
    pub attn_norm_bias: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ffn_norm_gain: ParamId,
    pub ffn_norm_bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct WeightIds {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub embed_norm_gain: ParamId,
    pub embed_norm_bias: ParamId,
    pub layers: Vec<LayerIds>,
    pub mlm_dense: DenseIds,
    pub mlm_norm_gain: ParamId,
    pub mlm_norm_bias: ParamId,
    pub mlm_output_bias: ParamId,
    pub position_head: Option<DenseIds>,
    pub span_head: Option<DenseIds>,
}

/// All learnable tensors of the encoder and its heads.
#[derive(Debug, Clone)]
pub struct ModelWeights<T: Real = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub ids: WeightIds,
}

/// Expected `(name, shape)` of every parameter, in creation order.
pub fn parameter_layout(
    config: &ModelConfig,
    position_head: bool,
    span_head: bool,
) -> Vec<(String, Vec<usize>)> {
    let (v, p, h, f) = (
        config.vocab_size,
        config.max_positions,
        config.hidden,
        config.ffn_size,
    );
    let mut out: Vec<(String, Vec<usize>)> = vec![
        ("embeddings.token".into(), vec![v, h]),
        ("embeddings.position".into(), vec![p + 1, h]),
        ("embeddings.norm.gain".into(), vec![h]),
        ("embeddings.norm.bias".into(), vec![h]),
    ];
    for l in 0..config.layers {
        let pre = format!("encoder.layer{l}");
        for (n, s) in [
            ("attn.wq", vec![h, h]),
            ("attn.bq", vec![h]),
            ("attn.wk", vec![h, h]),
            ("attn.bk", vec![h]),
            ("attn.wv", vec![h, h]),
            ("attn.bv", vec![h]),
            ("attn.wo", vec![h, h]),
            ("attn.bo", vec![h]),
            ("attn.norm.gain", vec![h]),
            ("attn.norm.bias", vec![h]),
            ("ffn.w1", vec![h, f]),
            ("ffn.b1", vec![f]),
            ("ffn.w2", vec![f, h]),
            ("ffn.b2", vec![h]),
            ("ffn.norm.gain", vec![h]),
            ("ffn.norm.bias", vec![h]),
        ] {
            out.push((format!("{pre}.{n}"), s));
        }
    }
    out.extend([
        ("heads.mlm.dense.weight".into(), vec![h, h]),
        ("heads.mlm.dense.bias".into(), vec![h]),
        ("heads.mlm.norm.gain".into(), vec![h]),
        ("heads.mlm.norm.bias".into(), vec![h]),
        ("heads.mlm.output_bias".into(), vec![v]),
    ]);
    if position_head {
        out.push(("heads.position.weight".into(), vec![h, p]));
        out.push(("heads.position.bias".into(), vec![p]));
    }
    if span_head {
        out.push(("heads.span.weight".into(), vec![h, 2]));
        out.push(("heads.span.bias".into(), vec![2]));
    }
    out
}

fn is_gain(name: &str) -> bool {
    name.ends_with(".gain")
}

fn is_matrix(shape: &[usize]) -> bool {
    shape.len() == 2
}

/// Truncated normal, zero mean, standard deviation `std` before truncation.
pub fn truncated_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= TRUNCATION * std {
                break T::from_f64(v);
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn init_tensor<T: Real, R: Rng + ?Sized>(name: &str, shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    if is_gain(name) {
        Tensor::ones(shape)
    } else if is_matrix(shape) {
        truncated_normal(shape, std, rng)
    } else {
        Tensor::zeros(shape)
    }
}

fn dense(params: &ParamStore<impl Real>, prefix: &str) -> Result<Option<DenseIds>> {
    match (params.id(&format!("{prefix}.weight")), params.id(&format!("{prefix}.bias"))) {
        (Some(weight), Some(bias)) => Ok(Some(DenseIds { weight, bias })),
        (None, None) => Ok(None),
        _ => Err(Error::Config(format!("{prefix} has a weight or bias but not both"))),
    }
}

impl<T: Real> ModelWeights<T> {
    /// Fresh weights: truncated-normal matrices, zero biases, unit norm gains.
    /// The position head is created last so models with and without it share
    /// every other initial value.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_heads(config, seed, true)
    }

    pub fn init_with_heads(config: &ModelConfig, seed: u64, position_head: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, Stream::WeightInit, 0);
        let mut params = ParamStore::new();
        for (name, shape) in parameter_layout(config, position_head, false) {
            let t = init_tensor(&name, &shape, config.init_std, &mut rng);
            params.add(name, t)?;
        }
        Self::from_params(config.clone(), params)
    }

    /// Resolves typed handles from a named store, checking every shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let has_pos = params.id("heads.position.weight").is_some();
        let has_span = params.id("heads.span.weight").is_some();
        let layout = parameter_layout(&config, has_pos, has_span);
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters for this config, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "parameter {name} has shape {:?}, config implies {shape:?}",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let layers = (0..config.layers)
            .map(|l| {
                let n = |s: &str| id(&format!("encoder.layer{l}.{s}"));
                LayerIds {
                    wq: n("attn.wq"),
                    bq: n("attn.bq"),
                    wk: n("attn.wk"),
                    bk: n("attn.bk"),
                    wv: n("attn.wv"),
                    bv: n("attn.bv"),
                    wo: n("attn.wo"),
                    bo: n("attn.bo"),
                    attn_norm_gain: n("attn.norm.gain"),
                    attn_norm_bias: n("attn.norm.bias"),
                    w1: n("ffn.w1"),
                    b1: n("ffn.b1"),
                    w2: n("ffn.w2"),
                    b2: n("ffn.b2"),
                    ffn_norm_gain: n("ffn.norm.gain"),
                    ffn_norm_bias: n("ffn.norm.bias"),
                }
            })
            .collect();
        let ids = WeightIds {
            token_embedding: id("embeddings.token"),
            position_embedding: id("embeddings.position"),
            embed_norm_gain: id("embeddings.norm.gain"),
            embed_norm_bias: id("embeddings.norm.bias"),
            layers,
            mlm_dense: dense(&params, "heads.mlm.dense")?.expect("checked above"),
            mlm_norm_gain: id("heads.mlm.norm.gain"),
            mlm_norm_bias: id("heads.mlm.norm.bias"),
            mlm_output_bias: id("heads.mlm.output_bias"),
            position_head: dense(&params, "heads.position")?,
            span_head: dense(&params, "heads.span")?,
        };
        Ok(Self { config, params, ids })
    }

    /// Adds a freshly initialised span-extraction head (no-op if present).
    pub fn add_span_head(&mut self, seed: u64) -> Result<()> {
        if self.ids.span_head.is_some() {
            return Ok(());
        }
        let mut rng = stream_rng(seed, Stream::SpanHeadInit, 0);
        let h = self.config.hidden;
        let weight = self
            .params
            .add("heads.span.weight", truncated_normal(&[h, 2], self.config.init_std, &mut rng))?;
        let bias = self.params.add("heads.span.bias", Tensor::zeros(&[2]))?;
        self.ids.span_head = Some(DenseIds { weight, bias });
        Ok(())
    }

    /// Copy without the position head: the plain masked-token model.
    pub fn without_position_head(&self) -> Result<Self> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            if !p.name.starts_with("heads.position.") {
                params.add(p.name.clone(), p.value.clone())?;
            }
        }
        Self::from_params(self.config.clone(), params)
    }

    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(p.name.clone(), p.value.cast()).expect("unique names");
        }
        ModelWeights::from_params(self.config.clone(), params).expect("same layout")
    }

    /// Bitwise equality of every parameter value.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(other.params.iter())
                .all(|(a, b)| a.name == b.name && a.value.bit_eq(&b.value))
    }
}
