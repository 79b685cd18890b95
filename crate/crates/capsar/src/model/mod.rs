//! The CAPSAR network: Bi-GRU encoding → location-proximity weighting →
//! conv-derived primary capsules → two sharing-weight routing stages →
//! sentiment capsule lengths, plus the dual-mask reconstruction head.

pub mod capsules;
pub mod encoder;
pub mod proximity;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{GradTape, ValueId};
use crate::tensor::{Element, Tensor};

/// Architecture and loss hyperparameters. `default()` is the published
/// configuration; [`ModelConfig::toy`] is the miniature used for gradient
/// checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Word-embedding dimension D_x.
    pub d_x: usize,
    /// Sentence length cap; shorter sentences are zero-padded up to it.
    pub t_max: usize,
    /// GRU hidden size per direction (encoder rows have width 2H).
    pub gru_hidden: usize,
    /// Convolution kernel width (odd).
    pub conv_kernel: usize,
    /// Convolution output channels.
    pub conv_channels: usize,
    pub primary_count: usize,
    pub primary_dim: usize,
    pub inter_count: usize,
    pub inter_dim: usize,
    /// Number of sentiment capsules = number of classes C.
    pub sentiment_count: usize,
    pub sentiment_dim: usize,
    /// Routing iterations r (both routing stages).
    pub routing_iters: usize,
    /// Location-proximity constants of the l_t formula.
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Dropout rate on the encoder output (training mode only).
    pub dropout: f64,
    /// Margin-loss bounds.
    pub m_plus: f64,
    pub m_minus: f64,
    /// Reconstruction-loss weight λ.
    pub lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_x: 300,
            t_max: 75,
            gru_hidden: 150,
            conv_kernel: 3,
            conv_channels: 300,
            primary_count: 450,
            primary_dim: 50,
            inter_count: 30,
            inter_dim: 150,
            sentiment_count: 3,
            sentiment_dim: 300,
            routing_iters: 3,
            alpha: 3.0,
            beta: 10.0,
            gamma: 1.0,
            dropout: 0.5,
            m_plus: 1.0,
            m_minus: 0.1,
            lambda: 0.003,
        }
    }
}

impl ModelConfig {
    /// Miniature configuration for finite-difference checking: small enough
    /// that a full-coordinate sweep over every parameter finishes in
    /// seconds. The capsule tiling invariant forces primary_count =
    /// t_max · conv_channels / primary_dim = 7 here.
    pub fn toy() -> Self {
        ModelConfig {
            d_x: 8,
            t_max: 7,
            gru_hidden: 5,
            conv_kernel: 3,
            conv_channels: 4,
            primary_count: 7,
            primary_dim: 4,
            inter_count: 3,
            inter_dim: 5,
            sentiment_count: 2,
            sentiment_dim: 6,
            routing_iters: 2,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    /// Width of an encoder output row (both GRU directions concatenated).
    pub fn encoder_width(&self) -> usize {
        2 * self.gru_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_x", self.d_x),
            ("t_max", self.t_max),
            ("gru_hidden", self.gru_hidden),
            ("conv_channels", self.conv_channels),
            ("primary_count", self.primary_count),
            ("primary_dim", self.primary_dim),
            ("inter_count", self.inter_count),
            ("inter_dim", self.inter_dim),
            ("sentiment_dim", self.sentiment_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "conv_kernel must be odd for same padding, got {}",
                self.conv_kernel
            )));
        }
        if self.t_max * self.conv_channels != self.primary_count * self.primary_dim {
            return Err(Error::Config(format!(
                "capsule tiling broken: t_max·conv_channels = {}·{} = {} but \
                 primary_count·primary_dim = {}·{} = {}",
                self.t_max,
                self.conv_channels,
                self.t_max * self.conv_channels,
                self.primary_count,
                self.primary_dim,
                self.primary_count * self.primary_dim
            )));
        }
        if self.sentiment_count < 2 {
            return Err(Error::Config(
                "sentiment_count must be at least 2 (one capsule per class)".into(),
            ));
        }
        if self.routing_iters == 0 {
            return Err(Error::Config("routing_iters must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("m_plus", self.m_plus),
            ("m_minus", self.m_minus),
            ("lambda", self.lambda),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite, got {v}")));
            }
        }
        if self.beta == 0.0 {
            return Err(Error::Config("beta must be nonzero".into()));
        }
        Ok(())
    }
}

/// Parameter count of one sharing-weight routing layer and the saving
/// versus routing with per-child transforms: shared = N·D_next·D_L,
/// saving = (M−1)·N·D_L·D_next.
pub fn shared_routing_param_count(
    m: usize,
    n: usize,
    d_l: usize,
    d_next: usize,
) -> (usize, usize) {
    let shared = n * d_next * d_l;
    let saving = (m - 1) * n * d_l * d_next;
    (shared, saving)
}

/// Canonical (name, shape) table for a model of `config` over a
/// `vocab_len`-row embedding table, in the same sorted order as
/// [`ModelParams::entries`]. Checkpoint loading validates sections
/// against it.
pub fn expected_shapes(config: &ModelConfig, vocab_len: usize) -> Vec<(&'static str, Vec<usize>)> {
    let d = config.d_x;
    let h = config.gru_hidden;
    vec![
        ("conv.bias", vec![config.conv_channels]),
        (
            "conv.weight",
            vec![config.conv_kernel, config.encoder_width(), config.conv_channels],
        ),
        ("embed.table", vec![vocab_len, d]),
        ("gru.bwd.b_h", vec![h]),
        ("gru.bwd.b_r", vec![h]),
        ("gru.bwd.b_z", vec![h]),
        ("gru.bwd.u_h", vec![h, h]),
        ("gru.bwd.u_r", vec![h, h]),
        ("gru.bwd.u_z", vec![h, h]),
        ("gru.bwd.w_h", vec![d, h]),
        ("gru.bwd.w_r", vec![d, h]),
        ("gru.bwd.w_z", vec![d, h]),
        ("gru.fwd.b_h", vec![h]),
        ("gru.fwd.b_r", vec![h]),
        ("gru.fwd.b_z", vec![h]),
        ("gru.fwd.u_h", vec![h, h]),
        ("gru.fwd.u_r", vec![h, h]),
        ("gru.fwd.u_z", vec![h, h]),
        ("gru.fwd.w_h", vec![d, h]),
        ("gru.fwd.w_r", vec![d, h]),
        ("gru.fwd.w_z", vec![d, h]),
        ("recon.bias", vec![d]),
        (
            "recon.weight",
            vec![config.sentiment_count * config.sentiment_dim, d],
        ),
        (
            "route.0.weight",
            vec![config.inter_count, config.inter_dim, config.primary_dim],
        ),
        (
            "route.1.weight",
            vec![config.sentiment_count, config.sentiment_dim, config.inter_dim],
        ),
    ]
}

/// One GRU direction's weights. W_* map the input, U_* map the previous
/// state, b_* are the gate biases.
#[derive(Debug, Clone)]
pub struct GruParams<E: Element> {
    pub w_z: Tensor<E>,
    pub u_z: Tensor<E>,
    pub b_z: Tensor<E>,
    pub w_r: Tensor<E>,
    pub u_r: Tensor<E>,
    pub b_r: Tensor<E>,
    pub w_h: Tensor<E>,
    pub u_h: Tensor<E>,
    pub b_h: Tensor<E>,
}

fn glorot_uniform<E: Element>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut Rng,
) -> Tensor<E> {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<E> = (0..n).map(|_| E::of(rng.uniform(-s, s))).collect();
    Tensor::new(shape, data).expect("finite by construction")
}

impl<E: Element> GruParams<E> {
    /// Draws the six weight matrices in canonical name order
    /// (u_h, u_r, u_z, w_h, w_r, w_z — biases are zero and draw nothing).
    fn init(d_in: usize, d_h: usize, rng: &mut Rng) -> GruParams<E> {
        let u = |rng: &mut Rng| glorot_uniform(vec![d_h, d_h], d_h, d_h, rng);
        let w = |rng: &mut Rng| glorot_uniform(vec![d_in, d_h], d_in, d_h, rng);
        let u_h = u(rng);
        let u_r = u(rng);
        let u_z = u(rng);
        let w_h = w(rng);
        let w_r = w(rng);
        let w_z = w(rng);
        GruParams {
            w_z,
            u_z,
            b_z: Tensor::zeros(vec![d_h]),
            w_r,
            u_r,
            b_r: Tensor::zeros(vec![d_h]),
            w_h,
            u_h,
            b_h: Tensor::zeros(vec![d_h]),
        }
    }

    fn cast<F: Element>(&self) -> GruParams<F> {
        GruParams {
            w_z: self.w_z.cast(),
            u_z: self.u_z.cast(),
            b_z: self.b_z.cast(),
            w_r: self.w_r.cast(),
            u_r: self.u_r.cast(),
            b_r: self.b_r.cast(),
            w_h: self.w_h.cast(),
            u_h: self.u_h.cast(),
            b_h: self.b_h.cast(),
        }
    }
}

/// Every trainable tensor in the model, addressable by canonical name.
///
/// The canonical order — sorted by name — is load-bearing: it is the
/// initialization draw order, the checkpoint section order, and the
/// optimizer slot order.
#[derive(Debug, Clone)]
pub struct ModelParams<E: Element> {
    pub embed: Tensor<E>,
    pub gru_fwd: GruParams<E>,
    pub gru_bwd: GruParams<E>,
    pub conv_w: Tensor<E>,
    pub conv_b: Tensor<E>,
    pub route0: Tensor<E>,
    pub route1: Tensor<E>,
    pub recon_w: Tensor<E>,
    pub recon_b: Tensor<E>,
}

impl<E: Element> ModelParams<E> {
    /// Initializes all weights uniform(−s, s) with s = √(6/(fan_in+fan_out))
    /// and all biases zero. The embedding table is supplied by the caller
    /// (pretrained or random); the remaining tensors draw from `rng` in
    /// canonical name order.
    pub fn init(config: &ModelConfig, embed: Tensor<E>, rng: &mut Rng) -> Result<ModelParams<E>> {
        config.validate()?;
        if embed.shape().len() != 2 || embed.shape()[1] != config.d_x {
            return Err(Error::Contract(format!(
                "embedding table shape {:?} does not match d_x = {}",
                embed.shape(),
                config.d_x
            )));
        }
        let width = config.encoder_width();
        let k = config.conv_kernel;
        let cc = config.conv_channels;

        // Canonical name order: conv.* → embed (given) → gru.bwd.* →
        // gru.fwd.* → recon.* → route.*.
        let conv_b = Tensor::zeros(vec![cc]);
        let conv_w = glorot_uniform(vec![k, width, cc], k * width, k * cc, rng);
        let gru_bwd = GruParams::init(config.d_x, config.gru_hidden, rng);
        let gru_fwd = GruParams::init(config.d_x, config.gru_hidden, rng);
        let recon_in = config.sentiment_count * config.sentiment_dim;
        let recon_b = Tensor::zeros(vec![config.d_x]);
        let recon_w = glorot_uniform(vec![recon_in, config.d_x], recon_in, config.d_x, rng);
        let route0 = glorot_uniform(
            vec![config.inter_count, config.inter_dim, config.primary_dim],
            config.primary_dim,
            config.inter_dim,
            rng,
        );
        let route1 = glorot_uniform(
            vec![config.sentiment_count, config.sentiment_dim, config.inter_dim],
            config.inter_dim,
            config.sentiment_dim,
            rng,
        );

        Ok(ModelParams {
            embed,
            gru_fwd,
            gru_bwd,
            conv_w,
            conv_b,
            route0,
            route1,
            recon_w,
            recon_b,
        })
    }

    /// (name, tensor) pairs in canonical sorted-name order.
    pub fn entries(&self) -> Vec<(&'static str, &Tensor<E>)> {
        vec![
            ("conv.bias", &self.conv_b),
            ("conv.weight", &self.conv_w),
            ("embed.table", &self.embed),
            ("gru.bwd.b_h", &self.gru_bwd.b_h),
            ("gru.bwd.b_r", &self.gru_bwd.b_r),
            ("gru.bwd.b_z", &self.gru_bwd.b_z),
            ("gru.bwd.u_h", &self.gru_bwd.u_h),
            ("gru.bwd.u_r", &self.gru_bwd.u_r),
            ("gru.bwd.u_z", &self.gru_bwd.u_z),
            ("gru.bwd.w_h", &self.gru_bwd.w_h),
            ("gru.bwd.w_r", &self.gru_bwd.w_r),
            ("gru.bwd.w_z", &self.gru_bwd.w_z),
            ("gru.fwd.b_h", &self.gru_fwd.b_h),
            ("gru.fwd.b_r", &self.gru_fwd.b_r),
            ("gru.fwd.b_z", &self.gru_fwd.b_z),
            ("gru.fwd.u_h", &self.gru_fwd.u_h),
            ("gru.fwd.u_r", &self.gru_fwd.u_r),
            ("gru.fwd.u_z", &self.gru_fwd.u_z),
            ("gru.fwd.w_h", &self.gru_fwd.w_h),
            ("gru.fwd.w_r", &self.gru_fwd.w_r),
            ("gru.fwd.w_z", &self.gru_fwd.w_z),
            ("recon.bias", &self.recon_b),
            ("recon.weight", &self.recon_w),
            ("route.0.weight", &self.route0),
            ("route.1.weight", &self.route1),
        ]
    }

    /// Mutable access in the same canonical order.
    pub fn entries_mut(&mut self) -> Vec<(&'static str, &mut Tensor<E>)> {
        vec![
            ("conv.bias", &mut self.conv_b),
            ("conv.weight", &mut self.conv_w),
            ("embed.table", &mut self.embed),
            ("gru.bwd.b_h", &mut self.gru_bwd.b_h),
            ("gru.bwd.b_r", &mut self.gru_bwd.b_r),
            ("gru.bwd.b_z", &mut self.gru_bwd.b_z),
            ("gru.bwd.u_h", &mut self.gru_bwd.u_h),
            ("gru.bwd.u_r", &mut self.gru_bwd.u_r),
            ("gru.bwd.u_z", &mut self.gru_bwd.u_z),
            ("gru.bwd.w_h", &mut self.gru_bwd.w_h),
            ("gru.bwd.w_r", &mut self.gru_bwd.w_r),
            ("gru.bwd.w_z", &mut self.gru_bwd.w_z),
            ("gru.fwd.b_h", &mut self.gru_fwd.b_h),
            ("gru.fwd.b_r", &mut self.gru_fwd.b_r),
            ("gru.fwd.b_z", &mut self.gru_fwd.b_z),
            ("gru.fwd.u_h", &mut self.gru_fwd.u_h),
            ("gru.fwd.u_r", &mut self.gru_fwd.u_r),
            ("gru.fwd.u_z", &mut self.gru_fwd.u_z),
            ("gru.fwd.w_h", &mut self.gru_fwd.w_h),
            ("gru.fwd.w_r", &mut self.gru_fwd.w_r),
            ("gru.fwd.w_z", &mut self.gru_fwd.w_z),
            ("recon.bias", &mut self.recon_b),
            ("recon.weight", &mut self.recon_w),
            ("route.0.weight", &mut self.route0),
            ("route.1.weight", &mut self.route1),
        ]
    }

    pub fn cast<F: Element>(&self) -> ModelParams<F> {
        ModelParams {
            embed: self.embed.cast(),
            gru_fwd: self.gru_fwd.cast(),
            gru_bwd: self.gru_bwd.cast(),
            conv_w: self.conv_w.cast(),
            conv_b: self.conv_b.cast(),
            route0: self.route0.cast(),
            route1: self.route1.cast(),
            recon_w: self.recon_w.cast(),
            recon_b: self.recon_b.cast(),
        }
    }

    /// Rebuilds a parameter set from (name, tensor) pairs in canonical
    /// order, as read back from a checkpoint. Names and shapes must match
    /// [`expected_shapes`] exactly.
    pub fn from_entries(
        config: &ModelConfig,
        vocab_len: usize,
        entries: Vec<(String, Tensor<E>)>,
    ) -> Result<ModelParams<E>> {
        config.validate()?;
        let expected = expected_shapes(config, vocab_len);
        if entries.len() != expected.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                entries.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in entries.iter().zip(&expected) {
            if name != want_name {
                return Err(Error::Contract(format!(
                    "expected parameter {want_name:?}, got {name:?}"
                )));
            }
            if tensor.shape() != &want_shape[..] {
                return Err(Error::Contract(format!(
                    "parameter {name:?} has shape {:?}, expected {want_shape:?}",
                    tensor.shape()
                )));
            }
        }

        let mut it = entries.into_iter().map(|(_, tensor)| tensor);
        let mut next = || it.next().expect("length checked above");
        let conv_b = next();
        let conv_w = next();
        let embed = next();
        let mut gru = || GruParams {
            b_h: next(),
            b_r: next(),
            b_z: next(),
            u_h: next(),
            u_r: next(),
            u_z: next(),
            w_h: next(),
            w_r: next(),
            w_z: next(),
        };
        let gru_bwd = gru();
        let gru_fwd = gru();
        let recon_b = next();
        let recon_w = next();
        let route0 = next();
        let route1 = next();
        Ok(ModelParams {
            embed,
            gru_fwd,
            gru_bwd,
            conv_w,
            conv_b,
            route0,
            route1,
            recon_w,
            recon_b,
        })
    }

    /// Registers every parameter on a tape and returns the handles.
    pub fn bind(&self, tape: &mut GradTape<E>) -> BoundParams {
        let bind_gru = |tape: &mut GradTape<E>, g: &GruParams<E>| BoundGru {
            wz: tape.leaf(g.w_z.clone()),
            uz: tape.leaf(g.u_z.clone()),
            bz: tape.leaf(g.b_z.clone()),
            wr: tape.leaf(g.w_r.clone()),
            ur: tape.leaf(g.u_r.clone()),
            br: tape.leaf(g.b_r.clone()),
            wh: tape.leaf(g.w_h.clone()),
            uh: tape.leaf(g.u_h.clone()),
            bh: tape.leaf(g.b_h.clone()),
        };
        BoundParams {
            embed: tape.leaf(self.embed.clone()),
            gru_fwd: bind_gru(tape, &self.gru_fwd),
            gru_bwd: bind_gru(tape, &self.gru_bwd),
            conv_w: tape.leaf(self.conv_w.clone()),
            conv_b: tape.leaf(self.conv_b.clone()),
            route0: tape.leaf(self.route0.clone()),
            route1: tape.leaf(self.route1.clone()),
            recon_w: tape.leaf(self.recon_w.clone()),
            recon_b: tape.leaf(self.recon_b.clone()),
        }
    }
}

/// Tape handles for one GRU direction.
#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub wz: ValueId,
    pub uz: ValueId,
    pub bz: ValueId,
    pub wr: ValueId,
    pub ur: ValueId,
    pub br: ValueId,
    pub wh: ValueId,
    pub uh: ValueId,
    pub bh: ValueId,
}

/// Tape handles for all parameters, mirroring [`ModelParams`].
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub embed: ValueId,
    pub gru_fwd: BoundGru,
    pub gru_bwd: BoundGru,
    pub conv_w: ValueId,
    pub conv_b: ValueId,
    pub route0: ValueId,
    pub route1: ValueId,
    pub recon_w: ValueId,
    pub recon_b: ValueId,
}

impl BoundParams {
    /// Handles in the same canonical order as [`ModelParams::entries`].
    pub fn ids(&self) -> Vec<(&'static str, ValueId)> {
        vec![
            ("conv.bias", self.conv_b),
            ("conv.weight", self.conv_w),
            ("embed.table", self.embed),
            ("gru.bwd.b_h", self.gru_bwd.bh),
            ("gru.bwd.b_r", self.gru_bwd.br),
            ("gru.bwd.b_z", self.gru_bwd.bz),
            ("gru.bwd.u_h", self.gru_bwd.uh),
            ("gru.bwd.u_r", self.gru_bwd.ur),
            ("gru.bwd.u_z", self.gru_bwd.uz),
            ("gru.bwd.w_h", self.gru_bwd.wh),
            ("gru.bwd.w_r", self.gru_bwd.wr),
            ("gru.bwd.w_z", self.gru_bwd.wz),
            ("gru.fwd.b_h", self.gru_fwd.bh),
            ("gru.fwd.b_r", self.gru_fwd.br),
            ("gru.fwd.b_z", self.gru_fwd.bz),
            ("gru.fwd.u_h", self.gru_fwd.uh),
            ("gru.fwd.u_r", self.gru_fwd.ur),
            ("gru.fwd.u_z", self.gru_fwd.uz),
            ("gru.fwd.w_h", self.gru_fwd.wh),
            ("gru.fwd.w_r", self.gru_fwd.wr),
            ("gru.fwd.w_z", self.gru_fwd.wz),
            ("recon.bias", self.recon_b),
            ("recon.weight", self.recon_w),
            ("route.0.weight", self.route0),
            ("route.1.weight", self.route1),
        ]
    }
}

/// Tape handles to every stage of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Bi-GRU output `[t_max × 2H]` (after dropout in training mode).
    pub hidden: ValueId,
    /// Proximity-weighted hidden states ĥ (equals `hidden` when proximity
    /// is disabled — the identity weighting).
    pub weighted: ValueId,
    /// Primary capsules `[primary_count × primary_dim]` (squashed).
    pub primary: ValueId,
    /// Intermediate capsules `[inter_count × inter_dim]`.
    pub intermediate: ValueId,
    /// Sentiment capsules `[C × sentiment_dim]`.
    pub sentiment: ValueId,
    /// Capsule lengths v_prob `[C]`.
    pub v_prob: ValueId,
    /// Final couplings of the primary→intermediate routing.
    pub couplings0: ValueId,
    /// Final couplings of the intermediate→sentiment routing.
    pub couplings1: ValueId,
    /// Unpadded token count n_i of the encoded sentence.
    pub n: usize,
}

/// Runs the whole network for one example and records it on `tape`.
///
/// With `use_proximity` off (the test-time no-aspect mode), l_t = 1 on the
/// valid span and 0 on padding — since padding rows are already zero, the
/// weighting is skipped entirely and ĥ aliases the encoder output.
pub fn forward<E: Element>(
    tape: &mut GradTape<E>,
    bound: &BoundParams,
    example: &Example,
    config: &ModelConfig,
    rng: &mut Rng,
    training: bool,
    use_proximity: bool,
) -> Result<ForwardTrace> {
    let hidden = encoder::encode_sequence(
        tape,
        bound,
        &example.token_ids,
        config,
        rng,
        training,
    )?;

    let weighted = if use_proximity {
        let l = proximity::location_weights(example.n(), example.aspect_first_index, config)?;
        proximity::apply_proximity(tape, hidden, &l, config)?
    } else {
        hidden
    };

    let primary = capsules::build_primary_capsules(tape, weighted, bound, config)?;
    let (intermediate, couplings0) =
        capsules::route(tape, primary, bound.route0, config.routing_iters)?;
    let (sentiment, couplings1) =
        capsules::route(tape, intermediate, bound.route1, config.routing_iters)?;
    let v_prob = tape.row_norms(sentiment)?;

    Ok(ForwardTrace {
        hidden,
        weighted,
        primary,
        intermediate,
        sentiment,
        v_prob,
        couplings0,
        couplings1,
        n: example.n(),
    })
}

/// Applies the reconstruction head twice: once with the one-hot `mask`
/// selecting a sentiment capsule, once with its complement, both through
/// the same affine map `[C·D_sent] → [D_x]`.
pub fn reconstruct<E: Element>(
    tape: &mut GradTape<E>,
    sentiment: ValueId,
    mask: &[f64],
    bound: &BoundParams,
) -> Result<(ValueId, ValueId)> {
    let ones = mask.iter().filter(|&&m| m == 1.0).count();
    if ones != 1 || mask.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::Contract(format!(
            "reconstruction mask must be one-hot, got {mask:?}"
        )));
    }
    let shape = tape.value(sentiment).shape().to_vec();
    if shape.len() != 2 || shape[0] != mask.len() {
        return Err(Error::ShapeMismatch {
            op: "reconstruct",
            lhs: shape,
            rhs: vec![mask.len()],
        });
    }
    let d = shape[1];
    let flat_len = mask.len() * d;

    let mut keep = Vec::with_capacity(flat_len);
    let mut complement = Vec::with_capacity(flat_len);
    for &mc in mask {
        keep.extend(std::iter::repeat_n(E::of(mc), d));
        complement.extend(std::iter::repeat_n(E::of(1.0 - mc), d));
    }

    let masked = tape.mul_const(sentiment, &keep)?;
    let flat1 = tape.reshape(masked, vec![flat_len])?;
    let v1 = tape.linear(flat1, bound.recon_w, bound.recon_b)?;

    let co_masked = tape.mul_const(sentiment, &complement)?;
    let flat2 = tape.reshape(co_masked, vec![flat_len])?;
    let v2 = tape.linear(flat2, bound.recon_w, bound.recon_b)?;

    Ok((v1, v2))
}
