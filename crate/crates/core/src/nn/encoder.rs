//! Conformer-style encoder with boundary, function and projection heads.
//!
//! ```text
//! mel [F x n_mels] -> strided depthwise + pointwise stem [L' x d] -> + sinusoids
//!   -> backbone: (½FF, MHSA, conv, ½FF, LN) x n_backbone_blocks
//!   -> head:     (MHSA, FF) x n_head_blocks          = frame embeddings
//!   -> boundary logits [L' x 1], function logits [L' x C]
//! ```

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::params::{Init, ParamStore};
use super::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub n_mels: usize,
    pub d_model: usize,
    pub n_backbone_blocks: usize,
    pub n_head_blocks: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub conv_kernel: usize,
    pub stem_stride: usize,
    pub n_classes: usize,
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            n_mels: 128,
            d_model: 64,
            n_backbone_blocks: 4,
            n_head_blocks: 2,
            n_heads: 4,
            ff_mult: 2,
            conv_kernel: 7,
            stem_stride: 4,
            n_classes: 5,
            proj_dim: 16,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.stem_stride == 0 {
            return Err(Error::Config("stem_stride must be at least 1".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("conv_kernel must be odd".into()));
        }
        if self.n_classes == 0 || self.n_mels == 0 || self.proj_dim == 0 || self.ff_mult == 0 {
            return Err(Error::Config("n_classes, n_mels, proj_dim and ff_mult must be positive".into()));
        }
        Ok(())
    }

    /// Encoder output length for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.stem_stride)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Number of scalar parameters registered by [`init_params`].
    pub fn param_count(&self) -> usize {
        let d = self.d_model;
        let lin = |i: usize, o: usize| i * o + o;
        let ff = 2 * d + lin(d, self.ff_mult * d) + lin(self.ff_mult * d, d);
        let att = 2 * d + 4 * lin(d, d);
        let conv = 2 * d + lin(d, 2 * d) + self.conv_kernel * d + d + 2 * d + lin(d, d);
        let backbone = 2 * ff + att + conv + 2 * d;
        let head = att + ff;
        self.stem_stride * self.n_mels
            + lin(self.n_mels, d)
            + self.n_backbone_blocks * backbone
            + self.n_head_blocks * head
            + lin(d, 1)
            + lin(d, self.n_classes)
            + lin(d, self.proj_dim)
    }

    pub fn attention_blocks(&self) -> usize {
        self.n_backbone_blocks + self.n_head_blocks
    }
}

fn linear(store: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) {
    store.register(&format!("{name}.w"), fan_in, fan_out, Init::Glorot { fan_in, fan_out }, rng);
    store.register(&format!("{name}.b"), 1, fan_out, Init::Zeros, rng);
}

fn norm(store: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng, name: &str, width: usize) {
    store.register(&format!("{name}.g"), 1, width, Init::Ones, rng);
    store.register(&format!("{name}.b"), 1, width, Init::Zeros, rng);
}

fn attention_params(s: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng, p: &str, d: usize) {
    norm(s, rng, &format!("{p}.ln"), d);
    for m in ["q", "k", "v", "o"] {
        linear(s, rng, &format!("{p}.{m}"), d, d);
    }
}

fn ff_params(s: &mut ParamStore, rng: &mut rand_chacha::ChaCha8Rng, p: &str, d: usize, mult: usize) {
    norm(s, rng, &format!("{p}.ln"), d);
    linear(s, rng, &format!("{p}.up"), d, mult * d);
    linear(s, rng, &format!("{p}.down"), mult * d, d);
}

/// Registers every encoder parameter in a fixed order.
pub fn init_params(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.d_model;
    Ok(ParamStore::build(seed, |s, rng| {
        let k = cfg.stem_stride;
        s.register("stem.dw", k, cfg.n_mels, Init::Glorot { fan_in: k, fan_out: k }, rng);
        linear(s, rng, "stem.pw", cfg.n_mels, d);
        for b in 0..cfg.n_backbone_blocks {
            let p = format!("backbone{b}");
            ff_params(s, rng, &format!("{p}.ff1"), d, cfg.ff_mult);
            attention_params(s, rng, &format!("{p}.att"), d);
            norm(s, rng, &format!("{p}.conv.ln"), d);
            linear(s, rng, &format!("{p}.conv.pw1"), d, 2 * d);
            let kc = cfg.conv_kernel;
            s.register(&format!("{p}.conv.dw"), kc, d, Init::Glorot { fan_in: kc, fan_out: kc }, rng);
            s.register(&format!("{p}.conv.dwb"), 1, d, Init::Zeros, rng);
            norm(s, rng, &format!("{p}.conv.ln2"), d);
            linear(s, rng, &format!("{p}.conv.pw2"), d, d);
            ff_params(s, rng, &format!("{p}.ff2"), d, cfg.ff_mult);
            norm(s, rng, &format!("{p}.out_ln"), d);
        }
        for h in 0..cfg.n_head_blocks {
            let p = format!("head{h}");
            attention_params(s, rng, &format!("{p}.att"), d);
            ff_params(s, rng, &format!("{p}.ff"), d, cfg.ff_mult);
        }
        linear(s, rng, "out.boundary", d, 1);
        linear(s, rng, "out.function", d, cfg.n_classes);
        linear(s, rng, "out.proj", d, cfg.proj_dim);
    }))
}

/// Sinusoidal absolute positions, `[len x d]`.
pub fn sinusoidal_positions(len: usize, d: usize) -> Matrix {
    let mut m = Matrix::zeros(len, d);
    for pos in 0..len {
        for i in 0..d {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            m.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    m
}

/// Node handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[L' x 1]`
    pub boundary_logits: NodeId,
    /// `[L' x C]`
    pub function_logits: NodeId,
    /// `[L' x d_model]`
    pub embeddings: NodeId,
}

struct Ctx<'a> {
    store: &'a ParamStore,
    cfg: &'a EncoderConfig,
}

impl Ctx<'_> {
    fn linear(&self, tape: &mut Tape, x: NodeId, name: &str) -> NodeId {
        let w = tape.param(self.store, &format!("{name}.w"));
        let b = tape.param(self.store, &format!("{name}.b"));
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    fn norm(&self, tape: &mut Tape, x: NodeId, name: &str) -> NodeId {
        let g = tape.param(self.store, &format!("{name}.g"));
        let b = tape.param(self.store, &format!("{name}.b"));
        let n = tape.layer_norm(x);
        let n = tape.mul_row(n, g);
        tape.add_row(n, b)
    }

    fn feed_forward(&self, tape: &mut Tape, x: NodeId, p: &str) -> NodeId {
        let h = self.norm(tape, x, &format!("{p}.ln"));
        let h = self.linear(tape, h, &format!("{p}.up"));
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{p}.down"))
    }

    fn attention(&self, tape: &mut Tape, x: NodeId, p: &str) -> NodeId {
        let h = self.norm(tape, x, &format!("{p}.ln"));
        let q = self.linear(tape, h, &format!("{p}.q"));
        let k = self.linear(tape, h, &format!("{p}.k"));
        let v = self.linear(tape, h, &format!("{p}.v"));
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<NodeId> = (0..self.cfg.n_heads)
            .map(|i| {
                let qh = tape.slice_cols(q, i * dh, dh);
                let kh = tape.slice_cols(k, i * dh, dh);
                let vh = tape.slice_cols(v, i * dh, dh);
                let scores = tape.matmul_scaled(qh, kh, true, scale);
                let probs = tape.softmax_rows(scores);
                tape.matmul(probs, vh)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
        self.linear(tape, cat, &format!("{p}.o"))
    }

    fn conv_module(&self, tape: &mut Tape, x: NodeId, p: &str) -> NodeId {
        let d = self.cfg.d_model;
        let h = self.norm(tape, x, &format!("{p}.ln"));
        let h = self.linear(tape, h, &format!("{p}.pw1"));
        let a = tape.slice_cols(h, 0, d);
        let gate = tape.slice_cols(h, d, d);
        let gate = tape.sigmoid(gate);
        let h = tape.mul(a, gate);
        let w = tape.param(self.store, &format!("{p}.dw"));
        let b = tape.param(self.store, &format!("{p}.dwb"));
        let h = tape.depthwise_conv(h, w);
        let h = tape.add_row(h, b);
        let h = self.norm(tape, h, &format!("{p}.ln2"));
        let h = tape.gelu(h);
        self.linear(tape, h, &format!("{p}.pw2"))
    }

    fn backbone_block(&self, tape: &mut Tape, x: NodeId, p: &str) -> NodeId {
        let f = self.feed_forward(tape, x, &format!("{p}.ff1"));
        let f = tape.scale(f, 0.5);
        let x = tape.add(x, f);
        let a = self.attention(tape, x, &format!("{p}.att"));
        let x = tape.add(x, a);
        let c = self.conv_module(tape, x, &format!("{p}.conv"));
        let x = tape.add(x, c);
        let f = self.feed_forward(tape, x, &format!("{p}.ff2"));
        let f = tape.scale(f, 0.5);
        let x = tape.add(x, f);
        self.norm(tape, x, &format!("{p}.out_ln"))
    }

    fn head_block(&self, tape: &mut Tape, x: NodeId, p: &str) -> NodeId {
        let a = self.attention(tape, x, &format!("{p}.att"));
        let x = tape.add(x, a);
        let f = self.feed_forward(tape, x, &format!("{p}.ff"));
        tape.add(x, f)
    }
}

fn check_layout(store: &ParamStore, cfg: &EncoderConfig) -> Result<()> {
    let expected = cfg.param_count();
    let shaped = |name: &str, rows: usize, cols: usize| {
        store.contains(name) && {
            let (_, r, c) = store.slot(name);
            (r, c) == (rows, cols)
        }
    };
    if store.len() != expected
        || !shaped("stem.dw", cfg.stem_stride, cfg.n_mels)
        || !shaped("out.function.w", cfg.d_model, cfg.n_classes)
        || !shaped("out.proj.w", cfg.d_model, cfg.proj_dim)
    {
        return Err(Error::Config(format!(
            "parameter layout ({} values) does not match encoder config ({expected} values)",
            store.len()
        )));
    }
    Ok(())
}

/// Records the encoder on `tape` for standardised features `[frames x n_mels]`.
pub fn forward(store: &ParamStore, features: &Matrix, cfg: &EncoderConfig, tape: &mut Tape) -> Result<EncoderOutput> {
    cfg.validate()?;
    if features.cols != cfg.n_mels {
        return Err(Error::Config(format!(
            "features have {} bands, encoder expects {}",
            features.cols, cfg.n_mels
        )));
    }
    if features.rows < cfg.stem_stride {
        return Err(Error::InputTooShort(format!(
            "{} frames, stem stride is {}",
            features.rows, cfg.stem_stride
        )));
    }
    check_layout(store, cfg)?;
    let ctx = Ctx { store, cfg };
    let x = tape.input(features.clone());
    let dw = tape.param(store, "stem.dw");
    let h = tape.strided_conv(x, dw, cfg.stem_stride);
    let h = ctx.linear(tape, h, "stem.pw");
    let h = tape.gelu(h);
    let len = tape.value(h).rows;
    let pos = tape.input(sinusoidal_positions(len, cfg.d_model));
    let mut x = tape.add(h, pos);
    for b in 0..cfg.n_backbone_blocks {
        x = ctx.backbone_block(tape, x, &format!("backbone{b}"));
    }
    for h in 0..cfg.n_head_blocks {
        x = ctx.head_block(tape, x, &format!("head{h}"));
    }
    let boundary_logits = ctx.linear(tape, x, "out.boundary");
    let function_logits = ctx.linear(tape, x, "out.function");
    Ok(EncoderOutput {
        boundary_logits,
        function_logits,
        embeddings: x,
    })
}

/// Mean-pools each span of frame embeddings and projects it to `proj_dim`.
pub fn project_embeddings(
    store: &ParamStore,
    tape: &mut Tape,
    embeddings: NodeId,
    spans: &[Range<usize>],
) -> Result<Vec<NodeId>> {
    let len = tape.value(embeddings).rows;
    let w = tape.param(store, "out.proj.w");
    let b = tape.param(store, "out.proj.b");
    spans
        .iter()
        .map(|span| {
            if span.is_empty() || span.end > len {
                return Err(Error::Precondition(format!(
                    "span {span:?} is empty or outside [0, {len})"
                )));
            }
            let rows = tape.slice_rows(embeddings, span.start, span.len());
            let mean = tape.mean_rows(rows);
            let z = tape.matmul(mean, w);
            Ok(tape.add_row(z, b))
        })
        .collect()
}
