use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.w"), Tensor::randn(&[input, output], std, rng))?;
        let bias = if bias { Some(store.add(format!("{name}.b"), Tensor::zeros(&[output]))?) } else { None };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.g"), Tensor::full(&[width], 1.0))?,
            bias: store.add(format!("{name}.b"), Tensor::zeros(&[width]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// Projections of one multi-head self-attention sublayer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub width: usize,
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        out_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            bail!(Config, "width {width} not divisible by {heads} heads");
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), width, width, false, INIT_STD, rng)?,
            key: Linear::new(store, &format!("{name}.k"), width, width, false, INIT_STD, rng)?,
            value: Linear::new(store, &format!("{name}.v"), width, width, false, INIT_STD, rng)?,
            output: Linear::new(store, &format!("{name}.o"), width, width, true, out_std, rng)?,
            heads,
            width,
        })
    }
}

/// Causal multi-head self-attention: `out = Wo · attn(x Wq, x Wk, x Wv) + bo`.
///
/// `segment` splits the rows into independent causal windows; pass the
/// sequence length for a single causal sequence.
pub fn causal_self_attention(g: &mut Graph, x: Var, params: &AttentionParams, segment: usize) -> Result<Var> {
    let cols = g.value(x).cols();
    if cols != params.width {
        bail!(Shape, "attention input width {cols}, expected {}", params.width);
    }
    g.value(x).check_finite("attention input")?;
    let q = params.query.forward(g, x)?;
    let k = params.key.forward(g, x)?;
    let v = params.value.forward(g, x)?;
    let a = g.causal_attention(q, k, v, params.heads, segment)?;
    params.output.forward(g, a)
}

/// Pre-norm transformer block.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln_attn: LayerNorm,
    pub attn: AttentionParams,
    pub ln_ff: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        width: usize,
        heads: usize,
        ff_width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let out_std = INIT_STD / (2.0 * depth.max(1) as f64).sqrt();
        Ok(Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln1"), width)?,
            attn: AttentionParams::new(store, &format!("{name}.attn"), width, heads, out_std, rng)?,
            ln_ff: LayerNorm::new(store, &format!("{name}.ln2"), width)?,
            ff_in: Linear::new(store, &format!("{name}.ff1"), width, ff_width, true, INIT_STD, rng)?,
            ff_out: Linear::new(store, &format!("{name}.ff2"), ff_width, width, true, out_std, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, segment: usize) -> Result<Var> {
        let h = self.ln_attn.forward(g, x)?;
        let a = causal_self_attention(g, h, &self.attn, segment)?;
        let x = g.add(x, a)?;
        let h = self.ln_ff.forward(g, x)?;
        let h = self.ff_in.forward(g, h)?;
        let h = g.gelu(h);
        let h = self.ff_out.forward(g, h)?;
        g.add(x, h)
    }
}

/// Stack of pre-norm blocks followed by a final layer norm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub width: usize,
}

impl Transformer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        layers: usize,
        width: usize,
        heads: usize,
        ff_width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let blocks = (0..layers)
            .map(|i| Block::new(store, &format!("{name}.blocks.{i}"), width, heads, ff_width, layers, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks, ln_final: LayerNorm::new(store, &format!("{name}.ln_f"), width)?, width })
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var, segment: usize) -> Result<Var> {
        for block in &self.blocks {
            x = block.forward(g, x, segment)?;
        }
        self.ln_final.forward(g, x)
    }
}
