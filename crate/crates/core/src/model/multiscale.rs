//! Global transformer over patches, local transformer within each patch.
//!
//! Patch `t` is predicted from the global output at `t − 1` (a learned
//! initial context for `t = 0`). Inside the patch, local position `k` sees
//! the previous target `z_t^{k−1}` (a learned start embedding at `k = 0`),
//! the projected context and a within-patch position embedding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LossMask, ModelConfig};
use crate::error::{bail, Error, Result};
use crate::nn::{
    load_into, log_softmax_into, optimizer_step, read_checkpoint, write_checkpoint, Gradients, Graph, Linear, OpCounters,
    OptimizerState, ParamId, ParamStore, Tensor, Transformer, Var, INIT_STD,
};
use crate::task::{Patch, PatchSequence};

#[derive(Debug, Clone)]
struct Layout {
    emb_global: ParamId,
    emb_local: ParamId,
    pos_global: ParamId,
    pos_local: ParamId,
    start_local: ParamId,
    init_context: ParamId,
    context_proj: Linear,
    continuous_proj: Linear,
    global: Transformer,
    local: Transformer,
    head: Linear,
}

#[derive(Debug, Clone)]
pub struct MultiScaleModel {
    config: ModelConfig,
    store: ParamStore,
    p: Layout,
}

/// Intermediate values of one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Activations {
    /// `K × D_g` patch embeddings including positions.
    pub patch_embeds: Tensor,
    /// `K × D_g` global outputs.
    pub global_out: Tensor,
    /// `K × D_g` context used for each patch (shifted global outputs).
    pub contexts: Tensor,
    /// `K·n_q × D_l` local inputs and outputs.
    pub local_in: Tensor,
    pub local_out: Tensor,
    /// `K·n_q × V` logits; row `t·n_q + k` scores `z_t^k`.
    pub logits: Tensor,
    pub counters: OpCounters,
}

struct LocalVars {
    input: Var,
    output: Var,
    logits: Var,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    config: ModelConfig,
}

impl MultiScaleModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let randn = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::randn(shape, INIT_STD, rng);
        let p = Layout {
            emb_global: s.add("emb_global", randn(&[c.vocab_size, c.global_width], &mut rng))?,
            emb_local: s.add("emb_local", randn(&[c.vocab_size, c.local_width], &mut rng))?,
            pos_global: s.add("pos_global", randn(&[c.max_patches, c.global_width], &mut rng))?,
            pos_local: s.add("pos_local", randn(&[c.n_q, c.local_width], &mut rng))?,
            start_local: s.add("start_local", randn(&[1, c.local_width], &mut rng))?,
            init_context: s.add("init_context", randn(&[1, c.global_width], &mut rng))?,
            context_proj: Linear::new(&mut s, "context_proj", c.global_width, c.local_width, false, INIT_STD, &mut rng)?,
            continuous_proj: Linear::new(&mut s, "continuous_proj", c.continuous_dim, c.global_width, true, INIT_STD, &mut rng)?,
            global: Transformer::new(&mut s, "global", c.global_layers, c.global_width, c.global_heads, c.global_ff, &mut rng)?,
            local: Transformer::new(&mut s, "local", c.local_layers, c.local_width, c.local_heads, c.local_ff, &mut rng)?,
            head: Linear::new(&mut s, "head", c.local_width, c.vocab_size, true, INIT_STD, &mut rng)?,
        };
        Ok(Self { config, store: s, p })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    fn check_patches(&self, seq: &PatchSequence) -> Result<()> {
        let c = &self.config;
        if seq.n_q != c.n_q {
            bail!(Shape, "patch width {} but model n_q = {}", seq.n_q, c.n_q);
        }
        if seq.is_empty() {
            bail!(Input, "empty patch sequence");
        }
        if seq.len() > c.max_patches {
            return Err(Error::ContextOverflow { len: seq.len(), max: c.max_patches });
        }
        for (t, p) in seq.patches.iter().enumerate() {
            match p {
                Patch::Audio(ids) if ids.len() != c.n_q => bail!(Shape, "patch {t} holds {} codes, n_q = {}", ids.len(), c.n_q),
                Patch::Continuous(v) if v.len() != c.continuous_dim => {
                    bail!(Shape, "continuous patch {t} has dimension {}, model {}", v.len(), c.continuous_dim)
                }
                _ => {}
            }
        }
        self.check_ids(&seq.targets())
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            bail!(OutOfRange, "token {id} outside model vocabulary of {}", self.config.vocab_size);
        }
        Ok(())
    }

    /// `K × D_g`: summed code embeddings for audio frames, the single
    /// embedding for repeated tokens, a projection for continuous vectors,
    /// plus patch positions.
    pub fn patch_embed(&self, g: &mut Graph, seq: &PatchSequence) -> Result<Var> {
        self.check_patches(seq)?;
        let k = seq.len();
        let mut bags = Vec::with_capacity(k);
        let mut cont_rows = Vec::new();
        let mut cont_data = Vec::new();
        for (t, p) in seq.patches.iter().enumerate() {
            match p {
                Patch::Audio(ids) => bags.push(ids.iter().map(|&i| i as usize).collect()),
                Patch::Repeated(id) => bags.push(vec![*id as usize]),
                Patch::Continuous(v) => {
                    bags.push(vec![]);
                    cont_rows.push(t);
                    cont_data.extend_from_slice(v);
                }
            }
        }
        let table = g.param(self.p.emb_global);
        let mut h = g.gather(table, bags)?;
        if !cont_rows.is_empty() {
            let x = g.input(Tensor::matrix(cont_rows.len(), self.config.continuous_dim, cont_data)?);
            g.value(x).check_finite("continuous patch")?;
            let proj = self.p.continuous_proj.forward(g, x)?;
            let placed = g.scatter_rows(proj, cont_rows, k)?;
            h = g.add(h, placed)?;
        }
        let pos_table = g.param(self.p.pos_global);
        let pos = g.gather_rows(pos_table, &(0..k).collect::<Vec<_>>())?;
        g.add(h, pos)
    }

    /// Causal transformer over `K` patch embeddings.
    pub fn global_forward(&self, g: &mut Graph, embeds: Var) -> Result<Var> {
        let k = g.value(embeds).rows();
        if k > self.config.max_patches {
            return Err(Error::ContextOverflow { len: k, max: self.config.max_patches });
        }
        if k == 0 {
            bail!(Input, "no patches");
        }
        self.p.global.forward(g, embeds, k)
    }

    /// Context for each patch: the learned initial context, then global outputs `0..K−1`.
    pub fn contexts(&self, g: &mut Graph, global_out: Var) -> Result<Var> {
        let k = g.value(global_out).rows();
        let init = g.param(self.p.init_context);
        if k <= 1 {
            return Ok(init);
        }
        let prev = g.gather_rows(global_out, &(0..k - 1).collect::<Vec<_>>())?;
        g.concat_rows(init, prev)
    }

    /// Teacher-forced local pass: `tokens` holds the `K·n_q` patch targets,
    /// of which only `z_t^{k−1}` feeds position `k`.
    fn local_vars(&self, g: &mut Graph, contexts: Var, tokens: &[u32]) -> Result<LocalVars> {
        let n_q = self.config.n_q;
        let k = g.value(contexts).rows();
        if g.value(contexts).cols() != self.config.global_width {
            bail!(Shape, "context width {}, expected {}", g.value(contexts).cols(), self.config.global_width);
        }
        if tokens.len() != k * n_q {
            bail!(Shape, "{} local tokens for {k} patches of width {n_q}", tokens.len());
        }
        self.check_ids(tokens)?;
        let mut prev_bags = Vec::with_capacity(tokens.len());
        let mut start_bags = Vec::with_capacity(tokens.len());
        let mut ctx_rows = Vec::with_capacity(tokens.len());
        let mut pos_rows = Vec::with_capacity(tokens.len());
        for t in 0..k {
            for j in 0..n_q {
                if j == 0 {
                    prev_bags.push(vec![]);
                    start_bags.push(vec![0]);
                } else {
                    prev_bags.push(vec![tokens[t * n_q + j - 1] as usize]);
                    start_bags.push(vec![]);
                }
                ctx_rows.push(t);
                pos_rows.push(j);
            }
        }
        let emb = g.param(self.p.emb_local);
        let prev = g.gather(emb, prev_bags)?;
        let start = g.param(self.p.start_local);
        let start = g.gather(start, start_bags)?;
        let ctx = self.p.context_proj.forward(g, contexts)?;
        let ctx = g.gather_rows(ctx, &ctx_rows)?;
        let pos_table = g.param(self.p.pos_local);
        let pos = g.gather_rows(pos_table, &pos_rows)?;
        let x = g.add(prev, start)?;
        let x = g.add(x, ctx)?;
        let input = g.add(x, pos)?;
        let output = self.p.local.forward(g, input, n_q)?;
        let logits = self.p.head.forward(g, output)?;
        Ok(LocalVars { input, output, logits })
    }

    /// `K·n_q × V` logits for the given contexts and patch tokens.
    pub fn local_forward(&self, g: &mut Graph, contexts: Var, tokens: &[u32]) -> Result<Var> {
        Ok(self.local_vars(g, contexts, tokens)?.logits)
    }

    /// Full teacher-forced pass; returns the logits variable.
    pub fn logits_graph(&self, g: &mut Graph, seq: &PatchSequence) -> Result<Var> {
        let h = self.patch_embed(g, seq)?;
        let out = self.global_forward(g, h)?;
        let ctx = self.contexts(g, out)?;
        self.local_forward(g, ctx, &seq.targets())
    }

    pub fn forward_activations(&self, seq: &PatchSequence) -> Result<Activations> {
        let mut g = Graph::new(&self.store);
        let h = self.patch_embed(&mut g, seq)?;
        let out = self.global_forward(&mut g, h)?;
        let ctx = self.contexts(&mut g, out)?;
        let l = self.local_vars(&mut g, ctx, &seq.targets())?;
        Ok(Activations {
            patch_embeds: g.value(h).clone(),
            global_out: g.value(out).clone(),
            contexts: g.value(ctx).clone(),
            local_in: g.value(l.input).clone(),
            local_out: g.value(l.output).clone(),
            logits: g.value(l.logits).clone(),
            counters: g.counters(),
        })
    }

    pub fn logits(&self, seq: &PatchSequence) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let v = self.logits_graph(&mut g, seq)?;
        Ok(g.value(v).clone())
    }

    fn loss_parts(&self, g: &mut Graph, seq: &PatchSequence, mode: LossMask) -> Result<(Var, Var, usize)> {
        let logits = self.logits_graph(g, seq)?;
        let targets: Vec<usize> = seq.targets().into_iter().map(|t| t as usize).collect();
        let mask = loss_mask(seq, mode);
        let n = mask.iter().filter(|&&m| m).count();
        Ok((g.cross_entropy(logits, &targets, &mask)?, logits, n))
    }

    /// Mean cross-entropy over the positions selected by `mode`, and the masked position count.
    pub fn loss_graph(&self, g: &mut Graph, seq: &PatchSequence, mode: LossMask) -> Result<(Var, usize)> {
        let (loss, _, n) = self.loss_parts(g, seq, mode)?;
        Ok((loss, n))
    }

    /// Loss value and logits of one sequence.
    pub fn forward_loss(&self, seq: &PatchSequence, mode: LossMask) -> Result<(f64, Tensor)> {
        let mut g = Graph::new(&self.store);
        let (loss, logits, _) = self.loss_parts(&mut g, seq, mode)?;
        Ok((g.value(loss).item(), g.value(logits).clone()))
    }

    /// Global output of the last patch: the context for the patch that follows `seq`.
    pub fn next_context(&self, seq: &PatchSequence) -> Result<Tensor> {
        if seq.len() >= self.config.max_patches {
            return Err(Error::ContextOverflow { len: seq.len() + 1, max: self.config.max_patches });
        }
        let mut g = Graph::new(&self.store);
        let h = self.patch_embed(&mut g, seq)?;
        let out = self.global_forward(&mut g, h)?;
        let t = g.value(out);
        Tensor::matrix(1, t.cols(), t.row(t.rows() - 1).to_vec())
    }

    /// Logits for within-patch position `prefix.len()` given the patch context.
    pub fn local_step(&self, context: &Tensor, prefix: &[u32]) -> Result<Vec<f64>> {
        let n_q = self.config.n_q;
        if prefix.len() >= n_q {
            bail!(Shape, "patch prefix of {} tokens leaves nothing to predict (n_q = {n_q})", prefix.len());
        }
        let mut tokens = prefix.to_vec();
        tokens.resize(n_q, 0);
        let mut g = Graph::new(&self.store);
        let ctx = g.input(context.clone());
        let logits = self.local_forward(&mut g, ctx, &tokens)?;
        Ok(g.value(logits).row(prefix.len()).to_vec())
    }

    fn sidecar_path(weights: &Path) -> PathBuf {
        weights.with_extension("json")
    }

    /// Writes `UAW1` weights to `weights` and the config to a `.json` sidecar.
    pub fn save(&self, weights: &Path) -> Result<()> {
        write_checkpoint(&self.store, BufWriter::new(File::create(weights)?))?;
        let side = Sidecar { config: self.config.clone() };
        std::fs::write(Self::sidecar_path(weights), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(weights: &Path) -> Result<Self> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(weights))?)?;
        let mut model = Self::new(side.config, 0)?;
        let loaded = read_checkpoint(BufReader::new(File::open(weights)?))?;
        load_into(&mut model.store, &loaded)?;
        Ok(model)
    }
}

/// Per-position selection for the loss, `K·n_q` long.
pub fn loss_mask(seq: &PatchSequence, mode: LossMask) -> Vec<bool> {
    let n_q = seq.n_q;
    (0..seq.len())
        .flat_map(|t| {
            let on = match mode {
                LossMask::All => t >= 1,
                LossMask::TargetOnly => seq.target.as_ref().is_some_and(|r| r.contains(&t)),
            };
            std::iter::repeat(on).take(n_q)
        })
        .collect()
}

/// Negative log-likelihood of each target under row-wise softmax of `logits`.
pub fn position_nll(logits: &Tensor, targets: &[u32]) -> Result<Vec<f64>> {
    if logits.rows() != targets.len() {
        bail!(Shape, "{} logit rows for {} targets", logits.rows(), targets.len());
    }
    let mut p = vec![0.0; logits.cols()];
    Ok(targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = logits.row(i);
            log_softmax_into(row, &mut p) - row[t as usize]
        })
        .collect())
}

/// One optimizer step on the position-weighted mean loss of `batch`.
pub fn train_step(
    model: &mut MultiScaleModel,
    state: &mut OptimizerState,
    batch: &[PatchSequence],
    mode: LossMask,
    patch_budget: usize,
) -> Result<f64> {
    if batch.is_empty() {
        bail!(Input, "empty batch");
    }
    let total: usize = batch.iter().map(PatchSequence::len).sum();
    if total > patch_budget {
        bail!(Input, "batch of {total} patches exceeds budget {patch_budget}");
    }
    let mut parts = Vec::with_capacity(batch.len());
    for seq in batch {
        let mut g = Graph::new(&model.store);
        let (loss, n) = model.loss_graph(&mut g, seq, mode)?;
        let grads = g.backward(loss)?;
        parts.push((g.value(loss).item(), n, grads));
    }
    let positions: usize = parts.iter().map(|p| p.1).sum();
    let mut grads = Gradients::empty(model.store.len());
    let mut loss = 0.0;
    for (l, n, mut gr) in parts {
        let w = n as f64 / positions as f64;
        loss += l * w;
        gr.scale(w);
        grads.merge(gr);
    }
    optimizer_step(&mut model.store, &grads, state)?;
    Ok(loss)
}
