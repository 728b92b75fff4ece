//! Patch view of a task sequence: every audio frame is one patch of `n_q`
//! codes, every other discrete token is one patch repeated `n_q` times and
//! every continuous vector is one patch targeting `<continuous_token>`.

use std::ops::Range;

use super::sequence::TaskSequence;
use super::vocab::SpecialTokens;
use crate::error::{bail, Error, Result};

pub const DEFAULT_MAX_PATCHES: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub enum Patch {
    /// Global ids of one frame, level order.
    Audio(Vec<u32>),
    /// A single non-audio token filling the whole patch.
    Repeated(u32),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub n_q: usize,
    pub patches: Vec<Patch>,
    /// Patches of the target: its frames plus the closing `<audio_end>` when present.
    pub target: Option<Range<usize>>,
    pub continuous_id: u32,
}

impl PatchSequence {
    /// A bare target made of audio frames, given as frame-major global ids.
    pub fn from_audio_ids(n_q: usize, ids: &[u32]) -> Result<Self> {
        if n_q == 0 || ids.is_empty() || ids.len() % n_q != 0 {
            bail!(Shape, "{} audio ids do not form whole patches of width {n_q}", ids.len());
        }
        let patches: Vec<Patch> = ids.chunks(n_q).map(|c| Patch::Audio(c.to_vec())).collect();
        let k = patches.len();
        Ok(Self { n_q, patches, target: Some(0..k), continuous_id: SpecialTokens::standard().continuous })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// The `n_q` prediction targets of patch `t`.
    pub fn patch_targets(&self, t: usize) -> Vec<u32> {
        match &self.patches[t] {
            Patch::Audio(ids) => ids.clone(),
            Patch::Repeated(id) => vec![*id; self.n_q],
            Patch::Continuous(_) => vec![self.continuous_id; self.n_q],
        }
    }

    /// All targets, `K·n_q` long, patch-major.
    pub fn targets(&self) -> Vec<u32> {
        (0..self.len()).flat_map(|t| self.patch_targets(t)).collect()
    }

    /// Dimension of the continuous patches, if any.
    pub fn continuous_dim(&self) -> Option<usize> {
        self.patches.iter().find_map(|p| match p {
            Patch::Continuous(v) => Some(v.len()),
            _ => None,
        })
    }
}

pub fn to_patches(seq: &TaskSequence, n_q: usize, max_patches: usize) -> Result<PatchSequence> {
    if n_q == 0 {
        bail!(Config, "n_q must be positive");
    }
    let sp = SpecialTokens::standard();
    let mut patches = Vec::new();
    let mut target = None;
    let target_span = seq.target_span();
    let mut vectors = seq.continuous.iter();
    let mut spans = seq.spans.iter().filter(|s| s.kind.is_audio()).peekable();
    let mut pos = 0;
    while pos < seq.tokens.len() {
        if let Some(span) = spans.peek().copied() {
            if span.start < pos {
                bail!(Sequence, "overlapping spans at position {pos}");
            }
            if span.start == pos {
                spans.next();
                let content = &seq.tokens[span.start..span.end];
                if content.len() % n_q != 0 {
                    bail!(Sequence, "{} span of {} tokens is not divisible by n_q = {n_q}", span.kind.name(), content.len());
                }
                let first = patches.len();
                patches.extend(content.chunks(n_q).map(|c| Patch::Audio(c.to_vec())));
                if Some(*span) == target_span {
                    // the closing marker, when present, belongs to the target
                    let close = usize::from(seq.tokens.get(span.end) == Some(&sp.span_end(span.kind)));
                    target = Some(first..patches.len() + close);
                }
                pos = span.end;
                continue;
            }
        }
        let tok = seq.tokens[pos];
        if tok == sp.continuous {
            let v = vectors.next().ok_or_else(|| Error::Sequence(format!("placeholder at {pos} has no continuous vector")))?;
            patches.push(Patch::Continuous(v.clone()));
        } else {
            patches.push(Patch::Repeated(tok));
        }
        pos += 1;
    }
    if vectors.next().is_some() {
        bail!(Sequence, "more continuous vectors than placeholders");
    }
    if patches.len() > max_patches {
        return Err(Error::ContextOverflow { len: patches.len(), max: max_patches });
    }
    Ok(PatchSequence { n_q, patches, target, continuous_id: sp.continuous })
}
