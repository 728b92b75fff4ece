//! `[conditions, target]` serialization:
//!
//! ```text
//! <start> <task> <c1_start> ... <c1_end> ... <audio_start> target <audio_end> <end>
//! ```
//!
//! Continuous conditions (text embeddings) appear in-band as
//! `<continuous_token>` placeholders; the vectors travel alongside in
//! [`TaskSequence::continuous`] in placeholder order.

use super::template::{TaskTemplate, TemplateRegistry};
use super::vocab::{SpanKind, Task, Vocabulary, AUDIO};
use crate::codec::TokenGrid;
use crate::error::{bail, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Local ids inside the slot's vocabulary range.
    Discrete(Vec<u32>),
    /// One embedding vector per word.
    Continuous(Vec<Vec<f64>>),
    Audio(TokenGrid),
}

impl Payload {
    fn kind_name(&self) -> &'static str {
        match self {
            Payload::Discrete(_) => "discrete",
            Payload::Continuous(_) => "continuous",
            Payload::Audio(_) => "audio",
        }
    }
}

/// A task instance before serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample {
    pub task: Task,
    pub conditions: Vec<Payload>,
    pub target: TokenGrid,
}

/// Content of one bracketed span, `[start, end)` in token positions (markers excluded).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub kind: SpanKind,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub tokens: Vec<u32>,
    pub spans: Vec<Span>,
    pub continuous: Vec<Vec<f64>>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// One token name per line.
    pub fn dump(&self, vocab: &Vocabulary) -> String {
        let mut out = String::new();
        for &t in &self.tokens {
            out.push_str(&vocab.token_name(t));
            out.push('\n');
        }
        out
    }

    pub fn target_span(&self) -> Option<Span> {
        self.spans.iter().rev().find(|s| s.kind == SpanKind::Audio).copied()
    }
}

struct Writer<'v> {
    vocab: &'v Vocabulary,
    seq: TaskSequence,
}

impl<'v> Writer<'v> {
    fn push_span(&mut self, kind: SpanKind, payload: &Payload) -> Result<()> {
        let sp = self.vocab.specials();
        self.seq.tokens.push(sp.span_start(kind));
        let start = self.seq.tokens.len();
        match (kind, payload) {
            (SpanKind::Text, Payload::Continuous(vectors)) => {
                if let Some(dim) = vectors.first().map(Vec::len) {
                    if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
                        bail!(Input, "continuous span with inconsistent vector sizes");
                    }
                }
                for v in vectors {
                    if v.iter().any(|x| !x.is_finite()) {
                        bail!(NonFinite, "continuous payload");
                    }
                    self.seq.tokens.push(sp.continuous);
                    self.seq.continuous.push(v.clone());
                }
            }
            (k, Payload::Audio(grid)) if k.is_audio() => {
                let (levels, size) = self.vocab.audio_shape()?;
                if grid.levels() != levels {
                    bail!(Input, "{} grid has {} levels, vocabulary {levels}", k.name(), grid.levels());
                }
                grid.check_range(size)?;
                for t in 0..grid.frames() {
                    for (level, &c) in grid.frame(t).iter().enumerate() {
                        self.seq.tokens.push(self.vocab.global(AUDIO, level, c)?);
                    }
                }
            }
            (k, Payload::Discrete(ids)) if !k.is_audio() && k.range().is_some() => {
                let range = k.range().unwrap();
                for &id in ids {
                    self.seq.tokens.push(self.vocab.global(range, 0, id).map_err(|_| {
                        crate::error::Error::OutOfRange(format!("vocabulary overflow: {} id {id} outside `{range}`", k.name()))
                    })?);
                }
            }
            (k, p) => bail!(Input, "{} payload does not fit a {} slot", p.kind_name(), k.name()),
        }
        let end = self.seq.tokens.len();
        self.seq.spans.push(Span { kind, start, end });
        self.seq.tokens.push(sp.span_end(kind));
        Ok(())
    }
}

fn write_prefix<'v>(vocab: &'v Vocabulary, template: &TaskTemplate, conditions: &[Payload]) -> Result<Writer<'v>> {
    template.validate(vocab)?;
    if conditions.len() != template.conditions.len() {
        bail!(Input, "task {} takes {} conditions, got {}", template.task, template.conditions.len(), conditions.len());
    }
    let sp = vocab.specials();
    let mut w = Writer { vocab, seq: TaskSequence { tokens: vec![sp.start, sp.task(template.task)], spans: vec![], continuous: vec![] } };
    for (slot, payload) in template.conditions.iter().zip(conditions) {
        w.push_span(slot.span, payload)?;
    }
    Ok(w)
}

pub fn serialize_task(vocab: &Vocabulary, template: &TaskTemplate, conditions: &[Payload], target: &TokenGrid) -> Result<TaskSequence> {
    if target.is_empty() {
        bail!(Input, "target audio is empty");
    }
    let mut w = write_prefix(vocab, template, conditions)?;
    w.push_span(SpanKind::Audio, &Payload::Audio(target.clone()))?;
    w.seq.tokens.push(vocab.specials().end);
    Ok(w.seq)
}

pub fn serialize_example(vocab: &Vocabulary, registry: &TemplateRegistry, ex: &TaskExample) -> Result<TaskSequence> {
    serialize_task(vocab, registry.get(ex.task)?, &ex.conditions, &ex.target)
}

/// Conditions followed by the opening `<audio_start>` of the target.
pub fn serialize_prefix(vocab: &Vocabulary, template: &TaskTemplate, conditions: &[Payload]) -> Result<TaskSequence> {
    let mut w = write_prefix(vocab, template, conditions)?;
    w.seq.tokens.push(vocab.specials().span_start(SpanKind::Audio));
    Ok(w.seq)
}

struct Reader<'a> {
    vocab: &'a Vocabulary,
    tokens: &'a [u32],
    pos: usize,
}

impl Reader<'_> {
    fn expect(&mut self, id: u32) -> Result<()> {
        match self.tokens.get(self.pos) {
            None => bail!(Sequence, "unterminated sequence: expected {} at position {}", self.vocab.token_name(id), self.pos),
            Some(&t) if t == id => {
                self.pos += 1;
                Ok(())
            }
            Some(&t) => bail!(
                Sequence,
                "unbalanced markers: expected {} at position {}, found {}",
                self.vocab.token_name(id),
                self.pos,
                self.vocab.token_name(t)
            ),
        }
    }

    /// Content of a span up to (and consuming) its end marker.
    fn span(&mut self, kind: SpanKind) -> Result<&[u32]> {
        let sp = self.vocab.specials();
        self.expect(sp.span_start(kind))?;
        let start = self.pos;
        let end_marker = sp.span_end(kind);
        loop {
            match self.tokens.get(self.pos) {
                None => bail!(Sequence, "unterminated sequence: {} span opened at {} never closes", kind.name(), start - 1),
                Some(&t) if t == end_marker => break,
                Some(&t) if sp.marker_of(t).is_some() || t == sp.start || t == sp.end || sp.task_of(t).is_some() => {
                    bail!(Sequence, "unbalanced markers: {} inside {} span at position {}", self.vocab.token_name(t), kind.name(), self.pos)
                }
                Some(_) => self.pos += 1,
            }
        }
        let content = &self.tokens[start..self.pos];
        self.pos += 1;
        Ok(content)
    }
}

fn decode_audio(vocab: &Vocabulary, kind: SpanKind, content: &[u32]) -> Result<TokenGrid> {
    let (levels, _) = vocab.audio_shape()?;
    if content.len() % levels != 0 {
        bail!(Sequence, "{} span of {} tokens is not divisible by n_q = {levels}", kind.name(), content.len());
    }
    let mut codes = Vec::with_capacity(content.len());
    for (i, &t) in content.iter().enumerate() {
        let r = vocab.lookup(t)?;
        if r.range != AUDIO || r.level != i % levels {
            bail!(Sequence, "{} at offset {i} of {} span is not an audio level-{} code", vocab.token_name(t), kind.name(), i % levels + 1);
        }
        codes.push(r.local);
    }
    TokenGrid::new(levels, codes)
}

pub fn parse_task(vocab: &Vocabulary, registry: &TemplateRegistry, seq: &TaskSequence) -> Result<TaskExample> {
    let sp = vocab.specials();
    let mut r = Reader { vocab, tokens: &seq.tokens, pos: 0 };
    r.expect(sp.start)?;
    let Some(&task_tok) = seq.tokens.get(1) else {
        bail!(Sequence, "unterminated sequence: no task token");
    };
    let Some(task) = sp.task_of(task_tok) else {
        bail!(Sequence, "unknown task token {}", vocab.token_name(task_tok));
    };
    r.pos = 2;
    let template = registry.get(task)?;
    let mut next_vector = 0usize;
    let mut conditions = Vec::with_capacity(template.conditions.len());
    for slot in &template.conditions {
        let kind = slot.span;
        let content = r.span(kind)?;
        let payload = match kind {
            SpanKind::Text => {
                if let Some(&t) = content.iter().find(|&&t| t != sp.continuous) {
                    bail!(Sequence, "text span holds {} instead of placeholders", vocab.token_name(t));
                }
                let Some(vectors) = seq.continuous.get(next_vector..next_vector + content.len()) else {
                    bail!(Sequence, "text span needs {} vectors, only {} remain", content.len(), seq.continuous.len() - next_vector);
                };
                next_vector += content.len();
                Payload::Continuous(vectors.to_vec())
            }
            k if k.is_audio() => Payload::Audio(decode_audio(vocab, k, content)?),
            k => {
                let range = k.range().unwrap();
                let ids = content
                    .iter()
                    .map(|&t| match vocab.lookup(t) {
                        Ok(x) if x.range == range => Ok(x.local),
                        _ => bail!(Sequence, "{} inside {} span", vocab.token_name(t), k.name()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Payload::Discrete(ids)
            }
        };
        conditions.push(payload);
    }
    let content = r.span(SpanKind::Audio)?;
    let target = decode_audio(vocab, SpanKind::Audio, content)?;
    if target.is_empty() {
        bail!(Sequence, "target audio span is empty");
    }
    r.expect(sp.end)?;
    if r.pos != seq.tokens.len() {
        bail!(Sequence, "{} trailing tokens after <end>", seq.tokens.len() - r.pos);
    }
    if next_vector != seq.continuous.len() {
        bail!(Sequence, "{} continuous vectors left unused", seq.continuous.len() - next_vector);
    }
    Ok(TaskExample { task, conditions, target })
}
