use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Ids reserved at the bottom of every vocabulary.
pub const SPECIAL_BUDGET: usize = 128;

/// Name of the range holding audio codes (one sub-range per RVQ level).
pub const AUDIO: &str = "audio";
pub const SEMANTIC: &str = "semantic";
pub const PHONEME: &str = "phoneme";
pub const MIDI: &str = "midi";
pub const SPECIAL: &str = "special";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Tts,
    Vc,
    Se,
    Tse,
    Svs,
    Sound,
    Music,
    AEdit,
    Sd,
    ITts,
    SEdit,
}

impl Task {
    pub const ALL: [Task; 11] = [
        Task::Tts,
        Task::Vc,
        Task::Se,
        Task::Tse,
        Task::Svs,
        Task::Sound,
        Task::Music,
        Task::AEdit,
        Task::Sd,
        Task::ITts,
        Task::SEdit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Tts => "tts",
            Task::Vc => "vc",
            Task::Se => "se",
            Task::Tse => "tse",
            Task::Svs => "svs",
            Task::Sound => "sound",
            Task::Music => "music",
            Task::AEdit => "a_edit",
            Task::Sd => "sd",
            Task::ITts => "i_tts",
            Task::SEdit => "s_edit",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }

    pub fn index(self) -> usize {
        Task::ALL.iter().position(|&t| t == self).unwrap()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Kinds of bracketed sub-sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanKind {
    Phone,
    Midi,
    Semantic,
    Text,
    Prompt,
    InputAudio,
    Audio,
}

impl SpanKind {
    pub const ALL: [SpanKind; 7] = [
        SpanKind::Phone,
        SpanKind::Midi,
        SpanKind::Semantic,
        SpanKind::Text,
        SpanKind::Prompt,
        SpanKind::InputAudio,
        SpanKind::Audio,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SpanKind::Phone => "phone",
            SpanKind::Midi => "midi",
            SpanKind::Semantic => "semantic",
            SpanKind::Text => "text",
            SpanKind::Prompt => "prompt",
            SpanKind::InputAudio => "input_audio",
            SpanKind::Audio => "audio",
        }
    }

    /// Vocabulary range of the span content; `None` for continuous spans.
    pub fn range(self) -> Option<&'static str> {
        match self {
            SpanKind::Phone => Some(PHONEME),
            SpanKind::Midi => Some(MIDI),
            SpanKind::Semantic => Some(SEMANTIC),
            SpanKind::Text => None,
            SpanKind::Prompt | SpanKind::InputAudio | SpanKind::Audio => Some(AUDIO),
        }
    }

    pub fn is_audio(self) -> bool {
        self.range() == Some(AUDIO)
    }
}

/// Fixed special-token layout inside the first 128 ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecialTokens {
    pub start: u32,
    pub end: u32,
    pub continuous: u32,
    pub empty: u32,
    task_base: u32,
    marker_base: u32,
}

impl SpecialTokens {
    pub fn standard() -> Self {
        let task_base = 2;
        let marker_base = task_base + Task::ALL.len() as u32;
        let continuous = marker_base + 2 * SpanKind::ALL.len() as u32;
        Self { start: 0, end: 1, continuous, empty: continuous + 1, task_base, marker_base }
    }

    /// Number of ids actually assigned; the rest of the budget is reserved.
    pub fn used(&self) -> usize {
        self.empty as usize + 1
    }

    pub fn task(&self, t: Task) -> u32 {
        self.task_base + t.index() as u32
    }

    pub fn span_start(&self, k: SpanKind) -> u32 {
        self.marker_base + 2 * SpanKind::ALL.iter().position(|&x| x == k).unwrap() as u32
    }

    pub fn span_end(&self, k: SpanKind) -> u32 {
        self.span_start(k) + 1
    }

    pub fn task_of(&self, id: u32) -> Option<Task> {
        id.checked_sub(self.task_base).and_then(|i| Task::ALL.get(i as usize).copied())
    }

    /// `(kind, is_start)` when `id` is a span marker.
    pub fn marker_of(&self, id: u32) -> Option<(SpanKind, bool)> {
        let i = id.checked_sub(self.marker_base)? as usize;
        SpanKind::ALL.get(i / 2).map(|&k| (k, i % 2 == 0))
    }

    pub fn name(&self, id: u32) -> String {
        if id == self.start {
            "<start>".into()
        } else if id == self.end {
            "<end>".into()
        } else if id == self.continuous {
            "<continuous_token>".into()
        } else if id == self.empty {
            "<empty>".into()
        } else if let Some(t) = self.task_of(id) {
            format!("<{}_task>", t.name())
        } else if let Some((k, start)) = self.marker_of(id) {
            format!("<{}_{}>", k.name(), if start { "start" } else { "end" })
        } else {
            format!("<reserved_{id}>")
        }
    }
}

/// One entry of a vocabulary layout: `levels` consecutive sub-ranges of `size` ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub name: String,
    pub size: usize,
    #[serde(default = "one")]
    pub levels: usize,
}

fn one() -> usize {
    1
}

impl RangeSpec {
    pub fn new(name: &str, size: usize, levels: usize) -> Self {
        Self { name: name.to_string(), size, levels }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityRange {
    pub name: String,
    pub offset: u32,
    pub size: usize,
    pub levels: usize,
}

impl ModalityRange {
    pub fn total(&self) -> usize {
        self.size * self.levels
    }
}

/// Where a global id lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenRef<'a> {
    pub range: &'a str,
    pub level: usize,
    pub local: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ranges: Vec<ModalityRange>,
    by_name: HashMap<String, usize>,
    owner: Vec<u16>,
    specials: SpecialTokens,
}

/// The default layout: 128 special + 3·1024 audio + 500 semantic + 384 phoneme + 128 MIDI = 4212.
pub fn default_vocab_spec(levels: usize, codebook_size: usize) -> Vec<RangeSpec> {
    vec![
        RangeSpec::new(SPECIAL, SPECIAL_BUDGET, 1),
        RangeSpec::new(AUDIO, codebook_size, levels),
        RangeSpec::new(SEMANTIC, 500, 1),
        RangeSpec::new(PHONEME, 384, 1),
        RangeSpec::new(MIDI, 128, 1),
    ]
}

pub fn build_vocab(spec: &[RangeSpec]) -> Result<Vocabulary> {
    let Some(first) = spec.first() else {
        bail!(Config, "vocabulary layout is empty");
    };
    if first.name != SPECIAL || first.levels != 1 || first.size != SPECIAL_BUDGET {
        bail!(Config, "first range must be `{SPECIAL}` with {SPECIAL_BUDGET} ids, got {first:?}");
    }
    let mut ranges = Vec::with_capacity(spec.len());
    let mut by_name = HashMap::new();
    let mut owner = Vec::new();
    let mut offset = 0usize;
    for (i, r) in spec.iter().enumerate() {
        if r.size == 0 || r.levels == 0 {
            bail!(Config, "range `{}` has zero size", r.name);
        }
        if by_name.insert(r.name.clone(), i).is_some() {
            bail!(Config, "range name `{}` appears twice", r.name);
        }
        let total = r.size * r.levels;
        ranges.push(ModalityRange { name: r.name.clone(), offset: offset as u32, size: r.size, levels: r.levels });
        owner.extend(std::iter::repeat(i as u16).take(total));
        offset += total;
    }
    if offset > u32::MAX as usize {
        bail!(Config, "vocabulary of {offset} ids overflows u32");
    }
    Ok(Vocabulary { ranges, by_name, owner, specials: SpecialTokens::standard() })
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.owner.len()
    }

    pub fn specials(&self) -> &SpecialTokens {
        &self.specials
    }

    pub fn ranges(&self) -> &[ModalityRange] {
        &self.ranges
    }

    pub fn range(&self, name: &str) -> Result<&ModalityRange> {
        match self.by_name.get(name) {
            Some(&i) => Ok(&self.ranges[i]),
            None => bail!(Config, "vocabulary has no `{name}` range"),
        }
    }

    pub fn has_range(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    /// Global id of `local` at `level` of range `name`.
    pub fn global(&self, name: &str, level: usize, local: u32) -> Result<u32> {
        let r = self.range(name)?;
        if level >= r.levels || local as usize >= r.size {
            bail!(OutOfRange, "`{name}` level {level} id {local} outside {}x{}", r.levels, r.size);
        }
        Ok(r.offset + (level * r.size) as u32 + local)
    }

    pub fn lookup(&self, id: u32) -> Result<TokenRef<'_>> {
        let Some(&i) = self.owner.get(id as usize) else {
            bail!(OutOfRange, "token {id} outside vocabulary of {}", self.size());
        };
        let r = &self.ranges[i as usize];
        let rel = id - r.offset;
        Ok(TokenRef { range: &r.name, level: rel as usize / r.size, local: rel % r.size as u32 })
    }

    /// Audio levels and codes per level.
    pub fn audio_shape(&self) -> Result<(usize, usize)> {
        let r = self.range(AUDIO)?;
        Ok((r.levels, r.size))
    }

    /// Half-open global id range of one audio level.
    pub fn audio_level_ids(&self, level: usize) -> Result<std::ops::Range<u32>> {
        let r = self.range(AUDIO)?;
        if level >= r.levels {
            bail!(OutOfRange, "audio level {level} of {}", r.levels);
        }
        let start = r.offset + (level * r.size) as u32;
        Ok(start..start + r.size as u32)
    }

    pub fn token_name(&self, id: u32) -> String {
        match self.lookup(id) {
            Ok(t) if t.range == SPECIAL => self.specials.name(id),
            Ok(t) if self.range(t.range).map(|r| r.levels > 1).unwrap_or(false) => {
                format!("{}[{}]:{}", t.range, t.level + 1, t.local)
            }
            Ok(t) => format!("{}:{}", t.range, t.local),
            Err(_) => format!("<invalid_{id}>"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_are_cumulative() {
        let v = build_vocab(&[RangeSpec::new(SPECIAL, 128, 1), RangeSpec::new(AUDIO, 16, 2)]).unwrap();
        assert_eq!(v.size(), 160);
        assert_eq!(v.global(AUDIO, 1, 5).unwrap(), 149);
        assert_eq!(v.lookup(149).unwrap(), TokenRef { range: AUDIO, level: 1, local: 5 });
        assert!(v.global(AUDIO, 2, 0).is_err());
        assert!(v.lookup(160).is_err());
    }

    #[test]
    fn joint_vocabulary_totals() {
        let paper_split = [
            RangeSpec::new(SPECIAL, 128, 1),
            RangeSpec::new(AUDIO, 1024, 3),
            RangeSpec::new(SEMANTIC, 500, 1),
            RangeSpec::new(PHONEME, 512, 1),
        ];
        assert_eq!(build_vocab(&paper_split).unwrap().size(), 4212);
        assert_eq!(build_vocab(&default_vocab_spec(3, 1024)).unwrap().size(), 4212);
    }

    #[test]
    fn lookup_round_trips_every_id() {
        let v = build_vocab(&default_vocab_spec(3, 1024)).unwrap();
        for id in 0..v.size() as u32 {
            let t = v.lookup(id).unwrap();
            assert_eq!(v.global(t.range, t.level, t.local).unwrap(), id);
        }
    }

    #[test]
    fn invalid_layouts() {
        assert!(build_vocab(&[]).is_err());
        assert!(build_vocab(&[RangeSpec::new(AUDIO, 8, 1)]).is_err());
        assert!(build_vocab(&[RangeSpec::new(SPECIAL, 128, 1), RangeSpec::new(AUDIO, 0, 3)]).is_err());
        assert!(build_vocab(&[
            RangeSpec::new(SPECIAL, 128, 1),
            RangeSpec::new(MIDI, 8, 1),
            RangeSpec::new(MIDI, 8, 1)
        ])
        .is_err());
    }

    #[test]
    fn special_budget_fits() {
        let s = SpecialTokens::standard();
        // start, end, 11 tasks, 7 marker pairs, continuous, empty
        assert_eq!(s.used(), 2 + 11 + 14 + 2);
        assert!(s.used() <= SPECIAL_BUDGET);
        assert_eq!(s.name(s.task(Task::Sound)), "<sound_task>");
        assert_eq!(s.name(s.span_start(SpanKind::Text)), "<text_start>");
        assert_eq!(s.marker_of(s.span_end(SpanKind::Audio)), Some((SpanKind::Audio, false)));
        assert_eq!(s.task_of(s.start), None);
    }
}
