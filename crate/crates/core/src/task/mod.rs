//! Joint vocabulary, task templates, `[conditions, target]` serialization,
//! patching for the multi-scale model and task re-sampling.

mod patches;
mod resample;
mod sequence;
mod template;
mod vocab;

pub use patches::{to_patches, Patch, PatchSequence, DEFAULT_MAX_PATCHES};
pub use resample::{resample_weights, ResamplingConfig};
pub use sequence::{parse_task, serialize_example, serialize_prefix, serialize_task, Payload, Span, TaskExample, TaskSequence};
pub use template::{DurationMode, Slot, TaskTemplate, TemplateRegistry};
pub use vocab::{
    build_vocab, default_vocab_spec, ModalityRange, RangeSpec, SpanKind, SpecialTokens, Task, TokenRef, Vocabulary, AUDIO, MIDI,
    PHONEME, SEMANTIC, SPECIAL, SPECIAL_BUDGET,
};
