//! Dataset mechanics: record ingestion, cleaning, chunking, instruction
//! templates and balanced sampling.

mod balance;
mod clean;
mod motion;
mod record;
mod templates;
mod window;

pub use balance::{
    apportion, balance_corpus, manifest_text, read_manifest, span_motion, write_manifest,
    BalanceConfig, BalanceReport, SampleContext, SampleSpec, SourceCount,
};
pub use clean::{
    clean_sequence, wrist_path_length, CleanOptions, CleanReport, DEFAULT_JUMP_THRESHOLD,
    DEFAULT_MAX_GAP,
};
pub use motion::{record_motion, record_reference, training_windows};
pub use record::{
    ingest, ingest_line, read_records, write_records, Annotations, Frame, SequenceRecord,
    TARGET_FPS,
};
pub use templates::{
    choose_template, instantiate, instantiate_templates, InstructionSample, Provenance, SkipReason,
    SpanTokens, Target, TaskKind, TemplateOptions, TemplateReport, TemplateSet, DURATION_SLOT,
    INSTRUCTION_SLOT, MOTION_SLOT,
};
pub use window::{
    chunk_and_window, integer_fps, spans, Chunk, Span, ANNOTATION_FPS, MAX_CHUNK_SECONDS,
    WINDOW_STRIDES_PER_SECOND,
};
