//! Instruction templates and rule-based instantiation of training samples.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AugmentRecord;
use crate::codec::{format_tags, serialize_blocks, Vocabulary};
use crate::error::{Error, Result};
use crate::mano::Side;
use crate::rng::named_rng;
use crate::tokenizer::{HandTokens, MotionTokens};

use super::window::Span;

pub const INSTRUCTION_SLOT: &str = "{instruction}";
pub const DURATION_SLOT: &str = "{duration}";
pub const MOTION_SLOT: &str = "{motion}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Instruction to motion.
    Generation,
    /// Motion to text.
    Translation,
    /// Prior motion and instruction to the continuation.
    Prediction,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [
        TaskKind::Generation,
        TaskKind::Translation,
        TaskKind::Prediction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Generation => "generation",
            TaskKind::Translation => "translation",
            TaskKind::Prediction => "prediction",
        }
    }

    fn required_slots(self) -> &'static [&'static str] {
        match self {
            TaskKind::Generation => &[INSTRUCTION_SLOT, DURATION_SLOT],
            TaskKind::Translation => &[MOTION_SLOT, DURATION_SLOT],
            TaskKind::Prediction => &[MOTION_SLOT, INSTRUCTION_SLOT, DURATION_SLOT],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub generation: Vec<String>,
    pub translation: Vec<String>,
    pub prediction: Vec<String>,
}

const GENERATION: [&str; 20] = [
    "Generate a hand motion for {duration}: {instruction}",
    "Produce {duration} of hand movement where {instruction}",
    "Show me how the hands move for {duration} when {instruction}",
    "Create a {duration} hand motion sequence. Instruction: {instruction}",
    "Over the next {duration}, perform the following: {instruction}",
    "Synthesize hand motion lasting {duration}. {instruction}",
    "Animate the hands for {duration} so that {instruction}",
    "Given the instruction \"{instruction}\", output {duration} of hand motion.",
    "Write out the hand trajectory for {duration}: {instruction}",
    "What hand motion over {duration} matches this description? {instruction}",
    "Demonstrate with your hands for {duration}: {instruction}",
    "Plan {duration} of hand poses to carry out: {instruction}",
    "Instruction: {instruction} Duration: {duration}. Respond with motion.",
    "Perform this action in {duration}: {instruction}",
    "Produce a motion clip of {duration} in which {instruction}",
    "Imagine the hands doing this for {duration}: {instruction}. Generate it.",
    "For a duration of {duration}, move the hands as follows: {instruction}",
    "Translate this description into {duration} of hand motion: {instruction}",
    "Hand motion request ({duration}): {instruction}",
    "Execute the task below with a {duration} hand motion. {instruction}",
];

const TRANSLATION: [&str; 20] = [
    "Describe the following {duration} hand motion: {motion}",
    "What are the hands doing in this {duration} clip? {motion}",
    "Caption this hand movement lasting {duration}. {motion}",
    "Explain in words the {duration} of motion below. {motion}",
    "Here is {duration} of hand motion: {motion} Summarize it.",
    "Give a short description of this {duration} motion: {motion}",
    "Read the hand motion and describe it ({duration}): {motion}",
    "Narrate what happens in these {duration} of hand poses: {motion}",
    "Convert this {duration} hand motion into text. {motion}",
    "Which action is performed in the {duration} motion {motion}?",
    "Motion ({duration}): {motion} Describe the action.",
    "Tell me what the hands do during these {duration}: {motion}",
    "Provide a caption for the {duration} hand sequence {motion}",
    "Interpret the following {duration} of motion tokens: {motion}",
    "In one sentence, what does this {duration} motion show? {motion}",
    "Annotate the {duration} hand motion: {motion}",
    "Watch this {duration} of hand movement and describe it. {motion}",
    "Describe the {duration} of hand activity encoded here: {motion}",
    "The hands moved like this for {duration}: {motion} What were they doing?",
    "Summarize the intent behind this {duration} motion. {motion}",
];

const PREDICTION: [&str; 20] = [
    "The hands just moved like this: {motion} Continue for {duration} so that {instruction}",
    "Given the prior motion {motion}, predict the next {duration} where {instruction}",
    "Continue this hand motion for {duration}: {motion} Goal: {instruction}",
    "Here is what happened so far: {motion} Generate the following {duration}. {instruction}",
    "Predict {duration} of future hand motion after {motion} given that {instruction}",
    "Extend the motion {motion} by {duration}. Instruction: {instruction}",
    "After {motion}, what do the hands do over the next {duration}? {instruction}",
    "History: {motion} Task: {instruction} Predict {duration} of motion.",
    "Forecast the next {duration} of hand motion following {motion}. {instruction}",
    "Complete the movement for {duration}, starting from {motion}, so that {instruction}",
    "Past motion: {motion} Continue for {duration}: {instruction}",
    "Pick up from {motion} and perform {instruction} over {duration}.",
    "Based on the motion so far {motion}, generate {duration} more. {instruction}",
    "Continue the hands' motion {motion} for another {duration} while {instruction}",
    "The sequence begins with {motion}. Produce the next {duration} to {instruction}",
    "Given context {motion}, anticipate {duration} of motion in which {instruction}",
    "What comes next after {motion}? Output {duration} of motion. {instruction}",
    "Resume from {motion} and move for {duration}: {instruction}",
    "Observed so far: {motion} Predict the following {duration} given: {instruction}",
    "Using {motion} as context, continue for {duration} where {instruction}",
];

impl Default for TemplateSet {
    fn default() -> Self {
        let own = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        TemplateSet {
            generation: own(&GENERATION),
            translation: own(&TRANSLATION),
            prediction: own(&PREDICTION),
        }
    }
}

impl TemplateSet {
    pub fn for_task(&self, task: TaskKind) -> &[String] {
        match task {
            TaskKind::Generation => &self.generation,
            TaskKind::Translation => &self.translation,
            TaskKind::Prediction => &self.prediction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for task in TaskKind::ALL {
            let list = self.for_task(task);
            if list.is_empty() {
                return Err(Error::Config(format!("no {} templates", task.as_str())));
            }
            for (i, t) in list.iter().enumerate() {
                if let Some(slot) = task.required_slots().iter().find(|s| !t.contains(*s)) {
                    return Err(Error::Config(format!(
                        "{} template {i} lacks {slot}",
                        task.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let t: TemplateSet = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Where a sample came from; enough to rebuild it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub record_id: String,
    pub chunk: usize,
    pub start_frame: usize,
    pub seconds: usize,
    pub hands: Vec<Side>,
    pub augments: Vec<AugmentRecord>,
    pub template: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// Serialized motion blocks.
    Motion {
        ids: Vec<u32>,
    },
    Text {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionSample {
    pub task: TaskKind,
    pub prompt: String,
    /// Serialized motion blocks the prompt refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<u32>>,
    pub target: Target,
    /// Seconds of motion in the target, or in the prompt for translation.
    pub duration: usize,
    pub provenance: Provenance,
}

impl InstructionSample {
    /// Motion blocks counted by `duration`.
    pub fn duration_blocks(&self, vocab: &Vocabulary) -> usize {
        let ids = match (&self.task, &self.target, &self.context) {
            (TaskKind::Translation, _, Some(c)) => c,
            (_, Target::Motion { ids }, _) => ids,
            _ => return 0,
        };
        ids.iter()
            .filter(|&&id| id == vocab.specials.mot_open)
            .count()
    }
}

/// A tokenized span ready for instantiation.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanTokens {
    pub span: Span,
    pub augments: Vec<AugmentRecord>,
    pub tokens: MotionTokens,
    pub instruction: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateOptions {
    /// Seconds of prior motion given to prediction samples.
    pub context_seconds: usize,
    pub seed: u64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            context_seconds: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub produced: usize,
    /// Samples dropped because their span has no annotation text.
    pub skipped_unannotated: usize,
    /// Prediction samples dropped because the span is too short to split.
    pub skipped_short: usize,
}

fn duration_text(seconds: usize) -> String {
    if seconds == 1 {
        "1 second".into()
    } else {
        format!("{seconds} seconds")
    }
}

fn split_seconds(tokens: &MotionTokens, at: usize) -> (MotionTokens, MotionTokens) {
    let part = |range: &dyn Fn(&HandTokens) -> Vec<Vec<u32>>| MotionTokens {
        hands: tokens
            .hands
            .iter()
            .map(|h| HandTokens {
                side: h.side,
                seconds: range(h),
            })
            .collect(),
    };
    (
        part(&|h| h.seconds[..at].to_vec()),
        part(&|h| h.seconds[at..].to_vec()),
    )
}

/// Fills template `template` of `task` from one tokenized span. Returns
/// `Ok(None)` when the span cannot make this kind of sample.
pub fn instantiate(
    task: TaskKind,
    item: &SpanTokens,
    templates: &TemplateSet,
    template: usize,
    vocab: &Vocabulary,
    context_seconds: usize,
) -> Result<std::result::Result<InstructionSample, SkipReason>> {
    let list = templates.for_task(task);
    let text = list.get(template).ok_or_else(|| {
        Error::Config(format!(
            "{} template {template} out of range",
            task.as_str()
        ))
    })?;
    let seconds = item.span.seconds;
    let provenance = Provenance {
        record_id: item.span.record_id.clone(),
        chunk: item.span.chunk,
        start_frame: item.span.start,
        seconds,
        hands: item.span.hands.clone(),
        augments: item.augments.clone(),
        template,
    };
    let instruction = item.instruction.as_deref();
    let fill = |motion: Option<&[u32]>, duration: usize| {
        let mut p = text.replace(DURATION_SLOT, &duration_text(duration));
        if let Some(m) = motion {
            p = p.replace(MOTION_SLOT, &format_tags(m, vocab));
        }
        if let Some(i) = instruction {
            p = p.replace(INSTRUCTION_SLOT, i);
        }
        p
    };
    let sample = match task {
        TaskKind::Generation => {
            if instruction.is_none() {
                return Ok(Err(SkipReason::Unannotated));
            }
            InstructionSample {
                task,
                prompt: fill(None, seconds),
                context: None,
                target: Target::Motion {
                    ids: serialize_blocks(&item.tokens, vocab)?,
                },
                duration: seconds,
                provenance,
            }
        }
        TaskKind::Translation => {
            let Some(text) = instruction else {
                return Ok(Err(SkipReason::Unannotated));
            };
            let ids = serialize_blocks(&item.tokens, vocab)?;
            InstructionSample {
                task,
                prompt: fill(Some(&ids), seconds),
                context: Some(ids),
                target: Target::Text {
                    text: text.to_string(),
                },
                duration: seconds,
                provenance,
            }
        }
        TaskKind::Prediction => {
            if instruction.is_none() {
                return Ok(Err(SkipReason::Unannotated));
            }
            if context_seconds == 0 || context_seconds >= seconds {
                return Ok(Err(SkipReason::TooShort));
            }
            let (before, after) = split_seconds(&item.tokens, context_seconds);
            let ctx = serialize_blocks(&before, vocab)?;
            let duration = seconds - context_seconds;
            InstructionSample {
                task,
                prompt: fill(Some(&ctx), duration),
                context: Some(ctx),
                target: Target::Motion {
                    ids: serialize_blocks(&after, vocab)?,
                },
                duration,
                provenance,
            }
        }
    };
    Ok(Ok(sample))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    Unannotated,
    TooShort,
}

/// Template index for sample `index`, drawn from its own named stream so
/// that the choice does not depend on other samples.
pub fn choose_template(seed: u64, task: TaskKind, index: usize, templates: &TemplateSet) -> usize {
    let mut rng = named_rng(seed, &format!("templates/{index}"));
    rng.random_range(0..templates.for_task(task).len())
}

/// Instantiates one sample per `(task, span)` item, counting skips.
pub fn instantiate_templates(
    items: &[(TaskKind, SpanTokens)],
    templates: &TemplateSet,
    vocab: &Vocabulary,
    opts: &TemplateOptions,
) -> Result<(Vec<InstructionSample>, TemplateReport)> {
    templates.validate()?;
    let mut out = Vec::with_capacity(items.len());
    let mut report = TemplateReport::default();
    for (i, (task, item)) in items.iter().enumerate() {
        let template = choose_template(opts.seed, *task, i, templates);
        match instantiate(
            *task,
            item,
            templates,
            template,
            vocab,
            opts.context_seconds,
        )? {
            Ok(s) => out.push(s),
            Err(SkipReason::Unannotated) => report.skipped_unannotated += 1,
            Err(SkipReason::TooShort) => report.skipped_short += 1,
        }
    }
    report.produced = out.len();
    Ok((out, report))
}
