//! Decision and description stages: prompting, reply parsing, refusal
//! detection, and the batch runner.

mod literal;
mod parse;
mod refusal;
mod run;

pub use literal::{parse_dict, LiteralValue};
pub use parse::{
    parse_intents, parse_stage1, parse_stage1_with, parse_stage2, parse_stage2_with, DescriptionOutput, ParseFailure,
    Stage1Output, StageOutcome,
};
pub use refusal::{detect_refusal, RefusalLexicon};
pub use run::{
    load_stage1, load_stage2, write_prompts, write_run, write_stage1, write_stage2, DecisionRecord, DescriptionRecord,
    Pipeline, PipelineOptions, Profile, RecordOutcome, RenderedPrompt, RunDirError, RunOutput, StageRecord, Timing,
    STAGE1_FILE, STAGE1_TIMINGS_FILE, STAGE2_FILE, STAGE2_TIMINGS_FILE,
};
