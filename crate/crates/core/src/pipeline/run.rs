use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::parse::{parse_stage1_with, parse_stage2_with, DescriptionOutput, ParseFailure, Stage1Output, StageOutcome};
use super::refusal::RefusalLexicon;
use crate::data::{Decision, Dialogue};
use crate::llm::{default_config, request_fingerprint, Gateway, GenConfig, Stage};
use crate::prompt::{
    assign_speaker_names, build_stage1_prompt_at, build_stage2_prompt_with, NamePool, Probe, PromptError, PromptText,
    Stage1Options,
};

pub const STAGE1_FILE: &str = "stage1.jsonl";
pub const STAGE2_FILE: &str = "stage2.jsonl";
/// Latency sidecars; kept apart so the stage files stay byte-stable.
pub const STAGE1_TIMINGS_FILE: &str = "stage1.timings.jsonl";
pub const STAGE2_TIMINGS_FILE: &str = "stage2.timings.jsonl";

/// Which stages a run executes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// Decide, then describe only the "yes" dialogues.
    #[default]
    Full,
    /// Skip the decision and describe every dialogue.
    DescribeRetrieve,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(Profile::Full),
            "describe_retrieve" | "stages_2_3" => Ok(Profile::DescribeRetrieve),
            other => Err(format!("unknown profile `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordOutcome<T> {
    Parsed {
        value: T,
    },
    Refusal,
    ParseError {
        reason: ParseFailure,
    },
    /// The gateway or prompt builder failed; see `error`.
    Failed,
    /// Not invoked because the paired decision was not "yes".
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub latency_ms: f64,
    pub cached: bool,
}

/// One stage result for one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord<T> {
    pub dialogue_id: String,
    pub outcome: RecordOutcome<T>,
    pub raw: String,
    pub fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Transcript cutoff of inference-mode probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
    /// Kept out of the record files so reruns from cache stay byte-identical.
    #[serde(skip)]
    pub timing: Option<Timing>,
}

pub type DecisionRecord = StageRecord<Stage1Output>;
pub type DescriptionRecord = StageRecord<DescriptionOutput>;

impl<T> StageRecord<T> {
    fn skeleton(dialogue_id: &str) -> Self {
        Self {
            dialogue_id: dialogue_id.to_owned(),
            outcome: RecordOutcome::Skipped,
            raw: String::new(),
            fingerprint: String::new(),
            error: None,
            cutoff: None,
            timing: None,
        }
    }

    pub fn skipped(dialogue_id: &str) -> Self {
        Self::skeleton(dialogue_id)
    }

    fn failed(dialogue_id: &str, fingerprint: String, error: String) -> Self {
        Self { outcome: RecordOutcome::Failed, fingerprint, error: Some(error), ..Self::skeleton(dialogue_id) }
    }

    pub fn value(&self) -> Option<&T> {
        match &self.outcome {
            RecordOutcome::Parsed { value } => Some(value),
            _ => None,
        }
    }

    pub fn is_refusal(&self) -> bool {
        matches!(self.outcome, RecordOutcome::Refusal)
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self.outcome, RecordOutcome::Skipped)
    }
}

impl DecisionRecord {
    /// Decision used for scoring: refusals, parse errors and failures
    /// count as "no".
    pub fn scored_decision(&self) -> Decision {
        self.value().map_or(Decision::No, |o| o.decision)
    }
}

fn from_outcome<T>(outcome: StageOutcome<T>) -> RecordOutcome<T> {
    match outcome {
        StageOutcome::Parsed(value) => RecordOutcome::Parsed { value },
        StageOutcome::Refusal { .. } => RecordOutcome::Refusal,
        StageOutcome::ParseError { reason, .. } => RecordOutcome::ParseError { reason },
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub profile: Profile,
    pub stage1: Stage1Options,
    pub stage1_config: GenConfig,
    pub stage2_config: GenConfig,
    pub names: NamePool,
    /// Ask the describer for salient spans as well.
    pub salient: bool,
    pub workers: usize,
    pub lexicon: RefusalLexicon,
}

impl PipelineOptions {
    pub fn new(backend_id: &str, names: NamePool) -> Self {
        Self {
            profile: Profile::Full,
            stage1: Stage1Options::default(),
            stage1_config: default_config(Stage::Stage1).with_backend(backend_id),
            stage2_config: default_config(Stage::Stage2).with_backend(backend_id),
            names,
            salient: false,
            workers: 4,
            lexicon: RefusalLexicon::bundled().clone(),
        }
    }
}

/// Output of a pipeline run, sorted by dialogue id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutput {
    pub stage1: Vec<DecisionRecord>,
    pub stage2: Vec<DescriptionRecord>,
}

/// A prompt as it would be sent, for dry runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub dialogue_id: String,
    pub stage: String,
    pub fingerprint: String,
    pub prompt: String,
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    options: PipelineOptions,
}

impl<'a> Pipeline<'a> {
    pub fn new(gateway: &'a Gateway, options: PipelineOptions) -> Self {
        Self { gateway, options }
    }

    pub fn options(&self) -> &PipelineOptions {
        &self.options
    }

    fn stage1_prompt(&self, dialogue: &Dialogue, probe: Probe) -> Result<PromptText, PromptError> {
        let names = assign_speaker_names(dialogue, &self.options.names)?;
        build_stage1_prompt_at(dialogue, &names, probe, &self.options.stage1)
    }

    fn stage2_prompt(&self, dialogue: &Dialogue) -> Result<PromptText, PromptError> {
        let names = assign_speaker_names(dialogue, &self.options.names)?;
        build_stage2_prompt_with(dialogue, &names, self.options.salient)
    }

    fn call<T>(
        &self,
        dialogue_id: &str,
        prompt: Result<PromptText, PromptError>,
        cfg: &GenConfig,
        parse: impl Fn(&str) -> StageOutcome<T>,
    ) -> StageRecord<T> {
        let prompt = match prompt {
            Ok(p) => p,
            Err(e) => return StageRecord::failed(dialogue_id, String::new(), format!("prompt: {e}")),
        };
        let fingerprint = request_fingerprint(&prompt.text, cfg);
        match self.gateway.complete(&prompt, cfg) {
            Ok(res) => StageRecord {
                outcome: from_outcome(parse(&res.text)),
                raw: res.text,
                fingerprint,
                timing: Some(Timing { latency_ms: res.latency_ms, cached: res.cached }),
                ..StageRecord::skeleton(dialogue_id)
            },
            Err(e) => StageRecord::failed(dialogue_id, fingerprint, format!("{}: {e}", e.tag())),
        }
    }

    /// Decision at the evaluation probe: the gold share turn, or the end of
    /// a negative dialogue.
    pub fn run_decide(&self, dialogue: &Dialogue) -> DecisionRecord {
        match Probe::for_evaluation(dialogue) {
            Ok(probe) => self.run_decide_at(dialogue, probe),
            Err(e) => StageRecord::failed(&dialogue.dialogue_id, String::new(), format!("prompt: {e}")),
        }
    }

    pub fn run_decide_at(&self, dialogue: &Dialogue, probe: Probe) -> DecisionRecord {
        let lexicon = &self.options.lexicon;
        let mut record =
            self.call(&dialogue.dialogue_id, self.stage1_prompt(dialogue, probe), &self.options.stage1_config, |raw| {
                parse_stage1_with(raw, lexicon)
            });
        record.cutoff = Some(probe.cutoff);
        record
    }

    /// Inference mode: one decision per probe after each partner turn.
    pub fn run_decide_inference(&self, dialogue: &Dialogue, share_speaker: u8) -> Vec<DecisionRecord> {
        Probe::inference(dialogue, share_speaker).into_iter().map(|probe| self.run_decide_at(dialogue, probe)).collect()
    }

    pub fn run_describe(&self, dialogue: &Dialogue) -> DescriptionRecord {
        let lexicon = &self.options.lexicon;
        self.call(&dialogue.dialogue_id, self.stage2_prompt(dialogue), &self.options.stage2_config, |raw| {
            parse_stage2_with(raw, lexicon)
        })
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new().num_threads(self.options.workers.max(1)).build().expect("worker pool")
    }

    pub fn decide_all(&self, dialogues: &[Dialogue]) -> Vec<DecisionRecord> {
        let mut out: Vec<DecisionRecord> =
            self.pool().install(|| dialogues.par_iter().map(|d| self.run_decide(d)).collect());
        out.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
        out
    }

    /// Describes every dialogue, or with `decisions` given, only those whose
    /// decision is "yes"; the rest get skipped records.
    pub fn describe_all(&self, dialogues: &[Dialogue], decisions: Option<&[DecisionRecord]>) -> Vec<DescriptionRecord> {
        let gate: Option<BTreeMap<&str, Decision>> =
            decisions.map(|recs| recs.iter().map(|r| (r.dialogue_id.as_str(), r.scored_decision())).collect());
        let mut out: Vec<DescriptionRecord> = self.pool().install(|| {
            dialogues
                .par_iter()
                .map(|d| match &gate {
                    Some(g) if g.get(d.dialogue_id.as_str()) != Some(&Decision::Yes) => {
                        StageRecord::skipped(&d.dialogue_id)
                    }
                    _ => self.run_describe(d),
                })
                .collect()
        });
        out.sort_by(|a, b| a.dialogue_id.cmp(&b.dialogue_id));
        out
    }

    pub fn run(&self, dialogues: &[Dialogue]) -> RunOutput {
        match self.options.profile {
            Profile::Full => {
                let stage1 = self.decide_all(dialogues);
                let stage2 = self.describe_all(dialogues, Some(&stage1));
                RunOutput { stage1, stage2 }
            }
            Profile::DescribeRetrieve => RunOutput { stage1: Vec::new(), stage2: self.describe_all(dialogues, None) },
        }
    }

    /// Every prompt the run would send first, without calling the gateway.
    /// In the full profile, description prompts are listed for all
    /// dialogues with a share turn since decisions are not known yet.
    pub fn render_prompts(&self, dialogues: &[Dialogue]) -> Vec<RenderedPrompt> {
        let mut out = Vec::new();
        for d in dialogues {
            let mut push = |stage: &str, prompt: Result<PromptText, PromptError>, cfg: &GenConfig| {
                if let Ok(p) = prompt {
                    out.push(RenderedPrompt {
                        dialogue_id: d.dialogue_id.clone(),
                        stage: stage.to_owned(),
                        fingerprint: request_fingerprint(&p.text, cfg),
                        prompt: p.text,
                    });
                }
            };
            if self.options.profile == Profile::Full {
                let prompt = Probe::for_evaluation(d).and_then(|probe| self.stage1_prompt(d, probe));
                push("stage1", prompt, &self.options.stage1_config);
            }
            if d.share_turn_index.is_some() {
                push("stage2", self.stage2_prompt(d), &self.options.stage2_config);
            }
        }
        out.sort_by(|a, b| (&a.dialogue_id, &a.stage).cmp(&(&b.dialogue_id, &b.stage)));
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunDirError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}, line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunDirError + '_ {
    move |source| RunDirError::Io { path: path.display().to_string(), source }
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunDirError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunDirError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunDirError::Malformed {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Serialize)]
struct TimingLine<'a> {
    stage: &'a str,
    dialogue_id: &'a str,
    latency_ms: f64,
    cached: bool,
}

fn write_timings<T>(path: &Path, stage: &str, records: &[StageRecord<T>]) -> Result<(), RunDirError> {
    let timings: Vec<TimingLine> = records
        .iter()
        .filter_map(|r| {
            r.timing.map(|t| TimingLine {
                stage,
                dialogue_id: &r.dialogue_id,
                latency_ms: t.latency_ms,
                cached: t.cached,
            })
        })
        .collect();
    write_lines(path, &timings)
}

/// Writes `stage1.jsonl` and its timing sidecar.
pub fn write_stage1(dir: &Path, records: &[DecisionRecord]) -> Result<(), RunDirError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_lines(&dir.join(STAGE1_FILE), records)?;
    write_timings(&dir.join(STAGE1_TIMINGS_FILE), "stage1", records)
}

/// Writes `stage2.jsonl` and its timing sidecar.
pub fn write_stage2(dir: &Path, records: &[DescriptionRecord]) -> Result<(), RunDirError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_lines(&dir.join(STAGE2_FILE), records)?;
    write_timings(&dir.join(STAGE2_TIMINGS_FILE), "stage2", records)
}

/// Writes the stage files of `profile` into `dir`.
pub fn write_run(dir: &Path, output: &RunOutput, profile: Profile) -> Result<(), RunDirError> {
    if profile == Profile::Full {
        write_stage1(dir, &output.stage1)?;
    }
    write_stage2(dir, &output.stage2)
}

pub fn load_stage1(dir: &Path) -> Result<Vec<DecisionRecord>, RunDirError> {
    let mut records: Vec<DecisionRecord> = read_lines(&dir.join(STAGE1_FILE))?;
    for r in &mut records {
        if let RecordOutcome::Parsed { value } = &mut r.outcome {
            value.raw = r.raw.clone();
        }
    }
    Ok(records)
}

pub fn load_stage2(dir: &Path) -> Result<Vec<DescriptionRecord>, RunDirError> {
    let mut records: Vec<DescriptionRecord> = read_lines(&dir.join(STAGE2_FILE))?;
    for r in &mut records {
        if let RecordOutcome::Parsed { value } = &mut r.outcome {
            value.raw = r.raw.clone();
        }
    }
    Ok(records)
}

pub fn write_prompts(path: &Path, prompts: &[RenderedPrompt]) -> Result<(), RunDirError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_lines(path, prompts)
}
