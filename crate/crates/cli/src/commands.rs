use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use imageshare_core::augment::{analyze_rationales, augment_all, AugmentOptions, RawResponse};
use imageshare_core::data::{
    check_annotations, load_annotations, load_photochat, write_augmented, AnnotationMap, Dialogue, ImageRef,
};
use imageshare_core::echo::gold_exemplar;
use imageshare_core::llm::{default_config, GenConfig, Stage};
use imageshare_core::metrics::{aggregate_run_dir, AggregateOptions, EvalInputs, EvaluationReport, IntentGold};
use imageshare_core::pipeline::{
    load_stage1, load_stage2, write_prompts, write_stage1, write_stage2, Pipeline, PipelineOptions, Profile,
    RecordOutcome, RenderedPrompt, StageRecord, STAGE1_FILE, STAGE2_FILE,
};
use imageshare_core::prompt::{
    assign_speaker_names, build_augment_prompt, select_exemplars, ExemplarPayload, NamePool,
};
use imageshare_core::retrieval::{
    mrr, rank_in_pool, recall_at_k, CandidatePool, EmbeddingBackend, RankedRetrieval, RetrievalIndex,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::backends::{self, FatalBackend};
use crate::config::{config_error, IntentGoldRule, ObjectSource, PayloadKeys, PoolKind, RunConfig};

pub const RETRIEVAL_FILE: &str = "retrieval.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "per_instance.csv";
pub const CONFIG_FILE: &str = "config.json";
/// Ranked candidates kept per query in the retrieval file.
const KEEP_RANKS: usize = 10;

/// Run artifacts a command depends on are absent. Exit status 2.
#[derive(Debug)]
pub struct MissingRun(pub String);

impl fmt::Display for MissingRun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing run: {}", self.0)
    }
}

impl std::error::Error for MissingRun {}

/// Loaded inputs plus the run directory they map to.
pub struct RunContext {
    pub cfg: RunConfig,
    pub dialogues: Vec<Dialogue>,
    pub annotations: Option<AnnotationMap>,
    pub run_dir: PathBuf,
    pub dry_run: bool,
}

impl RunContext {
    pub fn load(cfg: RunConfig, dry_run: bool) -> anyhow::Result<Self> {
        cfg.validate()?;
        let path = cfg.data.dialogues.clone().expect("validated");
        let dialogues = load_photochat(&path).map_err(|e| config_error(format!("data.dialogues: {e}")))?;
        let annotations = match &cfg.data.annotations {
            Some(p) => {
                let anns = load_annotations(p).map_err(|e| config_error(format!("data.annotations: {e}")))?;
                check_annotations(&anns, &dialogues).map_err(|e| config_error(format!("data.annotations: {e}")))?;
                Some(anns)
            }
            None => None,
        };
        let run_dir = cfg.run_dir()?;
        Ok(Self { cfg, dialogues, annotations, run_dir, dry_run })
    }

    fn prepare_run_dir(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.run_dir).with_context(|| format!("creating {}", self.run_dir.display()))?;
        let resolved = serde_json::to_string_pretty(&self.cfg.resolved())? + "\n";
        std::fs::write(self.run_dir.join(CONFIG_FILE), resolved)?;
        Ok(())
    }

    fn names(&self) -> anyhow::Result<NamePool> {
        let seed = self.cfg.pipeline.seed;
        match &self.cfg.pipeline.names {
            Some(p) => NamePool::from_file(p, seed).map_err(|e| config_error(format!("pipeline.names: {e}"))),
            None => Ok(NamePool::bundled(seed)),
        }
    }

    fn gen_config(&self, stage: Stage) -> GenConfig {
        let mut cfg = default_config(stage).with_backend(self.cfg.backend.backend_id());
        let g = &self.cfg.generation;
        match stage {
            Stage::Stage1 => g.stage1.apply(&mut cfg),
            Stage::Stage2 => g.stage2.apply(&mut cfg),
            Stage::Augment => g.augment.apply(&mut cfg),
            Stage::ObjectExtract => g.objects.apply(&mut cfg),
        }
        cfg
    }

    fn pipeline_options(&self) -> anyhow::Result<PipelineOptions> {
        let p = &self.cfg.pipeline;
        let mut o = PipelineOptions::new(&self.cfg.backend.backend_id(), self.names()?);
        o.profile = p.profile;
        o.salient = p.salient;
        o.workers = self.cfg.run.workers;
        o.stage1.cot = p.cot;
        o.stage1.payload = match p.exemplar_payload {
            PayloadKeys::Full => ExemplarPayload::Full,
            PayloadKeys::DecisionOnly => ExemplarPayload::DecisionOnly,
        };
        o.stage1_config = self.gen_config(Stage::Stage1);
        o.stage2_config = self.gen_config(Stage::Stage2);
        for c in [&o.stage1_config, &o.stage2_config] {
            c.validate().map_err(|e| config_error(format!("generation: {e}")))?;
        }
        if p.shots > 0 {
            let d = &self.cfg.data;
            let train_path = d.train_dialogues.as_ref().expect("validated");
            let train = load_photochat(train_path).map_err(|e| config_error(format!("data.train_dialogues: {e}")))?;
            let anns = load_annotations(d.train_annotations.as_ref().expect("validated"))
                .map_err(|e| config_error(format!("data.train_annotations: {e}")))?;
            let empty = Vec::new();
            let pool = train
                .iter()
                .map(|t| gold_exemplar(t, anns.get(&t.dialogue_id).unwrap_or(&empty), &o.names))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| config_error(format!("data.train_dialogues: {e}")))?;
            o.stage1.shots = select_exemplars(&pool, p.shots, p.seed);
        }
        Ok(o)
    }

    /// Dialogues scored under the profile: all of them in the full
    /// profile, only those with a share turn otherwise.
    fn scored_dialogues(&self) -> Vec<Dialogue> {
        match self.cfg.pipeline.profile {
            Profile::Full => self.dialogues.clone(),
            Profile::DescribeRetrieve => {
                self.dialogues.iter().filter(|d| d.share_turn_index.is_some()).cloned().collect()
            }
        }
    }

    fn candidates(&self) -> anyhow::Result<Vec<ImageRef>> {
        match &self.cfg.data.images {
            Some(p) => read_images(p),
            None => Ok(self.dialogues.iter().filter_map(|d| d.gold_image.clone()).collect()),
        }
    }
}

fn read_images(path: &Path) -> anyhow::Result<Vec<ImageRef>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("data.images: {e}")))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| config_error(format!("data.images line {}: {e}", i + 1))))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

#[derive(Default)]
struct Tally {
    counts: BTreeMap<&'static str, usize>,
}

impl Tally {
    fn of<T>(records: &[StageRecord<T>]) -> Self {
        let mut t = Tally::default();
        for r in records {
            let key = match r.outcome {
                RecordOutcome::Parsed { .. } => "parsed",
                RecordOutcome::Refusal => "refusal",
                RecordOutcome::ParseError { .. } => "parse_error",
                RecordOutcome::Failed => "failed",
                RecordOutcome::Skipped => "skipped",
            };
            *t.counts.entry(key).or_default() += 1;
        }
        t
    }

    fn get(&self, key: &str) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    fn summary(&self) -> String {
        self.counts.iter().map(|(k, v)| format!("{k} {v}")).collect::<Vec<_>>().join(", ")
    }
}

/// Partial failures are reported and tolerated; a stage where every
/// attempted request failed in the gateway is fatal.
fn check_failures<T>(stage: &str, records: &[StageRecord<T>]) -> anyhow::Result<()> {
    let tally = Tally::of(records);
    let attempted = records.len() - tally.get("skipped");
    let failed = tally.get("failed");
    eprintln!("{stage}: {}", tally.summary());
    if attempted > 0 && failed == attempted {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(FatalBackend(format!("every {stage} request failed; first error: {first}")).into());
    }
    let warnings = failed + tally.get("parse_error") + tally.get("refusal");
    if warnings > 0 {
        eprintln!("warning: {warnings} {stage} records were not parsed (see {stage}.jsonl)");
    }
    Ok(())
}

fn render(ctx: &RunContext, stage: &str) -> anyhow::Result<Vec<RenderedPrompt>> {
    let gw = imageshare_core::llm::Gateway::default();
    let all = Pipeline::new(&gw, ctx.pipeline_options()?).render_prompts(&ctx.scored_dialogues());
    Ok(all.into_iter().filter(|p| p.stage == stage).collect())
}

fn dry_run(ctx: &RunContext, stage: &str, prompts: &[RenderedPrompt]) -> anyhow::Result<()> {
    ctx.prepare_run_dir()?;
    let path = ctx.run_dir.join(format!("prompts.{stage}.jsonl"));
    write_prompts(&path, prompts)?;
    println!("{} {stage} prompts written to {}", prompts.len(), path.display());
    Ok(())
}

fn pipeline_gateway(ctx: &RunContext) -> anyhow::Result<imageshare_core::llm::Gateway> {
    let gw = imageshare_core::llm::Gateway::default();
    let prompts = Pipeline::new(&gw, ctx.pipeline_options()?).render_prompts(&ctx.scored_dialogues());
    backends::gateway(&ctx.cfg, &prompts, &ctx.scored_dialogues(), ctx.annotations.as_ref())
}

pub fn decide(ctx: &RunContext) -> anyhow::Result<()> {
    if ctx.cfg.pipeline.profile != Profile::Full {
        return Err(config_error("decide runs only in the full profile"));
    }
    if ctx.dry_run {
        return dry_run(ctx, "stage1", &render(ctx, "stage1")?);
    }
    let gw = pipeline_gateway(ctx)?;
    let records = Pipeline::new(&gw, ctx.pipeline_options()?).decide_all(&ctx.dialogues);
    ctx.prepare_run_dir()?;
    write_stage1(&ctx.run_dir, &records)?;
    println!("{}", ctx.run_dir.join(STAGE1_FILE).display());
    check_failures("stage1", &records)
}

pub fn describe(ctx: &RunContext) -> anyhow::Result<()> {
    if ctx.dry_run {
        return dry_run(ctx, "stage2", &render(ctx, "stage2")?);
    }
    let decisions = match ctx.cfg.pipeline.profile {
        Profile::Full => {
            if !ctx.run_dir.join(STAGE1_FILE).is_file() {
                return Err(
                    MissingRun(format!("{} has no {STAGE1_FILE}; run `decide` first", ctx.run_dir.display())).into()
                );
            }
            Some(load_stage1(&ctx.run_dir)?)
        }
        Profile::DescribeRetrieve => None,
    };
    let gw = pipeline_gateway(ctx)?;
    let dialogues = ctx.scored_dialogues();
    let records = Pipeline::new(&gw, ctx.pipeline_options()?).describe_all(&dialogues, decisions.as_deref());
    ctx.prepare_run_dir()?;
    write_stage2(&ctx.run_dir, &records)?;
    println!("{}", ctx.run_dir.join(STAGE2_FILE).display());
    check_failures("stage2", &records)
}

fn index_name(backend: &dyn EmbeddingBackend, candidates: &[ImageRef]) -> String {
    let mut h = Sha256::new();
    h.update(backend.backend_id().as_bytes());
    for c in candidates {
        h.update([0]);
        h.update(c.id.as_bytes());
        h.update([0]);
        h.update(c.uri.as_bytes());
    }
    format!("candidates-{}", &hex::encode(h.finalize())[..16])
}

pub fn retrieve(ctx: &RunContext, build: bool) -> anyhow::Result<()> {
    if !ctx.run_dir.join(STAGE2_FILE).is_file() {
        return Err(MissingRun(format!("{} has no {STAGE2_FILE}; run `describe` first", ctx.run_dir.display())).into());
    }
    let backend = backends::require_embedder(&ctx.cfg, &ctx.dialogues, ctx.annotations.as_ref(), "retrieve")?;
    let candidates = ctx.candidates()?;
    let dir = ctx.cfg.index_dir();
    let name = index_name(backend.as_ref(), &candidates);
    if ctx.dry_run {
        let state = if RetrievalIndex::exists(&dir, &name) { "cached" } else { "not built" };
        println!("index {name} {state}; dry run ranks nothing");
        return Ok(());
    }
    let index = if RetrievalIndex::exists(&dir, &name) {
        RetrievalIndex::load(&dir, &name)?
    } else if build || ctx.cfg.retrieval.build_index {
        let index = RetrievalIndex::build(&candidates, backend.as_ref()).map_err(|e| FatalBackend(e.to_string()))?;
        index.save(&dir, &name)?;
        eprintln!("built index {} ({} candidates)", dir.join(&name).display(), index.len());
        index
    } else {
        return Err(config_error(format!(
            "no candidate index {name} in {}; pass --build-index or set retrieval.build_index",
            dir.display()
        )));
    };
    let pool = match ctx.cfg.retrieval.pool {
        PoolKind::All => CandidatePool::All,
        PoolKind::Sampled => {
            CandidatePool::Sampled { size: ctx.cfg.retrieval.pool_size, seed: ctx.cfg.retrieval.pool_seed }
        }
    };
    let gold: BTreeMap<&str, &str> = ctx
        .dialogues
        .iter()
        .filter_map(|d| d.gold_image.as_ref().map(|g| (d.dialogue_id.as_str(), g.id.as_str())))
        .collect();
    let mut results = Vec::new();
    let mut unranked = 0;
    for r in load_stage2(&ctx.run_dir)? {
        let (Some(out), Some(gold_id)) = (r.value(), gold.get(r.dialogue_id.as_str())) else {
            unranked += usize::from(!r.is_skipped());
            continue;
        };
        let mut ranked = rank_in_pool(&index, &r.dialogue_id, &out.description, backend.as_ref(), gold_id, pool)
            .map_err(|e| match e {
                imageshare_core::retrieval::RetrievalError::QueryEmbedding(m) => FatalBackend(m).into(),
                other => anyhow::Error::from(other),
            })?;
        ranked.ranking.truncate(KEEP_RANKS);
        ranked.scores.truncate(KEEP_RANKS);
        results.push(ranked);
    }
    write_jsonl(&ctx.run_dir.join(RETRIEVAL_FILE), &results)?;
    if unranked > 0 {
        eprintln!("warning: {unranked} descriptions were not ranked (unparsed or no gold image)");
    }
    println!(
        "R@1 {:.4}  R@5 {:.4}  R@10 {:.4}  MRR {:.4}  ({} queries)",
        recall_at_k(&results, 1)?,
        recall_at_k(&results, 5)?,
        recall_at_k(&results, 10)?,
        mrr(&results)?,
        results.len()
    );
    println!("{}", ctx.run_dir.join(RETRIEVAL_FILE).display());
    Ok(())
}

fn read_retrieval(path: &Path) -> anyhow::Result<Vec<RankedRetrieval>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(anyhow::Error::from))
        .collect()
}

pub fn evaluate(ctx: &RunContext) -> anyhow::Result<()> {
    let annotations = ctx.annotations.as_ref().ok_or_else(|| config_error("evaluate needs data.annotations"))?;
    let has_run = [STAGE1_FILE, STAGE2_FILE].iter().any(|f| ctx.run_dir.join(f).is_file());
    if !has_run {
        return Err(MissingRun(format!("no run artifacts in {}", ctx.run_dir.display())).into());
    }
    let retrieval_path = ctx.run_dir.join(RETRIEVAL_FILE);
    let retrieval = if retrieval_path.is_file() { Some(read_retrieval(&retrieval_path)?) } else { None };
    let embedder = backends::embedder(&ctx.cfg, &ctx.dialogues, Some(annotations))?;
    let object_gateway;
    let object_config = ctx.gen_config(Stage::ObjectExtract);
    let objects = match ctx.cfg.evaluate.objects {
        ObjectSource::Lexical => None,
        ObjectSource::Llm => {
            object_gateway = backends::gateway(&ctx.cfg, &[], &ctx.dialogues, Some(annotations))?;
            Some((&object_gateway, &object_config))
        }
    };
    let dialogues = ctx.scored_dialogues();
    let options = AggregateOptions {
        intent_gold: match ctx.cfg.evaluate.intent_gold {
            IntentGoldRule::Union => IntentGold::Union,
            IntentGoldRule::Intersection => IntentGold::Intersection,
        },
        all_sentence_threshold: ctx.cfg.evaluate.all_sentence_threshold,
        salient: ctx.cfg.pipeline.salient,
    };
    let inputs = EvalInputs {
        dialogues: &dialogues,
        annotations,
        stage1: None,
        stage2: None,
        retrieval: retrieval.as_deref(),
        embedder: embedder.as_deref(),
        objects,
    };
    let report = aggregate_run_dir(&ctx.run_dir, inputs, options).map_err(|e| match e {
        imageshare_core::metrics::ReportError::MissingRun(p) => MissingRun(p.display().to_string()).into(),
        other => anyhow::Error::from(other),
    })?;
    std::fs::write(ctx.run_dir.join(REPORT_JSON), report.to_json() + "\n")?;
    std::fs::write(ctx.run_dir.join(REPORT_TEXT), report.to_text())?;
    std::fs::write(ctx.run_dir.join(REPORT_CSV), report.to_csv())?;
    print!("{}", report.to_text());
    println!("{}", ctx.run_dir.join(REPORT_JSON).display());
    Ok(())
}

/// Side-by-side headline scores of finished runs.
pub fn report(run_dirs: &[PathBuf], out: &mut dyn Write) -> anyhow::Result<()> {
    let mut columns = Vec::new();
    for dir in run_dirs {
        let path = dir.join(REPORT_JSON);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| MissingRun(format!("{} not found; run `evaluate` first", path.display())))?;
        let report: EvaluationReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let label = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        columns.push((label, report));
    }
    let keys: Vec<&str> = columns.first().map(|(_, r)| r.headline().keys().copied().collect()).unwrap_or_default();
    let width = keys.iter().map(|k| k.len()).max().unwrap_or(0).max("metric".len());
    let col = columns.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(8);
    write!(out, "{:<width$}", "metric")?;
    for (label, _) in &columns {
        write!(out, "  {label:>col$}")?;
    }
    writeln!(out)?;
    for key in keys {
        write!(out, "{key:<width$}")?;
        for (_, r) in &columns {
            let v = r.headline()[key].map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4}"));
            write!(out, "  {v:>col$}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RawLine<'a> {
    dialogue_id: &'a str,
    #[serde(flatten)]
    response: &'a RawResponse,
}

#[derive(Serialize)]
struct WarningLine<'a> {
    dialogue_id: &'a str,
    #[serde(flatten)]
    warning: &'a imageshare_core::augment::MomentWarning,
}

pub const AUGMENTED_FILE: &str = "aug.jsonl";

pub fn augment(ctx: &RunContext) -> anyhow::Result<()> {
    if ctx.cfg.backend.kind == crate::config::BackendKind::GoldEcho {
        return Err(config_error("augment needs a chat model; gold-echo has no gold moments to echo"));
    }
    let names = ctx.names()?;
    if ctx.dry_run {
        let cfg = ctx.gen_config(Stage::Augment);
        let mut prompts = Vec::new();
        for d in &ctx.dialogues {
            let n = assign_speaker_names(d, &names)?;
            let p = build_augment_prompt(d, &n)?;
            prompts.push(RenderedPrompt {
                dialogue_id: d.dialogue_id.clone(),
                stage: "augment".into(),
                fingerprint: imageshare_core::llm::request_fingerprint(&p.text, &cfg),
                prompt: p.text,
            });
        }
        return dry_run(ctx, "augment", &prompts);
    }
    let mut options = AugmentOptions::new(&ctx.cfg.backend.backend_id(), names);
    options.augment_config = ctx.gen_config(Stage::Augment);
    options.describe_config = ctx.gen_config(Stage::Stage2);
    options.match_threshold = ctx.cfg.augment.match_threshold;
    options.workers = ctx.cfg.run.workers;
    let gw = backends::gateway(&ctx.cfg, &[], &ctx.dialogues, ctx.annotations.as_ref())?;
    let candidates = ctx.candidates()?;
    let provider = backends::image_provider(&ctx.cfg, &candidates, &ctx.dialogues, ctx.annotations.as_ref())?;
    let results = augment_all(&ctx.dialogues, &gw, provider.as_ref(), &options);

    let mut augmented = Vec::new();
    let mut warnings = Vec::new();
    let mut raw = Vec::new();
    let mut errors = 0;
    for (d, res) in ctx.dialogues.iter().zip(&results) {
        match res {
            Ok(r) => {
                augmented.push(r.dialogue.clone());
                warnings.extend(r.warnings.iter().map(|w| WarningLine { dialogue_id: &d.dialogue_id, warning: w }));
                raw.extend(r.raw.iter().map(|x| RawLine { dialogue_id: &d.dialogue_id, response: x }));
            }
            Err(e) => {
                errors += 1;
                eprintln!("warning: {}: {e}", d.dialogue_id);
            }
        }
    }
    let gateway_failures = warnings
        .iter()
        .filter(|w| w.warning.kind == imageshare_core::augment::WarningKind::GatewayFailed && w.warning.line.is_none())
        .count();
    if !ctx.dialogues.is_empty() && gateway_failures == ctx.dialogues.len() {
        return Err(FatalBackend("every augmentation request failed".into()).into());
    }
    ctx.prepare_run_dir()?;
    write_augmented(&augmented, ctx.run_dir.join(AUGMENTED_FILE))?;
    write_jsonl(&ctx.run_dir.join("augment.warnings.jsonl"), &warnings)?;
    write_jsonl(&ctx.run_dir.join("augment.raw.jsonl"), &raw)?;
    let rationales: Vec<&str> = augmented.iter().flat_map(|a| a.moments.iter().map(|m| m.rationale.as_str())).collect();
    let analysis = analyze_rationales(&rationales);
    std::fs::write(ctx.run_dir.join("rationales.json"), serde_json::to_string_pretty(&analysis)? + "\n")?;
    let moments: usize = augmented.iter().map(|a| a.moments.len()).sum();
    if !warnings.is_empty() || errors > 0 {
        eprintln!("warning: {} moment warnings, {errors} dialogues failed", warnings.len());
    }
    println!("{moments} moments over {} dialogues", augmented.len());
    println!("{}", ctx.run_dir.join(AUGMENTED_FILE).display());
    Ok(())
}
