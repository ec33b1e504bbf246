//! JSONL loaders and writers for dialogues, annotations and augmented
//! dialogues.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::intent::IntentLabel;
use super::types::{AnnotationRecord, Dialogue};
use crate::augment::AugmentedDialogue;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record at `{field}`: {message}")]
    MalformedRecord { line: usize, field: String, message: String },
    #[error("line {line}: duplicate dialogue id `{id}`")]
    DuplicateDialogueId { line: usize, id: String },
    #[error("line {line}: unknown intent label `{label}`")]
    UnknownIntentLabel { line: usize, label: String },
    #[error("line {line}: image description must start with \"An image of\" or \"A photo of\": `{description}`")]
    PrefixViolation { line: usize, description: String },
    #[error("dialogue `{dialogue_id}`, annotator `{annotator_id}`: trigger sentence not found before the share turn")]
    TriggerNotFound { dialogue_id: String, annotator_id: String },
    #[error("annotation for unknown dialogue `{0}`")]
    UnknownDialogue(String),
    #[error("dialogue `{dialogue_id}` failed validation: {message}")]
    Validation { dialogue_id: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_owned(), source }
}

/// Iterates the non-blank lines of a JSONL file with 1-based line numbers,
/// deserializing each and reporting the failing field path.
fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let de = &mut serde_json::Deserializer::from_str(&line);
        let value = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            DataError::MalformedRecord {
                line: lineno,
                field: if field == "." { "record".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })?;
        out.push((lineno, value));
    }
    Ok(out)
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| io_err(path)(e.into()))?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn check_dialogue(line: usize, d: &Dialogue, seen: &mut HashSet<String>) -> Result<(), DataError> {
    d.validate().map_err(|v| DataError::MalformedRecord { line, field: v.field, message: v.message })?;
    if !seen.insert(d.dialogue_id.clone()) {
        return Err(DataError::DuplicateDialogueId { line, id: d.dialogue_id.clone() });
    }
    Ok(())
}

/// Loads a dialogue JSONL file, validating every record. Dialogues are
/// returned in file order.
pub fn load_photochat(path: impl AsRef<Path>) -> Result<Vec<Dialogue>, DataError> {
    let mut seen = HashSet::new();
    read_jsonl::<Dialogue>(path.as_ref())?
        .into_iter()
        .map(|(line, d)| check_dialogue(line, &d, &mut seen).map(|_| d))
        .collect()
}

pub fn write_dialogues(dialogues: &[Dialogue], path: impl AsRef<Path>) -> Result<(), DataError> {
    write_jsonl(path.as_ref(), dialogues)
}

#[derive(Deserialize)]
struct RawAnnotation {
    dialogue_id: String,
    annotator_id: String,
    intents: Vec<String>,
    trigger_sentence: String,
    image_description: String,
    #[serde(default)]
    salient_spans: Vec<String>,
}

/// Annotation records grouped by dialogue id, in file order within a group.
pub type AnnotationMap = BTreeMap<String, Vec<AnnotationRecord>>;

/// Loads an annotation JSONL file. Intent labels and the description prefix
/// are validated; trigger sentences need the dialogues, see
/// [`check_annotations`].
pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationMap, DataError> {
    let mut map = AnnotationMap::new();
    for (line, raw) in read_jsonl::<RawAnnotation>(path.as_ref())? {
        if raw.intents.is_empty() {
            return Err(DataError::MalformedRecord {
                line,
                field: "intents".into(),
                message: "must be nonempty".into(),
            });
        }
        let intents = raw
            .intents
            .iter()
            .map(|s| IntentLabel::from_label(s).ok_or_else(|| DataError::UnknownIntentLabel { line, label: s.clone() }))
            .collect::<Result<_, _>>()?;
        let record = AnnotationRecord {
            dialogue_id: raw.dialogue_id,
            annotator_id: raw.annotator_id,
            intents,
            trigger_sentence: raw.trigger_sentence,
            image_description: raw.image_description,
            salient_spans: raw.salient_spans,
        };
        if !record.has_valid_prefix() {
            return Err(DataError::PrefixViolation { line, description: record.image_description });
        }
        map.entry(record.dialogue_id.clone()).or_default().push(record);
    }
    Ok(map)
}

pub fn write_annotations<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    let records: Vec<_> = records.into_iter().collect();
    write_jsonl(path.as_ref(), &records)
}

/// Cross-checks annotations against their dialogues: every annotated
/// dialogue must exist and every trigger sentence must occur before the
/// share turn.
pub fn check_annotations(annotations: &AnnotationMap, dialogues: &[Dialogue]) -> Result<(), DataError> {
    for (id, records) in annotations {
        let dialogue =
            dialogues.iter().find(|d| &d.dialogue_id == id).ok_or_else(|| DataError::UnknownDialogue(id.clone()))?;
        for r in records {
            if !r.trigger_in(dialogue) {
                return Err(DataError::TriggerNotFound {
                    dialogue_id: id.clone(),
                    annotator_id: r.annotator_id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Writes augmented dialogues as JSONL after validating each one.
pub fn write_augmented(dialogues: &[AugmentedDialogue], path: impl AsRef<Path>) -> Result<(), DataError> {
    for d in dialogues {
        d.validate()
            .map_err(|v| DataError::Validation { dialogue_id: d.base.dialogue_id.clone(), message: v.to_string() })?;
    }
    write_jsonl(path.as_ref(), dialogues)
}

pub fn load_augmented(path: impl AsRef<Path>) -> Result<Vec<AugmentedDialogue>, DataError> {
    let mut seen = HashSet::new();
    read_jsonl::<AugmentedDialogue>(path.as_ref())?
        .into_iter()
        .map(|(line, d)| {
            check_dialogue(line, &d.base, &mut seen)?;
            d.validate().map_err(|v| DataError::MalformedRecord { line, field: v.field, message: v.message })?;
            Ok(d)
        })
        .collect()
}
