//! Domain types and dataset IO.

mod intent;
mod io;
mod objects;
mod types;

pub use intent::{IntentLabel, UnknownIntent};
pub use io::{
    check_annotations, load_annotations, load_augmented, load_photochat, write_annotations, write_augmented,
    write_dialogues, AnnotationMap, DataError,
};
pub use objects::{object_set, ObjectCategory, ObjectSet};
pub use types::{AnnotationRecord, Decision, Dialogue, FieldViolation, ImageRef, ImageSource, Turn};
