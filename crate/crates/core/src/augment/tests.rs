use std::sync::Arc;

use super::*;
use crate::data::{ImageRef, Turn};
use crate::llm::{StubBackend, StubFallback, StubMatch};
use crate::retrieval::{EmbeddingBackend, TableEmbedder};

fn dialogue() -> Dialogue {
    Dialogue {
        dialogue_id: "aug-1".into(),
        turns: vec![
            Turn::new(0, "I baked a chocolate cake today."),
            Turn::new(1, "Wow, how did it turn out?"),
            Turn::new(0, "Pretty good, my kids loved it."),
            Turn::new(1, "I went hiking this weekend."),
        ],
        share_turn_index: None,
        gold_image: None,
        gold_objects: Default::default(),
    }
}

fn options() -> AugmentOptions {
    AugmentOptions::new("stub", NamePool::new(vec!["Ava".into(), "Ben".into()], 1).unwrap())
}

fn names_for(d: &Dialogue) -> crate::prompt::SpeakerNames {
    assign_speaker_names(d, &options().names).unwrap()
}

fn corpus() -> (Arc<dyn EmbeddingBackend>, Vec<ImageRef>) {
    let t = TableEmbedder::new("emb", 2)
        .with_image("cake.jpg", vec![1.0, 0.0])
        .with_image("trail.jpg", vec![0.0, 1.0])
        .with_text("An image of a chocolate cake", vec![1.0, 0.1])
        .with_text("An image of a mountain trail", vec![0.1, 1.0]);
    (Arc::new(t), vec![ImageRef::corpus("cake.jpg", "c/cake.jpg"), ImageRef::corpus("trail.jpg", "c/trail.jpg")])
}

fn gateway(moments: String) -> Gateway {
    let gw = Gateway::default();
    let stub = StubBackend::new("stub")
        .with_rule(StubMatch::Contains("select all utterances".into()), moments)
        .with_rule(StubMatch::Contains("hiking".into()), "An image of a mountain trail")
        .with_rule(StubMatch::Contains("Pretty good, my kids loved it.".into()), "An image of a chocolate cake")
        .with_fallback(StubFallback::Reject);
    gw.register(Arc::new(stub)).unwrap();
    gw
}

#[test]
fn one_valid_moment_is_fully_populated() {
    let d = dialogue();
    let n = names_for(&d);
    let answer = format!("Pretty good, my kids loved it. | {} | To show the cake", n.get(0));
    let gw = gateway(answer);
    let (emb, images) = corpus();
    let provider = corpus_provider(&images, emb).unwrap();
    let out = augment_dialogue(&d, &gw, &provider, &options()).unwrap();
    assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    let m = &out.dialogue.moments[0];
    assert_eq!((m.turn_index, m.description.as_str()), (2, "An image of a chocolate cake"));
    assert_eq!(m.image.as_ref().unwrap().id, "cake.jpg");
    assert_eq!(out.raw.len(), 2);
    assert!(out.dialogue.validate().is_ok());
}

#[test]
fn zero_lines_gives_no_moments() {
    let gw = gateway(String::new());
    let (emb, images) = corpus();
    let provider = corpus_provider(&images, emb).unwrap();
    let out = augment_dialogue(&dialogue(), &gw, &provider, &options()).unwrap();
    assert!(out.dialogue.moments.is_empty());
}

struct FailOn(&'static str);

impl ImageProvider for FailOn {
    fn provider_id(&self) -> &str {
        "fail-on"
    }

    fn acquire(&self, description: &str) -> Result<ImageRef, ProviderError> {
        if description.contains(self.0) {
            Err(ProviderError("generation failed".into()))
        } else {
            Ok(ImageRef::corpus("ok", "ok.jpg"))
        }
    }
}

#[test]
fn provider_failure_flags_one_moment() {
    let d = dialogue();
    let n = names_for(&d);
    let answer = format!(
        "1. Pretty good, my kids loved it. | {} | To show the cake\n2. I went hiking this weekend. | {} | To share the view",
        n.get(0),
        n.get(0)
    );
    let gw = gateway(answer);
    let out = augment_dialogue(&d, &gw, &FailOn("trail"), &options()).unwrap();
    let m = &out.dialogue.moments;
    assert_eq!(m.len(), 2);
    assert!(m[0].image.is_some() && m[0].flag.is_none());
    assert!(m[1].image.is_none());
    assert!(m[1].flag.as_deref().unwrap().starts_with("provider-failed"));
    assert_eq!(out.warnings.len(), 1);
}

#[test]
fn rerun_from_cache_is_identical() {
    let d = dialogue();
    let n = names_for(&d);
    let gw = gateway(format!("Pretty good, my kids loved it. | {} | To show the cake", n.get(0)));
    let (emb, images) = corpus();
    let provider = corpus_provider(&images, emb).unwrap();
    let first = augment_dialogue(&d, &gw, &provider, &options()).unwrap();
    let second = augment_dialogue(&d, &gw, &provider, &options()).unwrap();
    assert_eq!(first.dialogue, second.dialogue);
}

#[test]
fn empty_inputs() {
    let (emb, _) = corpus();
    assert!(matches!(corpus_provider(&[], emb), Err(AugmentError::EmptyCorpus)));
    let mut d = dialogue();
    d.turns.clear();
    let gw = gateway(String::new());
    assert_eq!(
        augment_dialogue(&d, &gw, &FailOn("x"), &options()).unwrap_err(),
        AugmentError::EmptyDialogue("aug-1".into())
    );
}

#[test]
fn corpus_ties_pick_lower_id() {
    let t = TableEmbedder::new("tie", 2)
        .with_image("b", vec![1.0, 0.0])
        .with_image("a", vec![1.0, 0.0])
        .with_text("q", vec![1.0, 0.0]);
    let p = corpus_provider(&[ImageRef::corpus("b", "b"), ImageRef::corpus("a", "a")], Arc::new(t)).unwrap();
    assert_eq!(p.acquire("q").unwrap().id, "a");
}
