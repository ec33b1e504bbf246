//! Seeded synthetic dialogues and annotations shared by the integration
//! tests.
#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;
use std::sync::Arc;

use imageshare_core::data::{AnnotationMap, AnnotationRecord, Dialogue, ImageRef, IntentLabel, ObjectCategory, Turn};
use imageshare_core::echo::gold_echo_rules;
use imageshare_core::llm::{Gateway, StubBackend, StubFallback};
use imageshare_core::pipeline::{Pipeline, PipelineOptions, Profile};
use imageshare_core::prompt::NamePool;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLACES: [&str; 8] = ["beach", "bakery", "museum", "park", "lake", "market", "stadium", "garden"];
const THINGS: [&str; 10] =
    ["cake", "dog", "guitar", "pizza", "bicycle", "teapot", "necklace", "croissant", "camera", "backpack"];
const FEELINGS: [&str; 6] = ["great", "relaxing", "busy", "fun", "tiring", "amazing"];

fn utterance(rng: &mut ChaCha8Rng, i: usize) -> String {
    let place = PLACES.choose(rng).unwrap();
    let thing = THINGS.choose(rng).unwrap();
    let feeling = FEELINGS.choose(rng).unwrap();
    match rng.gen_range(0..5) {
        0 => format!("I went to the {place} yesterday and it was {feeling}."),
        1 => format!("Have you ever seen a {thing} like that at the {place}?"),
        2 => format!("My friend bought a new {thing} last week, turn {i}."),
        3 => format!("That sounds {feeling}, tell me more about the {thing}."),
        _ => format!("We should visit the {place} together sometime, it is {feeling}."),
    }
}

/// `n` dialogues, roughly 60% with a share turn, plus two or three
/// annotators per positive dialogue who agree on the trigger sentence.
pub fn corpus(n: usize, seed: u64) -> (Vec<Dialogue>, AnnotationMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialogues = Vec::with_capacity(n);
    let mut annotations = AnnotationMap::new();
    for i in 0..n {
        let id = format!("dlg-{i:04}");
        let len = rng.gen_range(4..9);
        let first = rng.gen_range(0..2u8);
        let mut turns: Vec<Turn> = (0..len).map(|j| Turn::new((first + j as u8) % 2, utterance(&mut rng, j))).collect();
        // Guarantee both classes appear.
        let positive = i % 5 != 1 && (i % 5 == 0 || rng.gen_bool(0.6));
        if !positive {
            dialogues.push(Dialogue {
                dialogue_id: id,
                turns,
                share_turn_index: None,
                gold_image: None,
                gold_objects: Default::default(),
            });
            continue;
        }
        let t = rng.gen_range(2..len);
        turns[t] = Turn::image(turns[t].speaker_id);
        let objects: BTreeSet<ObjectCategory> =
            (0..rng.gen_range(0..4)).map(|_| ObjectCategory::all().nth(rng.gen_range(0..88)).unwrap()).collect();
        let trigger = turns[rng.gen_range(0..t)].text.clone();
        let thing = THINGS.choose(&mut rng).unwrap();
        let annotators = rng.gen_range(2..4);
        let records = (0..annotators)
            .map(|a| {
                let extra = IntentLabel::ALL[rng.gen_range(0..6)];
                let intents: BTreeSet<IntentLabel> =
                    IntentLabel::ALL.into_iter().filter(|_| rng.gen_bool(0.35)).chain([extra]).collect();
                AnnotationRecord {
                    dialogue_id: id.clone(),
                    annotator_id: format!("ann-{a}"),
                    intents,
                    trigger_sentence: trigger.clone(),
                    image_description: format!("An image of a {thing} seen by annotator {a} in dialogue {i}"),
                    salient_spans: vec![thing.to_string(), format!("span {a}")],
                }
            })
            .collect();
        annotations.insert(id.clone(), records);
        dialogues.push(Dialogue {
            dialogue_id: id.clone(),
            turns,
            share_turn_index: Some(t),
            gold_image: Some(ImageRef::corpus(format!("img-{i:04}"), format!("images/{i:04}.jpg"))),
            gold_objects: objects,
        });
    }
    (dialogues, annotations)
}

pub fn gold_images(dialogues: &[Dialogue]) -> Vec<ImageRef> {
    dialogues.iter().filter_map(|d| d.gold_image.clone()).collect()
}

pub fn options(backend: &str, profile: Profile) -> PipelineOptions {
    let mut o = PipelineOptions::new(backend, NamePool::bundled(11));
    o.profile = profile;
    o
}

/// A gateway whose `backend` answers every rendered prompt with the gold
/// payload, and rejects anything else.
pub fn echo_gateway(
    dialogues: &[Dialogue],
    annotations: &AnnotationMap,
    options: &PipelineOptions,
    backend: &str,
) -> (Gateway, Arc<StubBackend>) {
    let staging = Gateway::default();
    let prompts = Pipeline::new(&staging, options.clone()).render_prompts(dialogues);
    let rules = gold_echo_rules(&prompts, dialogues, annotations);
    let gateway = Gateway::default();
    let stub = gateway.register_stub(backend, rules, StubFallback::Reject).unwrap();
    (gateway, stub)
}
