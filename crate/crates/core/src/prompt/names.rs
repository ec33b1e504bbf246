use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::PromptError;
use crate::data::Dialogue;

const BUNDLED_NAMES: &str = include_str!("../../resources/names.txt");

/// Pool of display names substituted for speaker ids.
#[derive(Debug, Clone)]
pub struct NamePool {
    names: Vec<String>,
    seed: u64,
}

impl NamePool {
    pub fn new(names: Vec<String>, seed: u64) -> Result<Self, PromptError> {
        if names.is_empty() {
            return Err(PromptError::PoolTooSmall(0));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(PromptError::DuplicateName(dup.clone()));
        }
        Ok(Self { names, seed })
    }

    /// The bundled list of 1,000 common first names.
    pub fn bundled(seed: u64) -> Self {
        let names = crate::text::resource_lines(BUNDLED_NAMES).map(str::to_owned).collect();
        Self::new(names, seed).expect("bundled name list is valid")
    }

    /// One name per line.
    pub fn from_file(path: impl AsRef<Path>, seed: u64) -> Result<Self, PromptError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        Self::new(crate::text::resource_lines(&src).map(str::to_owned).collect(), seed)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Display names for speaker 0 and speaker 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpeakerNames([String; 2]);

impl SpeakerNames {
    pub fn new(first: impl Into<String>, second: impl Into<String>) -> Self {
        Self([first.into(), second.into()])
    }

    pub fn get(&self, speaker_id: u8) -> &str {
        &self.0[usize::from(speaker_id.min(1))]
    }

    /// Speaker id whose name matches `name` case-insensitively.
    pub fn speaker_of(&self, name: &str) -> Option<u8> {
        let name = name.trim();
        self.0.iter().position(|n| n.eq_ignore_ascii_case(name)).map(|i| i as u8)
    }

    pub fn as_vec(&self) -> Vec<String> {
        self.0.to_vec()
    }
}

fn pair_seed(dialogue_id: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(dialogue_id.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Picks two distinct names for the dialogue's speakers, deterministically
/// from `(dialogue_id, pool seed)`.
pub fn assign_speaker_names(dialogue: &Dialogue, pool: &NamePool) -> Result<SpeakerNames, PromptError> {
    if pool.names.len() < 2 {
        return Err(PromptError::PoolTooSmall(pool.names.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(&dialogue.dialogue_id, pool.seed));
    let picked = sample(&mut rng, pool.names.len(), 2);
    Ok(SpeakerNames::new(pool.names[picked.index(0)].clone(), pool.names[picked.index(1)].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Turn;

    fn dialogue(id: &str) -> Dialogue {
        Dialogue {
            dialogue_id: id.into(),
            turns: vec![Turn::new(0, "hi")],
            share_turn_index: None,
            gold_image: None,
            gold_objects: Default::default(),
        }
    }

    #[test]
    fn bundled_pool_has_1000_unique_names() {
        let pool = NamePool::bundled(0);
        assert_eq!(pool.names().len(), 1000);
    }

    #[test]
    fn deterministic_for_same_seed() {
        let pool = NamePool::bundled(7);
        let a = assign_speaker_names(&dialogue("x"), &pool).unwrap();
        let b = assign_speaker_names(&dialogue("x"), &pool).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.get(0), a.get(1));
    }

    #[test]
    fn different_seeds_still_give_distinct_pairs() {
        for seed in 0..50 {
            let names = assign_speaker_names(&dialogue("x"), &NamePool::bundled(seed)).unwrap();
            assert_ne!(names.get(0), names.get(1));
        }
    }

    #[test]
    fn pool_of_one_is_too_small() {
        let pool = NamePool::new(vec!["Mary".into()], 0).unwrap();
        assert!(matches!(assign_speaker_names(&dialogue("x"), &pool), Err(PromptError::PoolTooSmall(1))));
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(NamePool::new(vec!["A".into(), "A".into()], 0), Err(PromptError::DuplicateName(_))));
    }

    #[test]
    fn speaker_lookup() {
        let n = SpeakerNames::new("Mary", "James");
        assert_eq!(n.speaker_of("james"), Some(1));
        assert_eq!(n.speaker_of("Olivia"), None);
    }
}
