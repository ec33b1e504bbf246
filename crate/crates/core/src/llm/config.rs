use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Backend id used by [`default_config`] until a caller picks one.
pub const DEFAULT_BACKEND: &str = "default";

/// The request kinds that get their own generation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Augment,
    ObjectExtract,
}

/// Sampling parameters for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
    pub frequency_penalty: f64,
    pub presence_penalty: f64,
    pub stop: Vec<String>,
    pub backend_id: String,
}

/// Per-stage defaults. The decision stage decodes greedily and stops at a
/// blank line; the description stage samples. Augmentation and object
/// extraction are decision-like and reuse the decision settings.
pub fn default_config(stage: Stage) -> GenConfig {
    let greedy = GenConfig {
        max_tokens: 1024,
        temperature: 0.0,
        top_p: 1.0,
        frequency_penalty: 0.0,
        presence_penalty: 0.0,
        stop: vec!["\n\n".to_owned()],
        backend_id: DEFAULT_BACKEND.to_owned(),
    };
    match stage {
        Stage::Stage1 | Stage::Augment | Stage::ObjectExtract => greedy,
        Stage::Stage2 => GenConfig { temperature: 0.9, top_p: 0.95, presence_penalty: 0.4, stop: Vec::new(), ..greedy },
    }
}

impl GenConfig {
    pub fn with_backend(mut self, backend_id: impl Into<String>) -> Self {
        self.backend_id = backend_id.into();
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let problem = if self.max_tokens == 0 {
            Some("max_tokens must be > 0")
        } else if self.temperature.is_nan() || self.temperature < 0.0 {
            Some("temperature must be >= 0")
        } else if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            Some("top_p must be in (0, 1]")
        } else {
            None
        };
        match problem {
            Some(p) => Err(GatewayError::InvalidConfig(p.to_owned())),
            None => Ok(()),
        }
    }
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    backend_id: &'a str,
    prompt: &'a str,
    config: &'a GenConfig,
}

/// Stable content hash of a request: prompt text, sampling settings and
/// backend id.
pub fn request_fingerprint(prompt: &str, cfg: &GenConfig) -> String {
    let canonical = serde_json::to_vec(&FingerprintInput { backend_id: &cfg.backend_id, prompt, config: cfg })
        .expect("serializable");
    hex::encode(Sha256::digest(&canonical))
}

pub(crate) fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage1_is_greedy_with_blank_line_stop() {
        let c = default_config(Stage::Stage1);
        assert_eq!(c.max_tokens, 1024);
        assert_eq!(c.temperature, 0.0);
        assert_eq!(c.frequency_penalty, 0.0);
        assert_eq!(c.presence_penalty, 0.0);
        assert_eq!(c.top_p, 1.0);
        assert_eq!(c.stop, vec!["\n\n".to_owned()]);
    }

    #[test]
    fn stage2_samples() {
        let c = default_config(Stage::Stage2);
        assert_eq!(c.max_tokens, 1024);
        assert_eq!(c.temperature, 0.9);
        assert_eq!(c.frequency_penalty, 0.0);
        assert_eq!(c.presence_penalty, 0.4);
        assert_eq!(c.top_p, 0.95);
        assert!(c.stop.is_empty());
    }

    #[test]
    fn augment_and_extraction_reuse_stage1() {
        assert_eq!(default_config(Stage::Augment), default_config(Stage::Stage1));
        assert_eq!(default_config(Stage::ObjectExtract), default_config(Stage::Stage1));
    }

    #[test]
    fn validation() {
        assert!(default_config(Stage::Stage2).validate().is_ok());
        let mut c = default_config(Stage::Stage1);
        c.top_p = 0.0;
        assert!(c.validate().is_err());
        c.top_p = 1.0;
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.max_tokens = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fingerprint_depends_on_every_input() {
        let c = default_config(Stage::Stage1);
        let f = request_fingerprint("p", &c);
        assert_eq!(f, request_fingerprint("p", &c));
        assert_eq!(f.len(), 64);
        assert_ne!(f, request_fingerprint("q", &c));
        assert_ne!(f, request_fingerprint("p", &c.clone().with_backend("other")));
        assert_ne!(f, request_fingerprint("p", &default_config(Stage::Stage2)));
    }
}
