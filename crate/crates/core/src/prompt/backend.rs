use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::{rng, Error, Result};

/// Sentence encoder output for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEmbedding {
    pub vector: Vec<f32>,
    pub source_text: String,
    pub backend_id: String,
}

impl PromptEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// A sentence encoder mapping prompt text to a fixed-size vector.
pub trait EncoderBackend: Send + Sync {
    /// Stable identifier; part of the cache key.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    /// Whether the backend can be used at all (model files, executables).
    fn check_available(&self) -> Result<()> {
        Ok(())
    }
    fn encode(&self, text: &str) -> Result<Vec<f32>>;
    /// Trainable scalars inside the encoder, when known.
    fn parameter_count(&self) -> Option<u64> {
        None
    }
}

/// NFC, trimmed, internal whitespace collapsed to single spaces.
pub fn canonicalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Hex SHA-256 of `backend_id`, a unit separator, and the canonical text.
pub fn cache_key(backend_id: &str, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(backend_id.as_bytes());
    h.update([0x1f]);
    h.update(canonicalize(text).as_bytes());
    hex::encode(h.finalize())
}

pub fn encode_prompt(text: &str, backend: &dyn EncoderBackend) -> Result<PromptEmbedding> {
    let text = canonicalize(text);
    if text.is_empty() {
        return Err(Error::Invalid("prompt text is empty".into()));
    }
    backend.check_available()?;
    let vector = backend.encode(&text)?;
    if vector.len() != backend.dim() {
        return Err(Error::EncodeFailure(format!(
            "backend {} returned {} values, expected {}",
            backend.id(),
            vector.len(),
            backend.dim()
        )));
    }
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::EncodeFailure(format!("backend {} returned non-finite values", backend.id())));
    }
    Ok(PromptEmbedding {
        vector,
        source_text: text,
        backend_id: backend.id(),
    })
}

/// Deterministic stand-in encoder.
///
/// The canonical text is lower-cased and split into alphanumeric tokens.
/// Features are every token (`u:tok`, weight 1), every adjacent pair
/// (`b:tok tok`, weight 0.5) and the whole text (`s:text`, weight 0.25).
/// Each feature seeds a ChaCha8 stream with `derive(seed, feature)` from
/// which `dim` standard normals are drawn; the weighted sum is
/// L2-normalised. Captions sharing words therefore share direction, and
/// different texts always differ through the whole-text feature.
#[derive(Debug, Clone)]
pub struct HashBackend {
    pub seed: u64,
    pub dim: usize,
}

impl HashBackend {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn features(text: &str) -> Vec<(String, f64)> {
        let text = canonicalize(text).to_lowercase();
        let tokens: Vec<&str> = text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        let mut out: Vec<(String, f64)> = tokens.iter().map(|t| (format!("u:{t}"), 1.0)).collect();
        out.extend(tokens.windows(2).map(|w| (format!("b:{} {}", w[0], w[1]), 0.5)));
        out.push((format!("s:{text}"), 0.25));
        out
    }
}

impl EncoderBackend for HashBackend {
    fn id(&self) -> String {
        format!("hash-v1-s{}-d{}", self.seed, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let mut acc = vec![0.0f64; self.dim];
        for (feature, weight) in Self::features(text) {
            let mut g = rng::stream(rng::derive(self.seed, &feature), 0);
            for (a, v) in acc.iter_mut().zip(rng::normal_vec(&mut g, self.dim)) {
                *a += weight * v;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        Ok(acc.into_iter().map(|v| (v / norm) as f32).collect())
    }

    fn parameter_count(&self) -> Option<u64> {
        Some(0)
    }
}

/// Runs an external program (e.g. a pretrained sentence-transformer
/// wrapper) once per prompt: the text is written to stdin, and stdout must
/// contain `dim` numbers separated by whitespace or commas (a JSON array
/// also works).
#[derive(Debug, Clone)]
pub struct CommandBackend {
    pub program: String,
    pub args: Vec<String>,
    pub dim: usize,
    pub name: String,
}

impl CommandBackend {
    pub fn new(program: impl Into<String>, args: Vec<String>, dim: usize, name: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args,
            dim,
            name: name.into(),
        }
    }
}

impl EncoderBackend for CommandBackend {
    fn id(&self) -> String {
        format!("cmd-{}-d{}", self.name, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn check_available(&self) -> Result<()> {
        let path = std::path::Path::new(&self.program);
        let found = if path.components().count() > 1 {
            path.is_file()
        } else {
            std::env::var_os("PATH")
                .map(|p| std::env::split_paths(&p).any(|d| d.join(&self.program).is_file()))
                .unwrap_or(false)
        };
        if found {
            Ok(())
        } else {
            Err(Error::MissingBackend(format!("program {:?} not found", self.program)))
        }
    }

    fn encode(&self, text: &str) -> Result<Vec<f32>> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingBackend(format!("{}: {e}", self.program)),
                _ => Error::EncodeFailure(format!("spawning {}: {e}", self.program)),
            })?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            stdin
                .write_all(format!("{text}\n").as_bytes())
                .map_err(|e| Error::EncodeFailure(format!("writing prompt: {e}")))?;
        }
        let out = child
            .wait_with_output()
            .map_err(|e| Error::EncodeFailure(format!("waiting for {}: {e}", self.program)))?;
        if !out.status.success() {
            return Err(Error::EncodeFailure(format!(
                "{} exited with {}: {}",
                self.program,
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&out.stdout);
        stdout
            .split(|c: char| c.is_whitespace() || c == ',' || c == '[' || c == ']')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f32>()
                    .map_err(|_| Error::EncodeFailure(format!("unparseable value {t:?} from {}", self.program)))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_backend_is_deterministic() {
        let b = HashBackend::new(7, 64);
        let a = encode_prompt("A young female is speaking English with happy emotion.", &b).unwrap();
        let c = encode_prompt("A young female is speaking English with happy emotion.", &b).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.dim(), 64);
    }

    #[test]
    fn different_texts_differ() {
        let b = HashBackend::new(7, 64);
        let a = b.encode("A man is talking").unwrap();
        let c = b.encode("talking is A man").unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn hash_vector_matches_construction() {
        // Recompute the documented construction for a one-token text:
        // features u:hello (1.0) and s:hello (0.25), no bigrams.
        let b = HashBackend::new(3, 8);
        let mut acc = [0.0f64; 8];
        for (f, w) in [("u:hello", 1.0), ("s:hello", 0.25)] {
            let mut g = rng::stream(rng::derive(3, f), 0);
            for (a, v) in acc.iter_mut().zip(rng::normal_vec(&mut g, 8)) {
                *a += w * v;
            }
        }
        let n = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want: Vec<f32> = acc.iter().map(|v| (v / n) as f32).collect();
        assert_eq!(b.encode("  Hello ").unwrap(), want);
    }

    #[test]
    fn empty_prompt_is_rejected() {
        let b = HashBackend::new(1, 4);
        assert!(matches!(encode_prompt("   ", &b), Err(Error::Invalid(_))));
    }

    #[test]
    fn missing_command_is_distinguished_from_failure() {
        let missing = CommandBackend::new("/nonexistent/encoder", vec![], 4, "x");
        assert!(matches!(encode_prompt("hi", &missing), Err(Error::MissingBackend(_))));
        let failing = CommandBackend::new("/bin/sh", vec!["-c".into(), "exit 3".into()], 4, "x");
        assert!(matches!(encode_prompt("hi", &failing), Err(Error::EncodeFailure(_))));
        let wrong_dim = CommandBackend::new("/bin/sh", vec!["-c".into(), "echo 1 2 3".into()], 4, "x");
        assert!(matches!(encode_prompt("hi", &wrong_dim), Err(Error::EncodeFailure(_))));
        let ok = CommandBackend::new("/bin/sh", vec!["-c".into(), "cat >/dev/null; echo '[0.5, 1, -2, 3]'".into()], 4, "x");
        assert_eq!(encode_prompt("hi", &ok).unwrap().vector, vec![0.5, 1.0, -2.0, 3.0]);
    }

    #[test]
    fn cache_key_separates_backends() {
        assert_ne!(cache_key("a", "text"), cache_key("b", "text"));
        assert_eq!(cache_key("a", " text  here"), cache_key("a", "text here"));
    }
}
