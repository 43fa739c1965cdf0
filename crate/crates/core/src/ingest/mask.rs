use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::{document_id, Document, IngestError, SubjectAliases};

pub const MIN_KEY_LEN: usize = 16;

/// Keyed-hash pseudonymizer for subject ids and their in-text aliases.
#[derive(Clone)]
pub struct Masker {
    key: Vec<u8>,
    aliases: SubjectAliases,
}

impl std::fmt::Debug for Masker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Masker")
            .field("key", &"<redacted>")
            .field("aliases", &self.aliases.len())
            .finish()
    }
}

impl Masker {
    pub fn new(key: &[u8], aliases: SubjectAliases) -> Result<Self, IngestError> {
        if key.len() < MIN_KEY_LEN {
            return Err(IngestError::KeyTooShort(key.len()));
        }
        Ok(Masker {
            key: key.to_vec(),
            aliases,
        })
    }

    /// 64 hex characters of HMAC-SHA256(key, subject).
    pub fn token(&self, subject: &str) -> String {
        let mut mac = Hmac::<Sha256>::new_from_slice(&self.key).expect("HMAC accepts any key length");
        mac.update(subject.as_bytes());
        hex::encode(mac.finalize().into_bytes())
    }

    pub fn mask(&self, doc: &Document) -> Document {
        let mut out = doc.clone();
        out.masked = true;
        if doc.meta.subjects.is_empty() || doc.masked {
            return out;
        }
        let mut text = doc.text.clone();
        for subject in &doc.meta.subjects {
            let token = self.token(subject);
            for alias in self.aliases.get(subject).into_iter().flatten() {
                text = replace_word(&text, alias, &token);
            }
        }
        out.meta.subjects = doc.meta.subjects.iter().map(|s| self.token(s)).collect();
        if text != doc.text {
            out.doc_id = document_id(&text, &out.meta.source_uri, out.meta.timestamp);
            out.text = text;
        }
        out
    }
}

/// Replaces occurrences of `word` that are not embedded in a longer
/// alphanumeric run.
fn replace_word(text: &str, word: &str, with: &str) -> String {
    if word.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    let mut prev: Option<char> = None;
    while let Some(pos) = rest.find(word) {
        let before = rest[..pos].chars().next_back().or(prev);
        let after = rest[pos + word.len()..].chars().next();
        let bounded = !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric);
        out.push_str(&rest[..pos]);
        if bounded {
            out.push_str(with);
        } else {
            out.push_str(word);
        }
        prev = word.chars().next_back();
        rest = &rest[pos + word.len()..];
    }
    out.push_str(rest);
    out
}

/// Masks a document's subjects with `key` (no in-text aliases).
pub fn mask_subjects(doc: &Document, key: &[u8]) -> Result<Document, IngestError> {
    Ok(Masker::new(key, SubjectAliases::new())?.mask(doc))
}
