//! Byte-level BPE tokenizer compatible with the published CLIP vocabulary
//! (`bpe_simple_vocab_16e6.txt[.gz]`).
//!
//! The vocabulary is derived from the merges file: 256 byte symbols, the same
//! symbols with an end-of-word marker, one entry per merge, then the start
//! and end specials. Text is whitespace-collapsed and lowercased before
//! pre-tokenization.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Mutex;

use regex::Regex;

use crate::error::{Error, Result};

pub const CONTEXT_LENGTH: usize = 77;
pub const PAD_ID: u32 = 0;
const START: &str = "<|startoftext|>";
const END: &str = "<|endoftext|>";
const EOW: &str = "</w>";
/// Merges used from the published file: 49152 - 256 - 2.
const MAX_MERGES: usize = 48_894;

/// Padded token ids for one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<u32>,
    /// Index of the end-of-text token.
    eot_index: usize,
}

impl TokenSequence {
    /// Validates bracketing and padding against `tokenizer`'s specials.
    pub fn new(ids: Vec<u32>, start_id: u32, end_id: u32, context_length: usize) -> Result<Self> {
        if ids.len() > context_length {
            return Err(Error::Input(format!(
                "token sequence has {} ids, context limit is {context_length}",
                ids.len()
            )));
        }
        if ids.first() != Some(&start_id) {
            return Err(Error::Input("token sequence must begin with the start-of-text id".into()));
        }
        let eot_index = ids
            .iter()
            .position(|&i| i == end_id)
            .ok_or_else(|| Error::Input("token sequence has no end-of-text id".into()))?;
        if ids[eot_index + 1..].iter().any(|&i| i != PAD_ID) {
            return Err(Error::Input("only padding may follow the end-of-text id".into()));
        }
        let mut ids = ids;
        ids.resize(context_length, PAD_ID);
        Ok(Self { ids, eot_index })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn eot_index(&self) -> usize {
        self.eot_index
    }

    /// Ids strictly between start and end.
    pub fn content(&self) -> &[u32] {
        &self.ids[1..self.eot_index]
    }
}

pub struct Tokenizer {
    encoder: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    pattern: Regex,
    context_length: usize,
    cache: Mutex<HashMap<String, Vec<u32>>>,
}

impl std::fmt::Debug for Tokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tokenizer")
            .field("vocab_size", &self.vocab_size())
            .field("context_length", &self.context_length)
            .finish()
    }
}

/// GPT-2 style reversible byte → printable-char table.
fn bytes_to_unicode() -> [char; 256] {
    let mut bs: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    let mut cs = bs.clone();
    let mut n = 0;
    for b in 0..256u32 {
        if !bs.contains(&b) {
            bs.push(b);
            cs.push(256 + n);
            n += 1;
        }
    }
    let mut table = ['\0'; 256];
    for (b, c) in bs.iter().zip(&cs) {
        table[*b as usize] = char::from_u32(*c).expect("valid code point");
    }
    table
}

/// Order in which byte symbols enter the vocabulary.
fn byte_symbol_order() -> Vec<u32> {
    let mut bs: Vec<u32> = (b'!' as u32..=b'~' as u32)
        .chain(0xA1..=0xAC)
        .chain(0xAE..=0xFF)
        .collect();
    for b in 0..256u32 {
        if !bs.contains(&b) {
            bs.push(b);
        }
    }
    bs
}

impl Tokenizer {
    /// Builds a tokenizer from merges text (first line is a version header).
    pub fn from_merges(text: &str, context_length: usize) -> std::result::Result<Self, String> {
        let byte_encoder = bytes_to_unicode();
        let mut vocab: Vec<String> = byte_symbol_order()
            .into_iter()
            .map(|b| byte_encoder[b as usize].to_string())
            .collect();
        let with_eow: Vec<String> = vocab.iter().map(|v| format!("{v}{EOW}")).collect();
        vocab.extend(with_eow);

        // Mirrors the reference loader: every line in the merge window adds a
        // vocabulary entry (an empty trailing line adds an unreachable empty
        // token), and later duplicates win both the id and the rank.
        let mut ranks = HashMap::new();
        for (i, line) in text.split('\n').skip(1).take(MAX_MERGES).enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                vocab.push(String::new());
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(format!("merge line {} is malformed: `{line}`", i + 2));
            };
            ranks.insert((a.to_string(), b.to_string()), i);
            vocab.push(format!("{a}{b}"));
        }
        vocab.push(START.to_string());
        vocab.push(END.to_string());
        let encoder = vocab.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        let pattern = Regex::new(
            r"(?i)<\|startoftext\|>|<\|endoftext\|>|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+",
        )
        .expect("static pattern compiles");
        Ok(Self {
            encoder,
            ranks,
            byte_encoder,
            pattern,
            context_length,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Loads a merges file, transparently gunzipping `*.gz`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = if path.extension().is_some_and(|e| e == "gz") {
            let mut s = String::new();
            flate2::read::GzDecoder::new(&bytes[..])
                .read_to_string(&mut s)
                .map_err(|e| Error::asset(path, format!("gzip decode failed: {e}")))?;
            s
        } else {
            String::from_utf8(bytes).map_err(|_| Error::asset(path, "vocabulary is not UTF-8"))?
        };
        Self::from_merges(&text, CONTEXT_LENGTH).map_err(|m| Error::asset(path, m))
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.len()
    }

    pub fn start_id(&self) -> u32 {
        self.encoder[START]
    }

    pub fn end_id(&self) -> u32 {
        self.encoder[END]
    }

    pub fn context_length(&self) -> usize {
        self.context_length
    }

    fn bpe(&self, token: &str) -> Vec<String> {
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str(EOW);
        }
        while word.len() > 1 {
            let best = word
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, first, second)) = best else { break };
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(word[i].clone());
                    i += 1;
                }
            }
            word = merged;
        }
        word
    }

    /// Content ids without specials or padding.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut ids = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let piece = m.as_str();
            if let Some(&id) = self.encoder.get(piece).filter(|_| piece == START || piece == END) {
                ids.push(id);
                continue;
            }
            if let Some(hit) = self.cache.lock().expect("cache lock").get(piece) {
                ids.extend_from_slice(hit);
                continue;
            }
            let mapped: String = piece.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            let piece_ids: Vec<u32> = self
                .bpe(&mapped)
                .iter()
                .map(|sym| *self.encoder.get(sym).expect("every BPE symbol is in the vocabulary"))
                .collect();
            ids.extend_from_slice(&piece_ids);
            self.cache.lock().expect("cache lock").insert(piece.to_string(), piece_ids);
        }
        ids
    }

    /// Bracketed, padded token sequence. Errors when the prompt does not fit.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let content = self.encode(text);
        if content.len() + 2 > self.context_length {
            return Err(Error::Input(format!(
                "prompt tokenizes to {} tokens plus 2 specials, context limit is {}",
                content.len(),
                self.context_length
            )));
        }
        let mut ids = Vec::with_capacity(self.context_length);
        ids.push(self.start_id());
        ids.extend(content);
        ids.push(self.end_id());
        TokenSequence::new(ids, self.start_id(), self.end_id(), self.context_length)
    }
}

/// Merges text that spells each word of `words` by left-to-right pair
/// merges. Used to build small self-contained vocabularies.
pub fn merges_for_words<'a>(words: impl IntoIterator<Item = &'a str>) -> String {
    let enc = bytes_to_unicode();
    let mut lines = vec!["#version: 0.2".to_string()];
    let mut seen = std::collections::HashSet::new();
    for w in words {
        let syms: Vec<String> = w.to_lowercase().bytes().map(|b| enc[b as usize].to_string()).collect();
        if syms.len() < 2 {
            continue;
        }
        let mut acc = syms[0].clone();
        for (i, s) in syms.iter().enumerate().skip(1) {
            let right = if i + 1 == syms.len() { format!("{s}{EOW}") } else { s.clone() };
            let line = format!("{acc} {right}");
            if seen.insert(line.clone()) {
                lines.push(line);
            }
            acc.push_str(&right);
        }
    }
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Tokenizer {
        Tokenizer::from_merges(&merges_for_words(["good", "bad", "photo"]), CONTEXT_LENGTH).unwrap()
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let t = bytes_to_unicode();
        let set: std::collections::HashSet<char> = t.iter().copied().collect();
        assert_eq!(set.len(), 256);
        assert_eq!(t[b'a' as usize], 'a');
        assert_eq!(t[b' ' as usize], '\u{120}');
    }

    #[test]
    fn empty_text() {
        let tok = tiny();
        let seq = tok.tokenize("").unwrap();
        assert_eq!(&seq.ids()[..2], &[tok.start_id(), tok.end_id()]);
        assert!(seq.ids()[2..].iter().all(|&i| i == PAD_ID));
        assert_eq!(seq.ids().len(), CONTEXT_LENGTH);
        assert_eq!(seq.eot_index(), 1);
    }

    #[test]
    fn whole_words_merge_to_single_tokens() {
        let tok = tiny();
        let seq = tok.tokenize("Good   photo.").unwrap();
        // good</w>, photo</w>, .</w>
        assert_eq!(seq.content().len(), 3);
        assert_eq!(seq.content(), tok.tokenize("good photo.").unwrap().content());
        assert_eq!(seq, tok.tokenize("Good   photo.").unwrap());
        // the trailing empty merge line still claims an (unreachable) id
        assert_eq!(tok.vocab_size(), 512 + 3 + 2 + 4 + 2 + 1);
    }

    #[test]
    fn unknown_words_fall_back_to_bytes() {
        let tok = tiny();
        let seq = tok.tokenize("zebra").unwrap();
        assert_eq!(seq.content().len(), 5);
    }

    #[test]
    fn over_length_is_an_error() {
        let tok = tiny();
        let long = "x ".repeat(80);
        assert!(matches!(tok.tokenize(&long), Err(Error::Input(_))));
        assert!(TokenSequence::new(vec![1; 78], 1, 2, 77).is_err());
        assert!(TokenSequence::new(vec![5, 2], 1, 2, 77).is_err());
        assert!(TokenSequence::new(vec![1, 2, 3], 1, 2, 77).is_err());
    }

    /// Cross-check against the published vocabulary when it is available
    /// locally (`LOOKFEEL_VOCAB=/path/to/bpe_simple_vocab_16e6.txt.gz`).
    #[test]
    fn published_vocabulary_good_photo() {
        let Ok(path) = std::env::var("LOOKFEEL_VOCAB") else {
            eprintln!("LOOKFEEL_VOCAB not set; skipping published-vocabulary check");
            return;
        };
        let tok = Tokenizer::load(path).unwrap();
        assert_eq!(tok.vocab_size(), 49_408);
        let seq = tok.tokenize("Good photo.").unwrap();
        assert_eq!(&seq.ids()[..5], &[49_406, 886, 1_125, 269, 49_407]);
    }
}
