//! Frequency-trained WordPiece vocabulary with greedy longest-match encoding.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const SPECIAL_TOKENS: [&str; 4] = [PAD, UNK, CLS, SEP];

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const SEP_ID: usize = 3;

const CONTINUATION: &str = "##";
/// Punctuation glued to the preceding word when decoding.
const ATTACH_LEFT: &[char] = &['.', ',', '?', '!', ';', ':'];

/// Token with character offsets (end exclusive) into the encoded text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: usize,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_ascii() && !c.is_alphanumeric() && !c.is_whitespace())
}

/// Splits text into words: whitespace separates, every punctuation
/// character is its own word. Returns char offset ranges.
pub fn split_words(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() || is_punct(c) {
            if let Some(s) = start.take() {
                out.push((s, i));
            }
            if is_punct(c) {
                out.push((i, i + 1));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, chars.len()));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from an explicit token list; specials must lead in canonical order.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len()
            || tokens.iter().zip(SPECIAL_TOKENS).any(|(t, s)| t != s)
        {
            return Err(Error::Config(format!(
                "vocabulary must start with {SPECIAL_TOKENS:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Trains a vocabulary of at most `vocab_size` entries from `texts`.
    ///
    /// Specials first, then every character seen (word-initial and `##`
    /// continuation forms, by frequency), then pieces created by repeatedly
    /// merging the most frequent adjacent pair inside words. Ties break
    /// lexicographically, so the result is deterministic.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self> {
        if vocab_size < SPECIAL_TOKENS.len() {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} smaller than the {} special tokens",
                SPECIAL_TOKENS.len()
            )));
        }
        let mut words: BTreeMap<String, u64> = BTreeMap::new();
        for text in texts {
            let chars: Vec<char> = text.chars().collect();
            for (s, e) in split_words(&chars) {
                *words.entry(chars[s..e].iter().collect()).or_default() += 1;
            }
        }
        if words.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }

        // each word as its current piece sequence
        let mut segs: Vec<(Vec<String>, u64)> = words
            .into_iter()
            .map(|(w, f)| {
                let pieces = w
                    .chars()
                    .enumerate()
                    .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
                    .collect();
                (pieces, f)
            })
            .collect();

        let mut char_freq: BTreeMap<&str, u64> = BTreeMap::new();
        for (pieces, f) in &segs {
            for p in pieces {
                *char_freq.entry(p.as_str()).or_default() += f;
            }
        }
        let mut chars: Vec<(&str, u64)> = char_freq.into_iter().collect();
        chars.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        for (c, _) in chars {
            if tokens.len() >= vocab_size {
                break;
            }
            if !SPECIAL_TOKENS.contains(&c) {
                tokens.push(c.to_string());
            }
        }
        let mut known: std::collections::HashSet<String> = tokens.iter().cloned().collect();

        while tokens.len() < vocab_size {
            let mut pairs: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (pieces, f) in &segs {
                for w in pieces.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
                }
            }
            // BTreeMap iteration is lexicographic, so max_by keeps the
            // smallest pair among equal counts when compared with `>`
            let mut best: Option<((&str, &str), u64)> = None;
            for (k, &v) in &pairs {
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((*k, v));
                }
            }
            let Some(((left, right), _)) = best else { break };
            let merged = format!("{left}{}", right.strip_prefix(CONTINUATION).unwrap_or(right));
            let (left, right) = (left.to_string(), right.to_string());
            for (pieces, _) in &mut segs {
                let mut i = 0;
                while i + 1 < pieces.len() {
                    if pieces[i] == left && pieces[i + 1] == right {
                        pieces[i] = merged.clone();
                        pieces.remove(i + 1);
                    }
                    i += 1;
                }
            }
            if known.insert(merged.clone()) {
                tokens.push(merged);
            }
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Greedy longest-match-first pieces of one word; `[UNK]` if any part
    /// cannot be matched.
    fn encode_word(&self, chars: &[char]) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                let sub: String = chars[start..end].iter().collect();
                let key = if start == 0 { sub } else { format!("{CONTINUATION}{sub}") };
                if let Some(id) = self.id(&key) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push((id, start, end));
                    start = end;
                }
                None => return vec![(UNK_ID, 0, chars.len())],
            }
        }
        out
    }

    /// Encodes `text` into pieces with char offsets.
    pub fn encode_with_offsets(&self, text: &str) -> Vec<Token> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        for (ws, we) in split_words(&chars) {
            for (id, s, e) in self.encode_word(&chars[ws..we]) {
                out.push(Token {
                    id,
                    start: ws + s,
                    end: ws + e,
                });
            }
        }
        out
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        self.encode_with_offsets(text).into_iter().map(|t| t.id).collect()
    }

    /// Joins pieces back into text; padding is dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut s = String::new();
        for &id in ids {
            if id == PAD_ID {
                continue;
            }
            let tok = self.token(id).unwrap_or(UNK);
            if let Some(rest) = tok.strip_prefix(CONTINUATION).filter(|r| !r.is_empty()) {
                s.push_str(rest);
                continue;
            }
            let attach = {
                let mut cs = tok.chars();
                matches!((cs.next(), cs.next()), (Some(c), None) if ATTACH_LEFT.contains(&c))
            };
            if !s.is_empty() && !attach {
                s.push(' ');
            }
            s.push_str(tok);
        }
        s
    }

    /// One token per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Parse {
                path: path.to_path_buf(),
                msg,
            },
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}
