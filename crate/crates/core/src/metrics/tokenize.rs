//! Tokenization schemes, token frequency profiles and the weighted Jaccard
//! index between two profiles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenScheme {
    CharUnigram,
    CharNgram(usize),
    Whitespace,
}

impl TokenScheme {
    /// Character bigrams for unsegmented scripts, whitespace otherwise.
    pub fn default_for(unsegmented: bool) -> Self {
        if unsegmented {
            TokenScheme::CharNgram(2)
        } else {
            TokenScheme::Whitespace
        }
    }
}

impl fmt::Display for TokenScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenScheme::CharUnigram => f.write_str("char_unigram"),
            TokenScheme::CharNgram(n) => write!(f, "char_ngram({n})"),
            TokenScheme::Whitespace => f.write_str("whitespace"),
        }
    }
}

impl FromStr for TokenScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char_unigram" => Ok(TokenScheme::CharUnigram),
            "whitespace" => Ok(TokenScheme::Whitespace),
            _ => s
                .strip_prefix("char_ngram(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(TokenScheme::CharNgram)
                .ok_or_else(|| format!("unknown token scheme {s:?}")),
        }
    }
}

impl Serialize for TokenScheme {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TokenScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Tokenizes NFC-normalized text. `CharNgram(n)` yields every overlapping
/// window of `n` characters; texts shorter than `n` yield nothing.
pub fn tokenize(text: &str, scheme: TokenScheme) -> Vec<String> {
    let text: String = text.nfc().collect();
    match scheme {
        TokenScheme::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        TokenScheme::CharUnigram => text.chars().map(String::from).collect(),
        TokenScheme::CharNgram(n) => {
            let chars: Vec<char> = text.chars().collect();
            if n == 0 || chars.len() < n {
                return Vec::new();
            }
            chars.windows(n).map(|w| w.iter().collect()).collect()
        }
    }
}

/// Relative token frequencies over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenProfile {
    pub weights: BTreeMap<String, f64>,
    pub tokenizer_id: String,
    pub sample_count: usize,
}

impl TokenProfile {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn token_profile<S: AsRef<str>>(texts: &[S], scheme: TokenScheme) -> TokenProfile {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut total = 0u64;
    for t in texts {
        for tok in tokenize(t.as_ref(), scheme) {
            *counts.entry(tok).or_insert(0) += 1;
            total += 1;
        }
    }
    let weights = counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / total as f64))
        .collect();
    TokenProfile {
        weights,
        tokenizer_id: scheme.to_string(),
        sample_count: texts.len(),
    }
}

/// `sum_t min(p_t, q_t) / sum_t max(p_t, q_t)` over the union of tokens.
/// Two empty profiles score 1.
pub fn weighted_jaccard(p: &TokenProfile, q: &TokenProfile) -> Result<f64, MetricError> {
    if p.tokenizer_id != q.tokenizer_id {
        return Err(MetricError::TokenizerMismatch(p.tokenizer_id.clone(), q.tokenizer_id.clone()));
    }
    if p.is_empty() && q.is_empty() {
        return Ok(1.0);
    }
    let keys: BTreeSet<&String> = p.weights.keys().chain(q.weights.keys()).collect();
    let (mut lo, mut hi) = (0.0, 0.0);
    for k in keys {
        let a = p.weights.get(k).copied().unwrap_or(0.0);
        let b = q.weights.get(k).copied().unwrap_or(0.0);
        lo += a.min(b);
        hi += a.max(b);
    }
    Ok(if hi == 0.0 { 1.0 } else { lo / hi })
}

/// CSV rows `token,gold_weight,synth_weight`, most frequent gold tokens first.
pub fn distribution_csv(gold: &TokenProfile, synth: &TokenProfile) -> String {
    let keys: BTreeSet<&String> = gold.weights.keys().chain(synth.weights.keys()).collect();
    let mut rows: Vec<(&String, f64, f64)> = keys
        .into_iter()
        .map(|k| {
            (
                k,
                gold.weights.get(k).copied().unwrap_or(0.0),
                synth.weights.get(k).copied().unwrap_or(0.0),
            )
        })
        .collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(b.0)));
    let mut out = String::from("token,gold_weight,synth_weight\n");
    for (tok, g, s) in rows {
        let escaped = if tok.contains([',', '"', '\n']) {
            format!("\"{}\"", tok.replace('"', "\"\""))
        } else {
            tok.clone()
        };
        out.push_str(&format!("{escaped},{g},{s}\n"));
    }
    out
}
