//! Shared domain vocabulary: tokens, users, KV handles, labels and policies.

use std::fmt;

use serde::{Deserialize, Serialize};

/// A token identifier drawn from a fixed vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

/// An ordered token sequence. Equality is element-wise.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSeq(pub Vec<TokenId>);

impl TokenSeq {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        Self(ids.into_iter().map(TokenId).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn concat(&self, other: &TokenSeq) -> TokenSeq {
        let mut v = Vec::with_capacity(self.len() + other.len());
        v.extend_from_slice(&self.0);
        v.extend_from_slice(&other.0);
        TokenSeq(v)
    }

    pub fn push(&mut self, t: TokenId) {
        self.0.push(t);
    }

    pub fn prefix(&self, len: usize) -> TokenSeq {
        TokenSeq(self.0[..len.min(self.len())].to_vec())
    }

    /// Stable 64-bit digest (FNV-1a over little-endian token ids).
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.0 {
            for b in t.0.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl From<&[TokenId]> for TokenSeq {
    fn from(v: &[TokenId]) -> Self {
        Self(v.to_vec())
    }
}

/// Length of the common prefix of two token slices.
pub fn common_prefix_len(a: &[TokenId], b: &[TokenId]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Opaque user identity as seen by the cache and the detectors.
///
/// Whether a user is benign or an attacker is simulator metadata and lives
/// in [`crate::sim::Principal`], never here.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u64);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum OwnerClass {
    #[default]
    Customer,
    Business,
}

/// Storage tier, fastest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Hbm,
    Dram,
    Ssd,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Hbm, Tier::Dram, Tier::Ssd];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Next slower tier, if any.
    pub fn lower(self) -> Option<Tier> {
        match self {
            Tier::Hbm => Some(Tier::Dram),
            Tier::Dram => Some(Tier::Ssd),
            Tier::Ssd => None,
        }
    }
}

/// Simulated handle to the KV state of a contiguous token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KvHandle {
    pub id: u64,
    pub tier: Tier,
    pub token_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SensitivityLabel {
    Private,
    Public,
    /// Freshly created, classification outstanding. Behaves as `Private`.
    PendingPrivate,
    /// Private visibility plus an audit flag.
    Restricted,
}

impl SensitivityLabel {
    /// The `private_tag` bit: 0 only for `Public`.
    pub fn private_tag(self) -> bool {
        self != SensitivityLabel::Public
    }

    pub fn code(self) -> u8 {
        match self {
            SensitivityLabel::Private => 0,
            SensitivityLabel::Public => 1,
            SensitivityLabel::PendingPrivate => 2,
            SensitivityLabel::Restricted => 3,
        }
    }
}

/// Cache-sharing policy under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyId {
    GlobalShare,
    CachePartition,
    PublicSystemPrompt,
    SafeKV,
}

impl PolicyId {
    pub fn name(self) -> &'static str {
        match self {
            PolicyId::GlobalShare => "GlobalShare",
            PolicyId::CachePartition => "CachePartition",
            PolicyId::PublicSystemPrompt => "PublicSystemPrompt",
            PolicyId::SafeKV => "SafeKV",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deterministic text-to-token mapping.
pub trait Vocabulary: Send + Sync {
    fn vocab_size(&self) -> u32;
    fn encode(&self, text: &str) -> TokenSeq;
    fn decode(&self, tokens: &[TokenId]) -> String;
}

/// Identity byte mapping, `vocab_size = 256`. String prefixes and token
/// prefixes coincide, and `encode(a + b) == encode(a) ++ encode(b)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteVocab;

impl Vocabulary for ByteVocab {
    fn vocab_size(&self) -> u32 {
        256
    }

    fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(text.bytes().map(|b| TokenId(b as u32)).collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        let bytes: Vec<u8> = tokens.iter().map(|t| t.0.min(255) as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

/// Word-level mock vocabulary: whitespace-separated words map to ids through a
/// fixed word list; unknown words hash into the remaining id space.
#[derive(Debug, Clone)]
pub struct WordVocab {
    words: Vec<String>,
    size: u32,
}

impl WordVocab {
    pub fn new(words: Vec<String>, size: u32) -> Self {
        assert!(size as usize > words.len(), "vocab too small for word list");
        Self { words, size }
    }

    fn id_of(&self, w: &str) -> u32 {
        if let Some(i) = self.words.iter().position(|x| x == w) {
            return i as u32;
        }
        let known = self.words.len() as u32;
        let h = TokenSeq(w.bytes().map(|b| TokenId(b as u32)).collect()).digest();
        known + (h % (self.size - known) as u64) as u32
    }
}

impl Vocabulary for WordVocab {
    fn vocab_size(&self) -> u32 {
        self.size
    }

    fn encode(&self, text: &str) -> TokenSeq {
        TokenSeq(text.split_whitespace().map(|w| TokenId(self.id_of(w))).collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|t| {
                self.words
                    .get(t.0 as usize)
                    .cloned()
                    .unwrap_or_else(|| format!("<{}>", t.0))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Tokenize with the default byte-level vocabulary.
pub fn tokenize(text: &str) -> TokenSeq {
    ByteVocab.encode(text)
}

pub fn tokenize_with(text: &str, vocab: &dyn Vocabulary) -> TokenSeq {
    vocab.encode(text)
}

/// Inverse of [`tokenize`] for byte-level sequences.
pub fn detokenize(tokens: &[TokenId]) -> String {
    ByteVocab.decode(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_is_empty_seq() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn byte_identity_mapping() {
        assert_eq!(tokenize("ab"), TokenSeq::from_ids([97, 98]));
    }

    #[test]
    fn concat_example() {
        assert_eq!(tokenize("abc"), tokenize("ab").concat(&tokenize("c")));
    }

    #[test]
    fn word_vocab_is_deterministic() {
        let v = WordVocab::new(vec!["hello".into(), "world".into()], 1000);
        let a = v.encode("hello world foo");
        assert_eq!(a, v.encode("hello  world foo"));
        assert_eq!(&a.0[..2], &[TokenId(0), TokenId(1)]);
        assert!(a.0[2].0 >= 2 && a.0[2].0 < 1000);
        assert_eq!(v.decode(&a.0[..2]), "hello world");
    }

    #[test]
    fn label_private_tag() {
        assert!(!SensitivityLabel::Public.private_tag());
        assert!(SensitivityLabel::PendingPrivate.private_tag());
        assert!(SensitivityLabel::Restricted.private_tag());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn tokenize_is_homomorphic(a in ".{0,40}", b in ".{0,40}") {
            let joined = format!("{a}{b}");
            prop_assert_eq!(tokenize(&joined), tokenize(&a).concat(&tokenize(&b)));
            prop_assert_eq!(detokenize(tokenize(&joined).as_slice()), joined);
        }

        #[test]
        fn equal_seqs_have_equal_digests(v in proptest::collection::vec(0u32..256, 0..64)) {
            let a = TokenSeq::from_ids(v.clone());
            let b = TokenSeq::from_ids(v);
            prop_assert_eq!(a.digest(), b.digest());
        }
    }
}
