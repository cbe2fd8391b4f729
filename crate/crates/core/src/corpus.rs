//! Corpus ingestion and text preprocessing.
//!
//! Raw corpora are JSON Lines with one image/report pair per line. Reports are
//! lowercased, split into sentences on `.`, `?` and `!`, and every token that
//! contains a non-alphabetic character is dropped. Vocabularies keep the most
//! frequent words; tags come from the corpus or, failing that, from tf-idf.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// One line of a raw corpus file.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub report: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Parse(format!("unknown split `{s}` (train|val|test)"))),
        }
    }
}

/// A preprocessed record: tokenized sentences as strings, final tag list and split.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProcessedRecord {
    pub id: String,
    pub split: SplitName,
    pub sentences: Vec<Vec<String>>,
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub report: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureRef {
    Features(PathBuf),
    Image(PathBuf),
}

/// A training/evaluation document with sentences encoded as word ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub feature_ref: Option<FeatureRef>,
    pub sentences: Vec<Vec<usize>>,
    pub tags: Vec<String>,
    pub raw_text: String,
}

impl Document {
    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }
}

fn is_sentence_end(chars: &[char], i: usize) -> bool {
    match chars[i] {
        '?' | '!' => true,
        // a period between digits is a decimal point, not a boundary
        '.' => {
            let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
            let next_digit = chars.get(i + 1).is_some_and(|c| c.is_ascii_digit());
            !(prev_digit && next_digit)
        }
        _ => false,
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, ',' | ';' | ':' | '(' | ')' | '[' | ']' | '{' | '}' | '"')
}

/// Lowercased alphabetic tokens grouped by sentence. Empty sentences are dropped.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..=chars.len() {
        if i == chars.len() || is_sentence_end(&chars, i) {
            let piece: String = chars[start..i].iter().collect();
            let tokens: Vec<String> = piece
                .split(is_separator)
                .filter(|t| !t.is_empty())
                .map(str::to_lowercase)
                .filter(|t| t.chars().all(char::is_alphabetic))
                .collect();
            if !tokens.is_empty() {
                sentences.push(tokens);
            }
            start = i + 1;
        }
    }
    sentences
}

/// Word vocabulary with ids 0..4 reserved for PAD, START, END and UNK.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if RESERVED.contains(&tok.as_str()) || token_to_id.contains_key(&tok) {
                return Err(Error::Domain(format!("duplicate or reserved token `{tok}`")));
            }
            token_to_id.insert(tok.clone(), id_to_token.len());
            id_to_token.push(tok);
        }
        Ok(Vocabulary {
            id_to_token,
            token_to_id,
        })
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == RESERVED.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.id_to_token.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.id_to_token[RESERVED.len()..]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), self.words())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tokens(read_lines(path.as_ref())?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocabReport {
    pub vocab: Vocabulary,
    /// Kept-token occurrences over all occurrences.
    pub coverage: f64,
    pub unique_words: usize,
}

fn ranked_counts<'a>(tokens: impl Iterator<Item = &'a String>) -> Vec<(&'a String, usize)> {
    let mut counts: HashMap<&String, usize> = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
}

/// Keeps the `max_size` most frequent tokens (count desc, then lexicographic).
pub fn build_vocab(documents: &[Vec<Vec<String>>], max_size: usize) -> Result<VocabReport> {
    if max_size == 0 {
        return Err(Error::Domain("vocabulary max_size must be at least 1".into()));
    }
    let ranked = ranked_counts(documents.iter().flatten().flatten());
    if ranked.is_empty() {
        return Err(Error::Domain("cannot build a vocabulary from an empty corpus".into()));
    }
    let total: usize = ranked.iter().map(|(_, c)| c).sum();
    let kept = &ranked[..max_size.min(ranked.len())];
    let covered: usize = kept.iter().map(|(_, c)| c).sum();
    Ok(VocabReport {
        vocab: Vocabulary::from_tokens(kept.iter().map(|(t, _)| (*t).clone()))?,
        coverage: covered as f64 / total as f64,
        unique_words: ranked.len(),
    })
}

/// Tag string to tag id bijection.
#[derive(Clone, Debug, PartialEq)]
pub struct TagVocabulary {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagVocabulary {
    pub fn new(tags: Vec<String>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Domain("tag vocabulary needs at least one tag".into()));
        }
        let mut index = HashMap::new();
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Domain(format!("duplicate tag `{t}`")));
            }
        }
        Ok(TagVocabulary { tags, index })
    }

    /// Sorted union of all tags appearing in `tag_lists`.
    pub fn from_tag_lists<'a>(tag_lists: impl IntoIterator<Item = &'a Vec<String>>) -> Result<Self> {
        let set: BTreeSet<&String> = tag_lists.into_iter().flatten().collect();
        Self::new(set.into_iter().cloned().collect())
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn tag(&self, id: usize) -> &str {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    /// Binary indicator vector over the vocabulary; unknown tags are ignored.
    pub fn indicator(&self, tags: &[String]) -> Vec<f64> {
        let mut l = vec![0.0; self.len()];
        for t in tags {
            if let Some(i) = self.id(t) {
                l[i] = 1.0;
            }
        }
        l
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), &self.tags)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_lines(path.as_ref())?)
    }
}

/// Per-document top-`k` tokens by tf-idf, with `tf` the raw count and
/// `idf = ln(num_docs / doc_freq)`. Ties break lexicographically.
pub fn extract_tags_tfidf(documents: &[Vec<Vec<String>>], k: usize) -> Vec<Vec<String>> {
    let n = documents.len() as f64;
    let mut doc_freq: HashMap<&String, usize> = HashMap::new();
    for doc in documents {
        let uniq: BTreeSet<&String> = doc.iter().flatten().collect();
        for t in uniq {
            *doc_freq.entry(t).or_default() += 1;
        }
    }
    documents
        .iter()
        .map(|doc| {
            let mut tf: BTreeMap<&String, usize> = BTreeMap::new();
            for t in doc.iter().flatten() {
                *tf.entry(t).or_default() += 1;
            }
            let mut scored: Vec<(&String, f64)> = tf
                .into_iter()
                .map(|(t, c)| (t, c as f64 * (n / doc_freq[t] as f64).ln()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            scored.into_iter().take(k).map(|(t, _)| t.clone()).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded random partition. Each part keeps the corpus order of its members.
pub fn split<T: Clone>(documents: &[T], seed: u64, val_count: usize, test_count: usize) -> Result<Split<T>> {
    let assignment = split_assignment(documents.len(), seed, val_count, test_count)?;
    let mut out = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (doc, part) in documents.iter().zip(assignment) {
        match part {
            SplitName::Train => out.train.push(doc.clone()),
            SplitName::Val => out.val.push(doc.clone()),
            SplitName::Test => out.test.push(doc.clone()),
        }
    }
    Ok(out)
}

/// Split membership per corpus position.
pub fn split_assignment(n: usize, seed: u64, val_count: usize, test_count: usize) -> Result<Vec<SplitName>> {
    if val_count + test_count >= n && (val_count + test_count) > 0 {
        return Err(Error::Domain(format!(
            "val ({val_count}) + test ({test_count}) must be smaller than the corpus ({n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seeded(seed).shuffle(&mut order);
    let mut assignment = vec![SplitName::Train; n];
    for &i in &order[..val_count] {
        assignment[i] = SplitName::Val;
    }
    for &i in &order[val_count..val_count + test_count] {
        assignment[i] = SplitName::Test;
    }
    Ok(assignment)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_documents: usize,
    pub unique_tags: usize,
    pub unique_words: usize,
    pub avg_tags_per_image: f64,
    pub avg_sentences: f64,
    pub avg_words_per_sentence: f64,
    pub top_k: usize,
    pub top_k_word_coverage: f64,
}

/// Tokenized text and tags of one document, the unit `corpus_stats` counts over.
#[derive(Clone, Debug, PartialEq)]
pub struct TextDocument {
    pub sentences: Vec<Vec<String>>,
    pub tags: Vec<String>,
}

pub fn corpus_stats(documents: &[TextDocument], top_k: usize) -> Result<CorpusStats> {
    if documents.is_empty() {
        return Err(Error::Domain("corpus statistics of an empty corpus".into()));
    }
    let n = documents.len() as f64;
    let num_sentences: usize = documents.iter().map(|d| d.sentences.len()).sum();
    let num_words: usize = documents.iter().flat_map(|d| &d.sentences).map(Vec::len).sum();
    let num_tags: usize = documents.iter().map(|d| d.tags.len()).sum();
    let unique_tags = documents.iter().flat_map(|d| &d.tags).collect::<BTreeSet<_>>().len();
    let texts: Vec<Vec<Vec<String>>> = documents.iter().map(|d| d.sentences.clone()).collect();
    let (unique_words, coverage) = match build_vocab(&texts, top_k.max(1)) {
        Ok(r) => (r.unique_words, r.coverage),
        Err(_) => (0, 0.0),
    };
    Ok(CorpusStats {
        num_documents: documents.len(),
        unique_tags,
        unique_words,
        avg_tags_per_image: num_tags as f64 / n,
        avg_sentences: num_sentences as f64 / n,
        avg_words_per_sentence: if num_sentences == 0 {
            0.0
        } else {
            num_words as f64 / num_sentences as f64
        },
        top_k,
        top_k_word_coverage: coverage,
    })
}

pub fn normalize_tag(tag: &str) -> String {
    tag.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Tokenizes and tags raw records. Records whose report yields no sentence
/// are dropped. Documents without corpus tags receive tf-idf tags.
pub fn text_documents(records: &[RawRecord], tfidf_k: usize) -> Vec<(usize, TextDocument)> {
    let tokenized: Vec<(usize, Vec<Vec<String>>)> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (i, tokenize(&r.report)))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    let texts: Vec<Vec<Vec<String>>> = tokenized.iter().map(|(_, s)| s.clone()).collect();
    let tfidf = extract_tags_tfidf(&texts, tfidf_k);
    tokenized
        .into_iter()
        .zip(tfidf)
        .map(|((i, sentences), fallback)| {
            let mut tags: Vec<String> = Vec::new();
            for t in records[i].tags.iter().map(|t| normalize_tag(t)) {
                if !t.is_empty() && !tags.contains(&t) {
                    tags.push(t);
                }
            }
            if tags.is_empty() {
                tags = fallback;
            }
            (i, TextDocument { sentences, tags })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub vocab_size: usize,
    pub tfidf_k: usize,
    pub seed: u64,
    pub val_count: usize,
    pub test_count: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            vocab_size: 1000,
            tfidf_k: 5,
            seed: 0,
            val_count: 500,
            test_count: 500,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub records: Vec<ProcessedRecord>,
    pub vocab: Vocabulary,
    pub tags: TagVocabulary,
    pub coverage: f64,
    pub dropped: usize,
}

pub fn preprocess(records: &[RawRecord], opts: &PreprocessOptions) -> Result<Preprocessed> {
    let docs = text_documents(records, opts.tfidf_k);
    if docs.is_empty() {
        return Err(Error::Domain("corpus has no document with text".into()));
    }
    let texts: Vec<Vec<Vec<String>>> = docs.iter().map(|(_, d)| d.sentences.clone()).collect();
    let vocab = build_vocab(&texts, opts.vocab_size)?;
    let tags = TagVocabulary::from_tag_lists(docs.iter().map(|(_, d)| &d.tags))?;
    let assignment = split_assignment(docs.len(), opts.seed, opts.val_count, opts.test_count)?;
    let processed = docs
        .into_iter()
        .zip(assignment)
        .map(|((i, d), split)| {
            let raw = &records[i];
            ProcessedRecord {
                id: raw.id.clone(),
                split,
                sentences: d.sentences,
                tags: d.tags,
                features: raw.features.clone(),
                image: raw.image.clone(),
                report: raw.report.clone(),
            }
        })
        .collect();
    Ok(Preprocessed {
        dropped: records.len() - texts.len(),
        records: processed,
        vocab: vocab.vocab,
        tags,
        coverage: vocab.coverage,
    })
}

impl ProcessedRecord {
    /// Encodes into a [`Document`]. Relative feature paths resolve against `base`.
    pub fn to_document(&self, vocab: &Vocabulary, base: Option<&Path>) -> Document {
        let resolve = |p: &String| match base {
            Some(b) if Path::new(p).is_relative() => b.join(p),
            _ => PathBuf::from(p),
        };
        let feature_ref = match (&self.features, &self.image) {
            (Some(f), _) => Some(FeatureRef::Features(resolve(f))),
            (None, Some(i)) => Some(FeatureRef::Image(resolve(i))),
            (None, None) => None,
        };
        Document {
            id: self.id.clone(),
            feature_ref,
            sentences: self.sentences.iter().map(|s| vocab.encode(s)).collect(),
            tags: self.tags.clone(),
            raw_text: self.report.clone(),
        }
    }
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    for l in lines {
        writeln!(buf, "{l}").expect("Vec write");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &[&[&str]]) -> Vec<Vec<String>> {
        s.iter().map(|x| x.iter().map(|t| t.to_string()).collect()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Heart size is normal."), toks(&[&["heart", "size", "is", "normal"]]));
        assert_eq!(
            tokenize("No pneumothorax. 2 nodules seen."),
            toks(&[&["no", "pneumothorax"], &["nodules", "seen"]])
        );
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_drops_hyphenated_and_keeps_comma_separated() {
        assert_eq!(
            tokenize("Chest x-ray: lungs clear, no effusion! Stable?"),
            toks(&[&["chest", "lungs", "clear", "no", "effusion"], &["stable"]])
        );
        assert_eq!(tokenize("Nodule 2.5 cm wide."), toks(&[&["nodule", "cm", "wide"]]));
        assert!(tokenize("... 12. !?").is_empty());
    }

    #[test]
    fn vocab_single_token_full_coverage() {
        let docs = vec![toks(&[&["a", "a"], &["a"]])];
        let r = build_vocab(&docs, 10).unwrap();
        assert_eq!(r.vocab.words(), &["a".to_string()]);
        assert_eq!(r.coverage, 1.0);
    }

    #[test]
    fn vocab_tiebreak_is_lexicographic() {
        let docs = vec![toks(&[&["zeta", "alpha"]])];
        let r = build_vocab(&docs, 1).unwrap();
        assert_eq!(r.vocab.words(), &["alpha".to_string()]);
        assert_eq!(r.coverage, 0.5);
        assert_eq!(r.vocab.id("zeta"), UNK);
    }

    #[test]
    fn vocab_errors() {
        assert!(build_vocab(&[], 5).is_err());
        assert!(build_vocab(&[toks(&[&["a"]])], 0).is_err());
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_tokens(["x"]).unwrap();
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(START), "<start>");
        assert_eq!(v.token(END), "<end>");
        assert_eq!(v.token(UNK), "<unk>");
        assert_eq!(v.id("x"), 4);
        assert!(Vocabulary::from_tokens(["<end>"]).is_err());
    }

    #[test]
    fn tfidf_prefers_unique_tokens() {
        let docs = vec![
            toks(&[&["common", "common", "rare"]]),
            toks(&[&["common", "other"]]),
        ];
        let tags = extract_tags_tfidf(&docs, 1);
        assert_eq!(tags[0], vec!["rare".to_string()]);
        assert_eq!(tags[1], vec!["other".to_string()]);
    }

    #[test]
    fn tfidf_single_document_ties_on_lexicographic_order() {
        // idf = ln(1/1) = 0 for every token, so all scores tie at zero.
        let docs = vec![toks(&[&["b", "b", "a", "c"]])];
        let tags = extract_tags_tfidf(&docs, 2);
        assert_eq!(tags[0], vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn tfidf_empty_document_has_no_tags() {
        let docs = vec![vec![], toks(&[&["a"]])];
        assert!(extract_tags_tfidf(&docs, 5)[0].is_empty());
    }

    #[test]
    fn split_examples() {
        let docs: Vec<u32> = (0..10).collect();
        let a = split(&docs, 42, 2, 3).unwrap();
        let b = split(&docs, 42, 2, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (5, 2, 3));
        let mut all: Vec<u32> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, docs);

        let none = split(&docs, 1, 0, 0).unwrap();
        assert_eq!(none.train, docs);
        assert!(split(&docs, 1, 5, 5).is_err());
    }

    #[test]
    fn stats_arithmetic() {
        let d = TextDocument {
            sentences: toks(&[&["a", "b", "c"], &["d", "e", "f"]]),
            tags: vec!["t1".into(), "t2".into(), "t3".into(), "t4".into()],
        };
        let s = corpus_stats(&[d], 1000).unwrap();
        assert_eq!(s.avg_sentences, 2.0);
        assert_eq!(s.avg_words_per_sentence, 3.0);
        assert_eq!(s.avg_tags_per_image, 4.0);
        assert_eq!(s.unique_words, 6);
        assert!(corpus_stats(&[], 10).is_err());
    }

    #[test]
    fn preprocess_falls_back_to_tfidf_tags() {
        let recs = vec![
            RawRecord { id: "a".into(), report: "Lungs clear. Heart normal.".into(), ..Default::default() },
            RawRecord { id: "b".into(), report: "Effusion seen.".into(), tags: vec!["Pleural  Effusion".into()], ..Default::default() },
            RawRecord { id: "c".into(), report: "123.".into(), ..Default::default() },
        ];
        let opts = PreprocessOptions { val_count: 0, test_count: 0, tfidf_k: 2, ..Default::default() };
        let p = preprocess(&recs, &opts).unwrap();
        assert_eq!(p.dropped, 1);
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.records[0].tags, vec!["clear".to_string(), "heart".to_string()]);
        assert_eq!(p.records[1].tags, vec!["pleural effusion".to_string()]);
        assert!(p.tags.id("pleural effusion").is_some());
    }

    proptest! {
        #[test]
        fn tokens_are_lowercase_alphabetic(text in "[A-Za-z0-9 .,!?;:'-]{0,80}") {
            for s in tokenize(&text) {
                prop_assert!(!s.is_empty());
                for t in s {
                    prop_assert!(t.chars().all(|c| c.is_alphabetic() && !c.is_uppercase()), "{}", t);
                }
            }
        }

        #[test]
        fn coverage_monotone_in_size(
            words in proptest::collection::vec("[a-e]{1,2}", 1..60),
            k in 1usize..10,
        ) {
            let docs = vec![vec![words]];
            let small = build_vocab(&docs, k).unwrap().coverage;
            let large = build_vocab(&docs, k + 1).unwrap().coverage;
            prop_assert!(large >= small);
            prop_assert!((0.0..=1.0).contains(&small));
        }

        #[test]
        fn encode_decode_roundtrip(words in proptest::collection::vec("[a-h]{1,3}", 1..40)) {
            let docs = vec![vec![words.clone()]];
            let v = build_vocab(&docs, 8).unwrap().vocab;
            let back = v.decode(&v.encode(&words));
            for (orig, dec) in words.iter().zip(&back) {
                if v.id(orig) != UNK {
                    prop_assert_eq!(orig, dec);
                } else {
                    prop_assert_eq!(dec.as_str(), "<unk>");
                }
            }
        }

        #[test]
        fn split_is_partition(n in 1usize..60, seed in any::<u64>(), v in 0usize..20, t in 0usize..20) {
            prop_assume!(v + t < n);
            let docs: Vec<usize> = (0..n).collect();
            let s = split(&docs, seed, v, t).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            prop_assert_eq!(all.len(), n);
            all.sort();
            all.dedup();
            prop_assert_eq!(all, docs);
        }
    }
}
