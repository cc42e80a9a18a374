//! Text normalization, tokenization and vocabulary construction.
//!
//! Normalization lowercases the input and keeps only ASCII `[a-z0-9]`;
//! every other code point acts as a token separator. Digits are kept.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::corpus::{PatentDocument, SectionSelector};
use crate::error::{Error, Result};

/// Lowercase `raw`, replace every non-alphanumeric character by a space
/// and collapse whitespace runs.
pub fn preprocess(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    for c in raw.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        } else {
            pending_space = true;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedDoc {
    pub doc_id: String,
    pub tokens: Vec<String>,
}

impl TokenizedDoc {
    pub fn new(doc_id: impl Into<String>, text: &str) -> Self {
        TokenizedDoc {
            doc_id: doc_id.into(),
            tokens: preprocess(text)
                .split(' ')
                .filter(|t| !t.is_empty())
                .map(str::to_owned)
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(doc: &PatentDocument, sel: SectionSelector) -> TokenizedDoc {
    TokenizedDoc::new(doc.id.clone(), &doc.section_text(sel))
}

/// Dense term index with per-term document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    doc_freq: Vec<usize>,
    total_docs: usize,
    min_count: usize,
}

impl Vocabulary {
    /// Build a vocabulary keeping terms that occur in at least `min_count`
    /// documents. Term order is first occurrence across `docs`.
    pub fn build(docs: &[TokenizedDoc], min_count: usize) -> Result<Self> {
        if min_count < 1 {
            return Err(Error::Parameter("min_count must be at least 1".into()));
        }
        let mut order: Vec<&str> = Vec::new();
        let mut df: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            let mut seen: HashSet<&str> = HashSet::new();
            for tok in &doc.tokens {
                if seen.insert(tok.as_str()) {
                    let entry = df.entry(tok.as_str()).or_insert_with(|| {
                        order.push(tok.as_str());
                        0
                    });
                    *entry += 1;
                }
            }
        }
        let mut vocab = Vocabulary {
            terms: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
            total_docs: docs.len(),
            min_count,
        };
        for term in order {
            let freq = df[term];
            if freq >= min_count {
                vocab.push(term.to_owned(), freq);
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, term: String, freq: usize) {
        self.index.insert(term.clone(), self.terms.len());
        self.terms.push(term);
        self.doc_freq.push(freq);
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.terms.get(index).map(String::as_str)
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq.get(index).copied().unwrap_or(0)
    }

    /// Token ids of `doc`, skipping out-of-vocabulary tokens.
    pub fn encode(&self, doc: &TokenizedDoc) -> Vec<usize> {
        doc.tokens.iter().filter_map(|t| self.index_of(t)).collect()
    }

    pub(crate) fn write_bin<W: Write>(&self, w: &mut BinWriter<W>) -> Result<()> {
        w.usize(self.total_docs)?;
        w.usize(self.min_count)?;
        w.usize(self.terms.len())?;
        for (term, &df) in self.terms.iter().zip(&self.doc_freq) {
            w.str(term)?;
            w.usize(df)?;
        }
        Ok(())
    }

    pub(crate) fn read_bin<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        let mut vocab = Vocabulary {
            terms: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
            total_docs: r.usize()?,
            min_count: r.usize()?,
        };
        let n = r.usize()?;
        for _ in 0..n {
            let term = r.str()?;
            let df = r.usize()?;
            if vocab.index.contains_key(&term) {
                return Err(Error::Format(format!("duplicate term {term:?}")));
            }
            vocab.push(term, df);
        }
        Ok(vocab)
    }

    /// Write as `#total_docs=<N>` followed by one `term<TAB>doc_freq` line per index.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let mut buf = String::new();
        let _ = writeln!(buf, "#total_docs={}", self.total_docs);
        for (term, df) in self.terms.iter().zip(&self.doc_freq) {
            let _ = writeln!(buf, "{term}\t{df}");
        }
        w.write_all(buf.as_bytes())
            .map_err(|e| Error::io("writing vocabulary", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = std::io::BufReader::new(file).lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .ok_or_else(|| parse_err(1, "missing #total_docs header".into()))?;
        let total_docs = header
            .strip_prefix("#total_docs=")
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| parse_err(1, format!("bad header {header:?}")))?;
        let mut vocab = Vocabulary {
            terms: Vec::new(),
            index: HashMap::new(),
            doc_freq: Vec::new(),
            total_docs,
            min_count: 1,
        };
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let (term, df) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 2, "expected term<TAB>doc_freq".into()))?;
            let df: usize = df
                .parse()
                .map_err(|_| parse_err(i + 2, format!("bad doc_freq {df:?}")))?;
            if vocab.index.contains_key(term) {
                return Err(parse_err(i + 2, format!("duplicate term {term:?}")));
            }
            vocab.push(term.to_owned(), df);
        }
        vocab.min_count = vocab.doc_freq.iter().copied().min().unwrap_or(1).max(1);
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<TokenizedDoc> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| TokenizedDoc::new(format!("d{i}"), t))
            .collect()
    }

    #[test]
    fn preprocess_examples() {
        assert_eq!(
            preprocess("Bone-Anchoring MEMBER!"),
            "bone anchoring member"
        );
        assert_eq!(preprocess(""), "");
        assert_eq!(preprocess("α-Helix 2.0"), "helix 2 0");
        assert_eq!(preprocess("  --  "), "");
        assert_eq!(preprocess("a\t\nb"), "a b");
    }

    #[test]
    fn vocabulary_counts() {
        let v = Vocabulary::build(&docs(&["a b", "b c"]), 1).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.terms(), &["a", "b", "c"]);
        assert_eq!(v.doc_freq(v.index_of("b").unwrap()), 2);
        assert_eq!(v.doc_freq(v.index_of("a").unwrap()), 1);
        assert_eq!(v.total_docs(), 2);

        let v = Vocabulary::build(&docs(&["a b", "b c"]), 2).unwrap();
        assert_eq!(v.terms(), &["b"]);
    }

    #[test]
    fn repeated_tokens_count_once_per_document() {
        let v = Vocabulary::build(&docs(&["a a a", "b"]), 2).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn empty_input() {
        let v = Vocabulary::build(&[], 1).unwrap();
        assert_eq!(v.len(), 0);
        assert_eq!(v.total_docs(), 0);
        assert!(Vocabulary::build(&[], 0).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::build(&docs(&["x y z", "y z", "z"]), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "#total_docs=3\nx\t1\ny\t2\nz\t3\n");
        let back = Vocabulary::load(&path).unwrap();
        assert_eq!(back.terms(), v.terms());
        assert_eq!(back.total_docs(), 3);
        assert_eq!(back.doc_freq(2), 3);
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(s in "\\PC{0,64}") {
            let once = preprocess(&s);
            prop_assert_eq!(preprocess(&once), once.clone());
            prop_assert!(once.chars().all(|c| c == ' ' || c.is_ascii_lowercase() || c.is_ascii_digit()));
            prop_assert!(!once.contains("  ") && !once.starts_with(' ') && !once.ends_with(' '));
        }

        #[test]
        fn vocabulary_index_is_a_bijection(texts in proptest::collection::vec("[a-e ]{0,20}", 0..8)) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let v = Vocabulary::build(&docs(&refs), 1).unwrap();
            for i in 0..v.len() {
                prop_assert_eq!(v.index_of(v.term(i).unwrap()), Some(i));
                prop_assert!(v.doc_freq(i) >= 1 && v.doc_freq(i) <= v.total_docs());
            }
            let distinct: HashSet<&str> = refs.iter().flat_map(|t| t.split_whitespace()).collect();
            prop_assert_eq!(v.len(), distinct.len());
        }
    }
}
