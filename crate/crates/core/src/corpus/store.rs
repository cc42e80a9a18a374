use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::PatentDocument;
use crate::error::{Error, Result};

/// Immutable, id-indexed collection of documents in file order.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    docs: Vec<PatentDocument>,
    index: HashMap<String, usize>,
}

impl CorpusStore {
    pub fn from_documents(docs: Vec<PatentDocument>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate()?;
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate document id {:?}",
                    doc.id
                )));
            }
        }
        Ok(CorpusStore { docs, index })
    }

    /// Load a JSONL corpus, one document object per non-blank line.
    pub fn load(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut docs = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc = PatentDocument::from_json(&line, true).map_err(|e| match e {
                Error::Format(message) => Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                },
                Error::Validation(m) => {
                    Error::Validation(format!("{} line {}: {m}", path.display(), i + 1))
                }
                other => other,
            })?;
            docs.push(doc);
        }
        Self::from_documents(docs)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for doc in &self.docs {
            writeln!(w, "{}", doc.to_json()).map_err(|e| Error::io("writing corpus", e))?;
        }
        w.flush().map_err(|e| Error::io("writing corpus", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PatentDocument> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn documents(&self) -> &[PatentDocument] {
        &self.docs
    }

    pub fn iter(&self) -> impl Iterator<Item = &PatentDocument> {
        self.docs.iter()
    }
}
