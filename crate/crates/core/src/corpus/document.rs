use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PatentDocument {
    pub id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub claims: String,
    pub description: String,
    pub pub_year: i32,
    pub category: String,
    pub cited_ids: Vec<String>,
}

/// Wire form; every field optional so a missing one can be reported by name.
#[derive(Deserialize)]
struct RawDocument {
    id: Option<String>,
    title: Option<String>,
    #[serde(rename = "abstract")]
    abstract_text: Option<String>,
    claims: Option<String>,
    description: Option<String>,
    pub_year: Option<i32>,
    category: Option<String>,
    cited_ids: Option<Vec<String>>,
}

impl PatentDocument {
    /// Parse one JSON object. `require_citations` controls whether a missing
    /// `cited_ids` field is an error (corpus files) or an empty list (queries).
    pub fn from_json(text: &str, require_citations: bool) -> Result<Self> {
        let raw: RawDocument =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        fn req<T>(v: Option<T>, field: &str) -> Result<T> {
            v.ok_or_else(|| Error::Validation(format!("missing required field `{field}`")))
        }
        let cited_ids = match raw.cited_ids {
            Some(c) => c,
            None if require_citations => {
                return Err(Error::Validation(
                    "missing required field `cited_ids`".into(),
                ))
            }
            None => Vec::new(),
        };
        let doc = PatentDocument {
            id: req(raw.id, "id")?,
            title: req(raw.title, "title")?,
            abstract_text: req(raw.abstract_text, "abstract")?,
            claims: req(raw.claims, "claims")?,
            description: req(raw.description, "description")?,
            pub_year: req(raw.pub_year, "pub_year")?,
            category: req(raw.category, "category")?,
            cited_ids,
        };
        doc.validate()?;
        Ok(doc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Validation("document id must be non-empty".into()));
        }
        if self.pub_year <= 0 {
            return Err(Error::Validation(format!(
                "{}: pub_year must be positive, got {}",
                self.id, self.pub_year
            )));
        }
        if self.cited_ids.iter().any(|c| c == &self.id) {
            return Err(Error::Validation(format!(
                "{}: document cites itself",
                self.id
            )));
        }
        if self.abstract_text.is_empty() && self.claims.is_empty() && self.description.is_empty() {
            return Err(Error::Validation(format!(
                "{}: abstract, claims and description are all empty",
                self.id
            )));
        }
        Ok(())
    }

    pub fn section_text(&self, sel: SectionSelector) -> String {
        match sel {
            SectionSelector::FullText => [
                &self.title,
                &self.abstract_text,
                &self.claims,
                &self.description,
            ]
            .map(String::as_str)
            .join(" "),
            SectionSelector::Abstract => self.abstract_text.clone(),
            SectionSelector::Claims => self.claims.clone(),
            SectionSelector::Description => self.description.clone(),
            SectionSelector::TitleAbstract => format!("{} {}", self.title, self.abstract_text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("document serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionSelector {
    #[default]
    FullText,
    Abstract,
    Claims,
    Description,
    TitleAbstract,
}

impl SectionSelector {
    pub const ALL: [SectionSelector; 5] = [
        SectionSelector::FullText,
        SectionSelector::Abstract,
        SectionSelector::Claims,
        SectionSelector::Description,
        SectionSelector::TitleAbstract,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SectionSelector::FullText => "full_text",
            SectionSelector::Abstract => "abstract",
            SectionSelector::Claims => "claims",
            SectionSelector::Description => "description",
            SectionSelector::TitleAbstract => "title_abstract",
        }
    }
}

impl fmt::Display for SectionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SectionSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|sel| {
                sel.as_str() == norm || (norm == "fulltext" && *sel == SectionSelector::FullText)
            })
            .ok_or_else(|| Error::Parameter(format!("unknown section {s:?}")))
    }
}
