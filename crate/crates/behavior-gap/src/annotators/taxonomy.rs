//! Built-in dialog-act taxonomies: the 10-label task-specific WOZ set and
//! the 11-label task-independent ISO set, with definitions and few-shot
//! banks loaded from editable data files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyName {
    Woz,
    Iso,
}

impl TaxonomyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaxonomyName::Woz => "woz",
            TaxonomyName::Iso => "iso",
        }
    }
}

impl std::str::FromStr for TaxonomyName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "woz" => Ok(TaxonomyName::Woz),
            "iso" => Ok(TaxonomyName::Iso),
            other => Err(format!("unknown taxonomy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShot {
    pub user_input: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub name: TaxonomyName,
    pub labels: Vec<String>,
    pub definitions: BTreeMap<String, String>,
    pub fewshots: BTreeMap<String, Vec<FewShot>>,
}

pub const WOZ_LABELS: [&str; 10] = [
    "inform", "request", "select", "recommend", "nooffer", "offerbook", "book", "nobook", "greet",
    "reqmore",
];

pub const ISO_LABELS: [&str; 11] = [
    "set_q",
    "prop_q",
    "choice_q",
    "other_q",
    "inform",
    "commissives",
    "directives",
    "salutation",
    "apology",
    "thanking",
    "feedback",
];

impl Taxonomy {
    pub fn woz() -> Self {
        serde_json::from_str(include_str!("../../assets/taxonomy_woz.json"))
            .expect("bundled WOZ taxonomy is valid")
    }

    pub fn iso() -> Self {
        serde_json::from_str(include_str!("../../assets/taxonomy_iso.json"))
            .expect("bundled ISO taxonomy is valid")
    }

    pub fn by_name(name: TaxonomyName) -> Self {
        match name {
            TaxonomyName::Woz => Taxonomy::woz(),
            TaxonomyName::Iso => Taxonomy::iso(),
        }
    }

    /// Load an edited bank from disk, keeping the label set fixed.
    pub fn from_file(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        let taxonomy: Taxonomy = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        taxonomy
            .check()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(taxonomy)
    }

    pub fn check(&self) -> Result<(), String> {
        let expected: &[&str] = match self.name {
            TaxonomyName::Woz => &WOZ_LABELS,
            TaxonomyName::Iso => &ISO_LABELS,
        };
        if self.labels != expected {
            return Err(format!(
                "{} taxonomy must carry exactly the labels {expected:?}",
                self.name.as_str()
            ));
        }
        for label in &self.labels {
            if !self.definitions.contains_key(label) {
                return Err(format!("label `{label}` has no definition"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_taxonomies_have_exact_label_sets() {
        let woz = Taxonomy::woz();
        assert_eq!(woz.labels, WOZ_LABELS);
        woz.check().unwrap();

        let iso = Taxonomy::iso();
        assert_eq!(iso.labels, ISO_LABELS);
        iso.check().unwrap();
    }

    #[test]
    fn every_label_has_fewshots() {
        for taxonomy in [Taxonomy::woz(), Taxonomy::iso()] {
            for label in &taxonomy.labels {
                assert!(
                    taxonomy
                        .fewshots
                        .get(label)
                        .is_some_and(|shots| !shots.is_empty()),
                    "{} has no few-shot examples",
                    label
                );
            }
        }
    }
}
