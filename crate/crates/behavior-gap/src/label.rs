//! Multi-label annotations attached to a single dialog turn.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// A set of categorical labels (dialog acts or tool names) for one turn.
///
/// Labels are kept in a sorted set so serialization and comparison are
/// order-independent. The optional rationale maps a label to the
/// classifier's stated reason for its presence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<BTreeMap<String, String>>,
}

impl LabelSet {
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        LabelSet {
            labels: labels.into_iter().map(Into::into).collect(),
            rationale: None,
        }
    }

    pub fn empty() -> Self {
        LabelSet::default()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    /// True when every label is drawn from `allowed`.
    pub fn is_subset_of<'a, I>(&self, allowed: I) -> bool
    where
        I: IntoIterator<Item = &'a str>,
    {
        let allowed: BTreeSet<&str> = allowed.into_iter().collect();
        self.labels.iter().all(|l| allowed.contains(l.as_str()))
    }
}

impl<S: Into<String>> FromIterator<S> for LabelSet {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        LabelSet::new(iter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_check() {
        let set = LabelSet::new(["inform", "request"]);
        assert!(set.is_subset_of(["inform", "request", "greet"]));
        assert!(!set.is_subset_of(["inform"]));
        assert!(LabelSet::empty().is_subset_of([] as [&str; 0]));
    }

    #[test]
    fn serde_is_order_independent() {
        let a = LabelSet::new(["b", "a"]);
        let b = LabelSet::new(["a", "b"]);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
