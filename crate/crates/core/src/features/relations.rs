use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Relation id used when no pair matches.
pub const NO_RELATION: usize = 0;

/// Local stand-in for a commonsense knowledge graph: ordered token pairs
/// mapped to relation names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationLexicon {
    pairs: BTreeMap<(String, String), usize>,
    relations: Vec<String>,
}

impl RelationLexicon {
    pub fn empty() -> Self {
        Self::from_entries(core::iter::empty::<(&str, &str, &str)>())
    }

    /// Builds the lexicon from `(head, tail, relation)` triples. Heads and
    /// tails are lowercased; the first relation given for a pair wins.
    /// Relation ids are `none` followed by the sorted relation names.
    pub fn from_entries<'a, I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    {
        let entries: Vec<_> = entries.into_iter().collect();
        let names: BTreeSet<&str> = entries
            .iter()
            .map(|e| e.2)
            .filter(|r| *r != "none")
            .collect();
        let mut relations = alloc::vec!["none".to_string()];
        relations.extend(names.into_iter().map(str::to_string));
        let id_of: BTreeMap<&str, usize> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut pairs = BTreeMap::new();
        for (head, tail, rel) in entries {
            pairs
                .entry((head.to_lowercase(), tail.to_lowercase()))
                .or_insert(id_of[rel]);
        }
        RelationLexicon { pairs, relations }
    }

    /// Relation vocabulary, index-ordered.
    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    /// Relation between two tokens, preferring `(a, b)` over `(b, a)`.
    pub fn lookup(&self, a: &str, b: &str) -> Option<usize> {
        let key = (a.to_string(), b.to_string());
        if let Some(&r) = self.pairs.get(&key) {
            return Some(r);
        }
        let (a, b) = key;
        self.pairs.get(&(b, a)).copied()
    }
}

/// For every token of `seq_a`, the relation to the first token of `seq_b`
/// (scanning left to right) that the lexicon connects it to.
pub fn lookup_relations(seq_a: &[String], seq_b: &[String], lex: &RelationLexicon) -> Vec<usize> {
    seq_a
        .iter()
        .map(|w| {
            if lex.is_empty() {
                return NO_RELATION;
            }
            seq_b
                .iter()
                .find_map(|v| lex.lookup(w, v))
                .unwrap_or(NO_RELATION)
        })
        .collect()
}
