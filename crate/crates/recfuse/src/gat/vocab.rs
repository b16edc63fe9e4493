//! Categorical vocabularies with a reserved out-of-vocabulary row at index
//! 0. Sizes are fixed at construction; unseen values map to the OOV row.

use crate::dataset::Sample;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub const OOV_INDEX: usize = 0;

/// String -> row index map. Row 0 is reserved for unseen values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Vocab {
    index: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<I: IntoIterator<Item = String>>(values: I) -> Self {
        let mut index = BTreeMap::new();
        for v in values {
            let next = index.len() + 1;
            index.entry(v).or_insert(next);
        }
        Vocab { index }
    }

    /// Table row count including the OOV row.
    pub fn len(&self) -> usize {
        self.index.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Row index, OOV row for unseen values; the flag reports the miss.
    pub fn lookup(&self, value: &str) -> (usize, bool) {
        match self.index.get(value) {
            Some(&i) => (i, false),
            None => (OOV_INDEX, true),
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        self.index.contains_key(value)
    }
}

/// All vocabularies the expert needs. Item and user features are keyed as
/// "field=value" so distinct fields never collide.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GatVocabs {
    pub user_ids: Vocab,
    pub user_feats: Vocab,
    pub item_ids: Vocab,
    pub item_feats: Vocab,
    /// Fixed number of user-feature slots; shorter profiles pad with OOV.
    pub n_user_fields: usize,
}

pub fn feat_key(field: &str, value: &str) -> String {
    format!("{field}={value}")
}

impl GatVocabs {
    /// Collect vocabularies from the training samples only, so evaluation
    /// exercises the OOV path.
    pub fn build(samples: &[Sample]) -> Self {
        let mut user_ids = Vec::new();
        let mut user_feats = Vec::new();
        let mut item_ids = Vec::new();
        let mut item_feats = Vec::new();
        let mut n_user_fields = 0;
        let add_item = |item: &crate::dataset::ItemProfile,
                            ids: &mut Vec<String>,
                            feats: &mut Vec<String>| {
            ids.push(item.item_id.clone());
            for (f, v) in &item.features {
                feats.push(feat_key(f, v));
            }
        };
        for s in samples {
            user_ids.push(s.user.user_id.clone());
            n_user_fields = n_user_fields.max(s.user.features.len());
            for (f, v) in &s.user.features {
                user_feats.push(feat_key(f, v));
            }
            add_item(&s.target, &mut item_ids, &mut item_feats);
            for h in &s.history {
                add_item(&h.item, &mut item_ids, &mut item_feats);
            }
        }
        GatVocabs {
            user_ids: Vocab::build(user_ids),
            user_feats: Vocab::build(user_feats),
            item_ids: Vocab::build(item_ids),
            item_feats: Vocab::build(item_feats),
            n_user_fields: n_user_fields.max(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oov_row_is_zero_and_known_values_start_at_one() {
        let v = Vocab::build(vec!["b".into(), "a".into(), "b".into()]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.lookup("b"), (1, false));
        assert_eq!(v.lookup("a"), (2, false));
        assert_eq!(v.lookup("zzz"), (OOV_INDEX, true));
    }

    #[test]
    fn first_occurrence_wins_duplicate_insertion() {
        let v = Vocab::build(vec!["x".into(), "x".into(), "y".into()]);
        assert_eq!(v.lookup("x").0, 1);
        assert_eq!(v.lookup("y").0, 2);
    }

    #[test]
    fn feat_keys_keep_fields_apart() {
        assert_ne!(feat_key("genre", "1991"), feat_key("year", "1991"));
    }
}
