//! Schema-declared delimited-text ingestion. The schema JSON names the
//! separator and column layout of the interactions / items / users files, so
//! the same loader handles MovieLens-style "::" files, tab-separated ML-100K
//! layouts, and the synthetic exports.

use super::{DatasetError, InteractionRecord, ItemProfile, UserProfile};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProfileSchema {
    /// Column names in file order; must include the id column.
    pub columns: Vec<String>,
    pub id_column: String,
    /// Items only: which column carries the display title.
    #[serde(default)]
    pub title_column: Option<String>,
    /// Columns kept as categorical feature fields, in declared order.
    pub feature_fields: Vec<String>,
    /// If set, multi-valued cells (e.g. "Action|Thriller") keep their first
    /// value only.
    #[serde(default)]
    pub multi_value_separator: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub separator: String,
    /// Interaction file columns; must contain user_id, item_id, rating,
    /// timestamp.
    pub interaction_columns: Vec<String>,
    pub items: ProfileSchema,
    #[serde(default)]
    pub users: Option<ProfileSchema>,
}

impl DatasetSchema {
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_file<P: AsRef<Path>>(&self, path: P) -> Result<(), DatasetError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug)]
pub struct LoadedDataset {
    pub records: Vec<InteractionRecord>,
    pub items: BTreeMap<String, ItemProfile>,
    pub users: BTreeMap<String, UserProfile>,
    /// Malformed rows are counted and reported, never silently dropped.
    pub malformed_rows: usize,
    pub malformed_examples: Vec<String>,
}

impl LoadedDataset {
    pub fn n_users(&self) -> usize {
        let mut ids: Vec<&str> = self.records.iter().map(|r| r.user_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

fn split_line<'a>(line: &'a str, sep: &str) -> Vec<&'a str> {
    line.split(sep).collect()
}

fn read_lines<P: AsRef<Path>>(path: P) -> Result<Vec<String>, DatasetError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(f.lines().collect::<Result<_, _>>()?)
}

fn parse_profiles(
    path: &Path,
    sep: &str,
    schema: &ProfileSchema,
    malformed: &mut Vec<String>,
) -> Result<BTreeMap<String, (String, Vec<(String, String)>)>, DatasetError> {
    let id_pos = schema
        .columns
        .iter()
        .position(|c| *c == schema.id_column)
        .ok_or_else(|| DatasetError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: format!("id column {:?} not in declared columns", schema.id_column),
        })?;
    let title_pos = schema
        .title_column
        .as_ref()
        .and_then(|t| schema.columns.iter().position(|c| c == t));
    let mut out = BTreeMap::new();
    for (lineno, line) in read_lines(path)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_line(line, sep);
        if cells.len() != schema.columns.len() {
            malformed.push(format!(
                "{}:{}: expected {} columns, got {}",
                path.display(),
                lineno + 1,
                schema.columns.len(),
                cells.len()
            ));
            continue;
        }
        let id = cells[id_pos].trim().to_string();
        let title = title_pos
            .map(|p| cells[p].trim().to_string())
            .unwrap_or_default();
        let mut features = Vec::new();
        for field in &schema.feature_fields {
            let Some(pos) = schema.columns.iter().position(|c| c == field) else {
                continue;
            };
            let mut value = cells[pos].trim().to_string();
            if let Some(msep) = &schema.multi_value_separator {
                if let Some(first) = value.split(msep.as_str()).next() {
                    value = first.trim().to_string();
                }
            }
            features.push((field.clone(), value));
        }
        out.insert(id, (title, features));
    }
    Ok(out)
}

/// Load and cross-reference the three delimited files. Interaction rows that
/// reference an item id absent from the item file are a referential error;
/// rows that fail to parse are counted as malformed.
pub fn load_dataset<P: AsRef<Path>>(
    interactions_path: P,
    items_path: P,
    users_path: Option<P>,
    schema: &DatasetSchema,
) -> Result<LoadedDataset, DatasetError> {
    let sep = schema.separator.as_str();
    let mut malformed = Vec::new();

    let raw_items = parse_profiles(items_path.as_ref(), sep, &schema.items, &mut malformed)?;
    let items: BTreeMap<String, ItemProfile> = raw_items
        .into_iter()
        .map(|(id, (title, features))| {
            (
                id.clone(),
                ItemProfile {
                    item_id: id,
                    title,
                    features,
                },
            )
        })
        .collect();

    let mut users: BTreeMap<String, UserProfile> = BTreeMap::new();
    if let (Some(path), Some(uschema)) = (users_path, &schema.users) {
        let raw = parse_profiles(path.as_ref(), sep, uschema, &mut malformed)?;
        users = raw
            .into_iter()
            .map(|(id, (_, features))| {
                (
                    id.clone(),
                    UserProfile {
                        user_id: id,
                        features,
                    },
                )
            })
            .collect();
    }

    let cols = &schema.interaction_columns;
    let pos = |name: &str| cols.iter().position(|c| c == name);
    let (u_pos, i_pos, r_pos, t_pos) = match (
        pos("user_id"),
        pos("item_id"),
        pos("rating"),
        pos("timestamp"),
    ) {
        (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
        _ => {
            return Err(DatasetError::Parse {
                path: interactions_path.as_ref().display().to_string(),
                line: 0,
                msg: "interaction columns must include user_id, item_id, rating, timestamp"
                    .into(),
            })
        }
    };

    let ipath = interactions_path.as_ref();
    let mut records = Vec::new();
    let mut unresolved = Vec::new();
    for (lineno, line) in read_lines(ipath)?.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_line(line, sep);
        if cells.len() != cols.len() {
            malformed.push(format!(
                "{}:{}: expected {} columns, got {}",
                ipath.display(),
                lineno + 1,
                cols.len(),
                cells.len()
            ));
            continue;
        }
        let rating: u8 = match cells[r_pos].trim().parse() {
            Ok(r) if (1..=5).contains(&r) => r,
            _ => {
                malformed.push(format!(
                    "{}:{}: bad rating {:?}",
                    ipath.display(),
                    lineno + 1,
                    cells[r_pos]
                ));
                continue;
            }
        };
        let timestamp: i64 = match cells[t_pos].trim().parse() {
            Ok(t) if t >= 0 => t,
            _ => {
                malformed.push(format!(
                    "{}:{}: bad timestamp {:?}",
                    ipath.display(),
                    lineno + 1,
                    cells[t_pos]
                ));
                continue;
            }
        };
        let item_id = cells[i_pos].trim().to_string();
        if !items.contains_key(&item_id) {
            unresolved.push(format!("{}:{}: item {item_id}", ipath.display(), lineno + 1));
            continue;
        }
        records.push(InteractionRecord {
            user_id: cells[u_pos].trim().to_string(),
            item_id,
            rating,
            timestamp,
        });
    }
    if !unresolved.is_empty() {
        let count = unresolved.len();
        unresolved.truncate(5);
        return Err(DatasetError::Unresolved {
            count,
            examples: unresolved,
        });
    }
    Ok(LoadedDataset {
        records,
        items,
        users,
        malformed_rows: malformed.len(),
        malformed_examples: malformed,
    })
}

/// Write a dataset back out as delimited files plus its schema; used to
/// produce MovieLens-layout fixtures for the ingestion path.
pub fn export_delimited<P: AsRef<Path>>(
    dir: P,
    records: &[InteractionRecord],
    items: &BTreeMap<String, ItemProfile>,
    users: &BTreeMap<String, UserProfile>,
    separator: &str,
) -> Result<DatasetSchema, DatasetError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    let item_fields: Vec<String> = items
        .values()
        .next()
        .map(|i| i.features.iter().map(|(f, _)| f.clone()).collect())
        .unwrap_or_default();
    let user_fields: Vec<String> = users
        .values()
        .next()
        .map(|u| u.features.iter().map(|(f, _)| f.clone()).collect())
        .unwrap_or_default();

    let mut s = String::new();
    for r in records {
        s.push_str(&format!(
            "{}{sep}{}{sep}{}{sep}{}\n",
            r.user_id,
            r.item_id,
            r.rating,
            r.timestamp,
            sep = separator
        ));
    }
    std::fs::write(dir.join("interactions.dat"), s)?;

    let mut s = String::new();
    for i in items.values() {
        s.push_str(&i.item_id);
        s.push_str(separator);
        s.push_str(&i.title);
        for (_, v) in &i.features {
            s.push_str(separator);
            s.push_str(v);
        }
        s.push('\n');
    }
    std::fs::write(dir.join("items.dat"), s)?;

    let mut s = String::new();
    for u in users.values() {
        s.push_str(&u.user_id);
        for (_, v) in &u.features {
            s.push_str(separator);
            s.push_str(v);
        }
        s.push('\n');
    }
    std::fs::write(dir.join("users.dat"), s)?;

    let mut item_columns = vec!["item_id".to_string(), "title".to_string()];
    item_columns.extend(item_fields.clone());
    let mut user_columns = vec!["user_id".to_string()];
    user_columns.extend(user_fields.clone());
    let schema = DatasetSchema {
        separator: separator.to_string(),
        interaction_columns: vec![
            "user_id".into(),
            "item_id".into(),
            "rating".into(),
            "timestamp".into(),
        ],
        items: ProfileSchema {
            columns: item_columns,
            id_column: "item_id".into(),
            title_column: Some("title".into()),
            feature_fields: item_fields,
            multi_value_separator: None,
        },
        users: if users.is_empty() {
            None
        } else {
            Some(ProfileSchema {
                columns: user_columns,
                id_column: "user_id".into(),
                title_column: None,
                feature_fields: user_fields,
                multi_value_separator: None,
            })
        },
    };
    schema.to_file(dir.join("schema.json"))?;
    Ok(schema)
}
