use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dedup_interactions, BehaviorId, Interaction};
use crate::error::{Error, Result};

/// Column mapping and behavior vocabulary of an interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvSchema {
    pub user_column: String,
    pub item_column: String,
    pub behavior_column: String,
    /// Optional; a missing column or empty cell yields no timestamp.
    pub timestamp_column: Option<String>,
    pub behaviors: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            user_column: "user_id".into(),
            item_column: "item_id".into(),
            behavior_column: "behavior".into(),
            timestamp_column: Some("timestamp".into()),
            behaviors: vec!["view".into(), "cart".into(), "buy".into()],
        }
    }
}

/// Dense 0-based remapping of external ids, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Self {
        let index = ids.iter().enumerate().map(|(k, s)| (s.clone(), k)).collect();
        Self { ids, index }
    }

    pub fn get_or_insert(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), k);
        k
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn external(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedInteractions {
    /// Deduplicated, sorted by (user, item, behavior).
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
    pub behaviors: Vec<String>,
    /// Edge count per behavior after deduplication.
    pub counts: Vec<usize>,
    pub rows_read: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MalformedRow {
            line: 1,
            message: format!("missing column {name:?}"),
        })
}

/// Reads a header-first interaction CSV and remaps ids at ingest.
pub fn load_interactions(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedInteractions> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut raw = Vec::new();

    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Ok(LoadedInteractions {
            interactions: Vec::new(),
            users,
            items,
            behaviors: schema.behaviors.clone(),
            counts: vec![0; schema.behaviors.len()],
            rows_read: 0,
        });
    }
    let uc = column(&headers, &schema.user_column)?;
    let ic = column(&headers, &schema.item_column)?;
    let bc = column(&headers, &schema.behavior_column)?;
    let tc = schema
        .timestamp_column
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h.trim() == name));

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize, name: &str| -> Result<&str> {
            match record.get(k).map(str::trim) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::MalformedRow {
                    line,
                    message: format!("missing {name}"),
                }),
            }
        };
        let user = field(uc, "user")?;
        let item = field(ic, "item")?;
        let token = field(bc, "behavior")?;
        let behavior = schema
            .behaviors
            .iter()
            .position(|b| b == token)
            .ok_or_else(|| Error::UnknownBehavior {
                line,
                token: token.to_string(),
            })?;
        let timestamp = match tc.and_then(|k| record.get(k)).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<i64>().map_err(|_| Error::MalformedRow {
                line,
                message: format!("bad timestamp {s:?}"),
            })?),
        };
        raw.push(Interaction {
            user: users.get_or_insert(user),
            item: items.get_or_insert(item),
            behavior: BehaviorId(behavior),
            timestamp,
        });
    }

    let rows_read = raw.len();
    let interactions = dedup_interactions(raw);
    let mut counts = vec![0; schema.behaviors.len()];
    for x in &interactions {
        counts[x.behavior.0] += 1;
    }
    log::info!(
        "loaded {} rows -> {} interactions ({} users, {} items)",
        rows_read,
        interactions.len(),
        users.len(),
        items.len()
    );
    Ok(LoadedInteractions {
        interactions,
        users,
        items,
        behaviors: schema.behaviors.clone(),
        counts,
        rows_read,
    })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn duplicate_rows_keep_earliest_timestamp() {
        let f = write("user_id,item_id,behavior,timestamp\n0,1,view,10\n0,1,view,5\n0,2,buy,7\n");
        let loaded = load_interactions(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(loaded.interactions.len(), 2);
        assert_eq!(loaded.rows_read, 3);
        let item1 = loaded.items.get("1").unwrap();
        let view = loaded
            .interactions
            .iter()
            .find(|x| x.item == item1 && x.behavior == BehaviorId(0))
            .unwrap();
        assert_eq!(view.timestamp, Some(5));
        assert_eq!(loaded.counts, vec![1, 0, 1]);
    }

    #[test]
    fn empty_file_gives_no_interactions() {
        let f = write("");
        let loaded = load_interactions(f.path(), &CsvSchema::default()).unwrap();
        assert!(loaded.interactions.is_empty());
        assert_eq!(loaded.counts, vec![0, 0, 0]);

        let f = write("user_id,item_id,behavior,timestamp\n");
        let loaded = load_interactions(f.path(), &CsvSchema::default()).unwrap();
        assert!(loaded.interactions.is_empty());
    }

    #[test]
    fn unknown_behavior_names_line_and_token() {
        let f = write("user_id,item_id,behavior\n0,1,view\n0,2,wishlist\n");
        match load_interactions(f.path(), &CsvSchema::default()) {
            Err(Error::UnknownBehavior { line, token }) => {
                assert_eq!(line, 3);
                assert_eq!(token, "wishlist");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_report_line() {
        let f = write("user_id,item_id,behavior,timestamp\n0,1,view,abc\n");
        assert!(matches!(
            load_interactions(f.path(), &CsvSchema::default()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let f = write("user_id,item_id,behavior\n0,,view\n");
        assert!(matches!(
            load_interactions(f.path(), &CsvSchema::default()),
            Err(Error::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_interactions("/nonexistent/x.csv", &CsvSchema::default()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn custom_columns_and_vocabulary() {
        let f = write("uid,sku,event\nalice,x,pv\nbob,x,fav\n");
        let schema = CsvSchema {
            user_column: "uid".into(),
            item_column: "sku".into(),
            behavior_column: "event".into(),
            timestamp_column: None,
            behaviors: vec!["pv".into(), "fav".into()],
        };
        let loaded = load_interactions(f.path(), &schema).unwrap();
        assert_eq!(loaded.users.len(), 2);
        assert_eq!(loaded.items.len(), 1);
        assert_eq!(loaded.counts, vec![1, 1]);
    }
}
