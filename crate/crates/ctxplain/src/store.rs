//! Single-file key-value persistence for the oracle cache, sessions, jobs
//! and results. Values are JSON documents.

use std::path::Path;
use std::sync::Arc;

use redb::backends::InMemoryBackend;
use redb::{Database, ReadableTable, ReadableTableMetadata, TableDefinition};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Evaluations,
    Salience,
    Sessions,
    Jobs,
    Results,
    Oracles,
}

impl Table {
    fn definition(self) -> TableDefinition<'static, &'static str, &'static [u8]> {
        TableDefinition::new(match self {
            Table::Evaluations => "evaluations",
            Table::Salience => "salience",
            Table::Sessions => "sessions",
            Table::Jobs => "jobs",
            Table::Results => "results",
            Table::Oracles => "oracles",
        })
    }

    const ALL: [Table; 6] = [
        Table::Evaluations,
        Table::Salience,
        Table::Sessions,
        Table::Jobs,
        Table::Results,
        Table::Oracles,
    ];
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store: {0}")]
    Backend(String),
    #[error("store: corrupt value under {key}: {message}")]
    Corrupt { key: String, message: String },
}

fn backend(e: impl std::fmt::Display) -> StoreError {
    StoreError::Backend(e.to_string())
}

/// Cheap to clone; clones share the same database.
#[derive(Clone)]
pub struct Store {
    db: Arc<Database>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Store")
    }
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        Self::init(Database::create(path).map_err(backend)?)
    }

    pub fn in_memory() -> Result<Self, StoreError> {
        Self::init(
            Database::builder()
                .create_with_backend(InMemoryBackend::new())
                .map_err(backend)?,
        )
    }

    fn init(db: Database) -> Result<Self, StoreError> {
        let txn = db.begin_write().map_err(backend)?;
        for table in Table::ALL {
            txn.open_table(table.definition()).map_err(backend)?;
        }
        txn.commit().map_err(backend)?;
        Ok(Store { db: Arc::new(db) })
    }

    pub fn get_raw(&self, table: Table, key: &str) -> Result<Option<Vec<u8>>, StoreError> {
        let txn = self.db.begin_read().map_err(backend)?;
        let t = txn.open_table(table.definition()).map_err(backend)?;
        Ok(t.get(key).map_err(backend)?.map(|v| v.value().to_vec()))
    }

    pub fn put_raw(&self, table: Table, key: &str, value: &[u8]) -> Result<(), StoreError> {
        let txn = self.db.begin_write().map_err(backend)?;
        {
            let mut t = txn.open_table(table.definition()).map_err(backend)?;
            t.insert(key, value).map_err(backend)?;
        }
        txn.commit().map_err(backend)
    }

    pub fn get<T: DeserializeOwned>(&self, table: Table, key: &str) -> Result<Option<T>, StoreError> {
        self.get_raw(table, key)?
            .map(|bytes| {
                serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                    key: key.to_string(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn put<T: Serialize + ?Sized>(&self, table: Table, key: &str, value: &T) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(value).map_err(|e| StoreError::Corrupt {
            key: key.to_string(),
            message: e.to_string(),
        })?;
        self.put_raw(table, key, &bytes)
    }

    /// All entries of a table in key order.
    pub fn list<T: DeserializeOwned>(&self, table: Table) -> Result<Vec<(String, T)>, StoreError> {
        let txn = self.db.begin_read().map_err(backend)?;
        let t = txn.open_table(table.definition()).map_err(backend)?;
        let mut out = Vec::new();
        for entry in t.iter().map_err(backend)? {
            let (k, v) = entry.map_err(backend)?;
            let key = k.value().to_string();
            let value = serde_json::from_slice(v.value()).map_err(|e| StoreError::Corrupt {
                key: key.clone(),
                message: e.to_string(),
            })?;
            out.push((key, value));
        }
        Ok(out)
    }

    pub fn len(&self, table: Table) -> Result<u64, StoreError> {
        let txn = self.db.begin_read().map_err(backend)?;
        let t = txn.open_table(table.definition()).map_err(backend)?;
        t.len().map_err(backend)
    }
}
