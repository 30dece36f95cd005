//! Named oracles, each behind its own caching gateway.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use ctxplain_core::{MockOracle, Oracle, OracleCapabilities};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Gateway, Limiter, SharedOracle};
use crate::http_oracle::{HttpOracle, HttpOracleConfig};
use crate::store::{Store, StoreError, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Mock { fixture: MockOracle },
    Http(HttpOracleConfig),
}

impl OracleSpec {
    fn build(&self, id: &str) -> SharedOracle {
        match self {
            OracleSpec::Mock { fixture } => Arc::new(fixture.clone()),
            OracleSpec::Http(config) => Arc::new(HttpOracle::new(id, config.clone())),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            OracleSpec::Mock { .. } => "mock",
            OracleSpec::Http(_) => "http",
        }
    }

    /// Cache namespace: the id plus a digest of everything that can change
    /// answers, so re-registering an id with a new spec never reuses stale
    /// cache entries.
    fn namespace(&self, id: &str) -> String {
        let fingerprint = match self {
            OracleSpec::Mock { fixture } => serde_json::to_vec(&(&fixture.default_answer, &fixture.rules, &fixture.salience)),
            OracleSpec::Http(c) => serde_json::to_vec(&(&c.url, &c.model)),
        }
        .expect("spec serializes");
        let digest = Sha256::digest(&fingerprint);
        let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        format!("{id}@{hex}")
    }
}

/// Body of `POST /oracles`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRegistration {
    pub id: String,
    #[serde(flatten)]
    pub spec: OracleSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleInfo {
    pub id: String,
    pub kind: String,
    pub capabilities: OracleCapabilities,
}

struct Entry {
    spec: OracleSpec,
    gateway: Arc<Gateway>,
}

pub struct Registry {
    store: Store,
    limiter: Arc<Limiter>,
    entries: RwLock<BTreeMap<String, Entry>>,
}

impl Registry {
    pub fn new(store: Store, limiter: Arc<Limiter>) -> Self {
        Registry {
            store,
            limiter,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    /// Re-registers every oracle persisted in the store.
    pub fn restore(&self) -> Result<usize, StoreError> {
        let saved: Vec<(String, OracleSpec)> = self.store.list(Table::Oracles)?;
        let n = saved.len();
        for (id, spec) in saved {
            self.insert(id, spec);
        }
        Ok(n)
    }

    fn insert(&self, id: String, spec: OracleSpec) -> Arc<Gateway> {
        let gateway = Arc::new(Gateway::new(
            spec.build(&id),
            spec.namespace(&id),
            self.store.clone(),
            self.limiter.clone(),
        ));
        self.entries.write().unwrap().insert(
            id,
            Entry {
                spec,
                gateway: gateway.clone(),
            },
        );
        gateway
    }

    pub fn register(&self, registration: OracleRegistration) -> Result<Arc<Gateway>, StoreError> {
        self.store.put(Table::Oracles, &registration.id, &registration.spec)?;
        Ok(self.insert(registration.id, registration.spec))
    }

    /// Registers without persisting (process-local oracles such as CLI flags).
    pub fn register_transient(&self, id: &str, spec: OracleSpec) -> Arc<Gateway> {
        self.insert(id.to_string(), spec)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Gateway>> {
        self.entries.read().unwrap().get(id).map(|e| e.gateway.clone())
    }

    pub fn list(&self) -> Vec<OracleInfo> {
        self.entries
            .read()
            .unwrap()
            .iter()
            .map(|(id, e)| OracleInfo {
                id: id.clone(),
                kind: e.spec.kind().into(),
                capabilities: e.gateway.capabilities(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxplain_core::Query;

    fn registry(store: &Store) -> Registry {
        Registry::new(store.clone(), Arc::new(Limiter::new(2)))
    }

    #[test]
    fn registration_json_shapes() {
        let mock: OracleRegistration =
            serde_json::from_str(r#"{"id": "m", "kind": "mock", "fixture": {"default_answer": "x"}}"#).unwrap();
        assert!(matches!(mock.spec, OracleSpec::Mock { .. }));
        let http: OracleRegistration =
            serde_json::from_str(r#"{"id": "h", "kind": "http", "url": "http://localhost:1/v1"}"#).unwrap();
        let OracleSpec::Http(c) = http.spec else { panic!() };
        assert_eq!(c.timeout_secs, 60);
    }

    #[test]
    fn changed_spec_gets_fresh_cache_namespace() {
        let store = Store::in_memory().unwrap();
        let reg = registry(&store);
        let q = Query::new("q").unwrap();
        let spec = |answer: &str| OracleRegistration {
            id: "m".into(),
            spec: OracleSpec::Mock {
                fixture: MockOracle::new("m", answer),
            },
        };
        assert_eq!(reg.register(spec("one")).unwrap().answer(&q, &[]).unwrap().raw, "one");
        assert_eq!(reg.register(spec("two")).unwrap().answer(&q, &[]).unwrap().raw, "two");
        assert_eq!(reg.register(spec("one")).unwrap().namespace(), reg.get("m").unwrap().namespace());
    }

    #[test]
    fn persisted_oracles_are_restored() {
        let store = Store::in_memory().unwrap();
        registry(&store)
            .register(OracleRegistration {
                id: "m".into(),
                spec: OracleSpec::Mock {
                    fixture: MockOracle::new("m", "x"),
                },
            })
            .unwrap();
        let fresh = registry(&store);
        assert_eq!(fresh.restore().unwrap(), 1);
        assert_eq!(fresh.list()[0].kind, "mock");
        assert!(fresh.get("m").is_some());
    }
}
