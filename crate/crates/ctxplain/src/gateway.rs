//! Caching, coalescing, concurrency-capped front for any oracle.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use ctxplain_core::{Answer, EvaluationKey, Oracle, OracleCapabilities, OracleError, Query, SourceDocument};

use crate::store::{Store, Table};

pub type SharedOracle = Arc<dyn Oracle + Send + Sync>;

/// Counting semaphore bounding concurrent remote calls.
#[derive(Debug)]
pub struct Limiter {
    free: Mutex<usize>,
    released: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(permits: usize) -> Self {
        Limiter {
            free: Mutex::new(permits.max(1)),
            released: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.released.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.released.notify_one();
    }
}

/// Wraps an oracle with the persistent evaluation cache.
///
/// `namespace` becomes the `oracle_id` of every [`EvaluationKey`]; it must
/// change whenever the wrapped oracle's behaviour could change.
pub struct Gateway {
    inner: SharedOracle,
    namespace: String,
    store: Store,
    limiter: Arc<Limiter>,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    remote_calls: AtomicU64,
}

impl Gateway {
    pub fn new(inner: SharedOracle, namespace: impl Into<String>, store: Store, limiter: Arc<Limiter>) -> Self {
        Gateway {
            inner,
            namespace: namespace.into(),
            store,
            limiter,
            in_flight: Mutex::new(HashMap::new()),
            remote_calls: AtomicU64::new(0),
        }
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    /// Remote calls issued through this gateway since construction.
    pub fn remote_calls(&self) -> u64 {
        self.remote_calls.load(Ordering::SeqCst)
    }

    fn cached<T: serde::de::DeserializeOwned>(&self, table: Table, key: &str) -> Result<Option<T>, OracleError> {
        self.store
            .get(table, key)
            .map_err(|e| OracleError::Unavailable(e.to_string()))
    }

    /// Runs `fetch` at most once per key across concurrent callers and
    /// caches its result. The flag reports whether `fetch` ran.
    fn coalesced<T, F>(&self, table: Table, key: String, fetch: F) -> Result<(T, bool), OracleError>
    where
        T: serde::Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<T, OracleError>,
    {
        if let Some(hit) = self.cached(table, &key)? {
            return Ok((hit, false));
        }
        let slot = self
            .in_flight
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let result = {
            let _guard = slot.lock().unwrap();
            match self.cached(table, &key)? {
                Some(hit) => Ok((hit, false)),
                None => {
                    let fetched = {
                        let _permit = self.limiter.acquire();
                        self.remote_calls.fetch_add(1, Ordering::SeqCst);
                        fetch()
                    };
                    fetched.and_then(|value| {
                        self.store
                            .put(table, &key, &value)
                            .map_err(|e| OracleError::Unavailable(e.to_string()))?;
                        Ok((value, true))
                    })
                }
            }
        };
        self.in_flight.lock().unwrap().remove(&key);
        result
    }

    /// Like [`Oracle::answer`], also reporting whether a remote call was made.
    pub fn answer_traced(&self, query: &Query, selected: &[&SourceDocument]) -> Result<(Answer, bool), OracleError> {
        let key = EvaluationKey::new(query, selected, &self.namespace).digest();
        self.coalesced(Table::Evaluations, key, || self.inner.answer(query, selected))
    }

    pub fn salience_traced(&self, query: &Query, selected: &[&SourceDocument]) -> Result<(Vec<f64>, bool), OracleError> {
        if !self.inner.capabilities().supports_attention {
            return Err(OracleError::UnsupportedCapability);
        }
        let key = EvaluationKey::new(query, selected, &self.namespace).digest();
        self.coalesced(Table::Salience, key, || self.inner.salience(query, selected))
    }
}

impl Oracle for Gateway {
    fn id(&self) -> &str {
        &self.namespace
    }

    fn capabilities(&self) -> OracleCapabilities {
        self.inner.capabilities()
    }

    fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        self.answer_traced(query, selected).map(|(a, _)| a)
    }

    fn salience(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
        self.salience_traced(query, selected).map(|(s, _)| s)
    }
}

/// Per-run view of a gateway that counts evaluations and remote calls.
pub struct Tracked<'a> {
    gateway: &'a Gateway,
    evaluated: Arc<AtomicU64>,
    remote: Arc<AtomicU64>,
}

impl<'a> Tracked<'a> {
    pub fn new(gateway: &'a Gateway, evaluated: Arc<AtomicU64>, remote: Arc<AtomicU64>) -> Self {
        Tracked {
            gateway,
            evaluated,
            remote,
        }
    }
}

impl Oracle for Tracked<'_> {
    fn id(&self) -> &str {
        self.gateway.id()
    }

    fn capabilities(&self) -> OracleCapabilities {
        self.gateway.capabilities()
    }

    fn answer(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        let (answer, remote) = self.gateway.answer_traced(query, selected)?;
        self.evaluated.fetch_add(1, Ordering::SeqCst);
        if remote {
            self.remote.fetch_add(1, Ordering::SeqCst);
        }
        Ok(answer)
    }

    fn salience(&self, query: &Query, selected: &[&SourceDocument]) -> Result<Vec<f64>, OracleError> {
        let (salience, remote) = self.gateway.salience_traced(query, selected)?;
        if remote {
            self.remote.fetch_add(1, Ordering::SeqCst);
        }
        Ok(salience)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctxplain_core::oracle::evaluate;
    use ctxplain_core::{MockOracle, MockRule, Perturbation, Permutation};
    use std::time::Duration;

    /// Counts calls and sleeps so concurrent callers overlap.
    struct Slow {
        calls: AtomicU64,
        active: AtomicU64,
        peak: AtomicU64,
    }

    impl Oracle for Slow {
        fn id(&self) -> &str {
            "slow"
        }
        fn capabilities(&self) -> OracleCapabilities {
            OracleCapabilities {
                supports_attention: false,
                max_context_chars: 1000,
            }
        }
        fn answer(&self, _q: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(30));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok(Answer {
                raw: format!("{} sources", selected.len()),
                calls: 1,
            })
        }
    }

    fn docs() -> Vec<SourceDocument> {
        vec![SourceDocument::new("a", "alpha", 1.0), SourceDocument::new("b", "beta", 1.0)]
    }

    fn slow() -> Arc<Slow> {
        Arc::new(Slow {
            calls: AtomicU64::new(0),
            active: AtomicU64::new(0),
            peak: AtomicU64::new(0),
        })
    }

    #[test]
    fn second_evaluation_is_a_byte_identical_cache_hit() {
        let mock = MockOracle::new("m", "no").with_rule(MockRule {
            requires: vec!["a".into()],
            answer: "Yes!".into(),
            ..Default::default()
        });
        let gw = Gateway::new(Arc::new(mock), "m", Store::in_memory().unwrap(), Arc::new(Limiter::new(4)));
        let q = Query::new("q").unwrap();
        let d = docs();
        let sel: Vec<&SourceDocument> = d.iter().collect();
        let p = Perturbation::Permutation(Permutation::identity(2));
        let first = evaluate(&gw, &q, &sel, p.clone()).unwrap();
        let second = evaluate(&gw, &q, &sel, p).unwrap();
        assert_eq!(serde_json::to_vec(&first).unwrap(), serde_json::to_vec(&second).unwrap());
        assert_eq!(first.oracle_calls_used, 1);
        assert_eq!(gw.remote_calls(), 1);

        // reversed order is a different key
        let rev = [sel[1], sel[0]];
        gw.answer(&q, &rev).unwrap();
        assert_eq!(gw.remote_calls(), 2);
    }

    #[test]
    fn concurrent_duplicates_coalesce() {
        let inner = slow();
        let gw = Arc::new(Gateway::new(inner.clone(), "slow", Store::in_memory().unwrap(), Arc::new(Limiter::new(4))));
        let q = Query::new("q").unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (gw, q) = (gw.clone(), q.clone());
                s.spawn(move || {
                    let d = docs();
                    let sel: Vec<&SourceDocument> = d.iter().collect();
                    assert_eq!(gw.answer(&q, &sel).unwrap().raw, "2 sources");
                });
            }
        });
        assert_eq!(inner.calls.load(Ordering::SeqCst), 1);
        assert_eq!(gw.remote_calls(), 1);
    }

    #[test]
    fn limiter_caps_remote_concurrency() {
        let inner = slow();
        let gw = Arc::new(Gateway::new(inner.clone(), "slow", Store::in_memory().unwrap(), Arc::new(Limiter::new(2))));
        std::thread::scope(|s| {
            for i in 0..6 {
                let gw = gw.clone();
                s.spawn(move || {
                    let q = Query::new(format!("question {i}")).unwrap();
                    let d = docs();
                    gw.answer(&q, &[&d[0]]).unwrap();
                });
            }
        });
        assert_eq!(inner.calls.load(Ordering::SeqCst), 6);
        assert!(inner.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn errors_are_not_cached_and_salience_is_gated() {
        struct Down;
        impl Oracle for Down {
            fn id(&self) -> &str {
                "down"
            }
            fn capabilities(&self) -> OracleCapabilities {
                OracleCapabilities {
                    supports_attention: false,
                    max_context_chars: 10,
                }
            }
            fn answer(&self, _: &Query, _: &[&SourceDocument]) -> Result<Answer, OracleError> {
                Err(OracleError::Unavailable("refused".into()))
            }
        }
        let store = Store::in_memory().unwrap();
        let gw = Gateway::new(Arc::new(Down), "down", store.clone(), Arc::new(Limiter::new(1)));
        let q = Query::new("q").unwrap();
        assert!(gw.answer(&q, &[]).is_err());
        assert!(gw.answer(&q, &[]).is_err());
        assert_eq!(gw.remote_calls(), 2);
        assert_eq!(store.len(Table::Evaluations).unwrap(), 0);
        assert_eq!(gw.salience(&q, &[]), Err(OracleError::UnsupportedCapability));
    }
}
