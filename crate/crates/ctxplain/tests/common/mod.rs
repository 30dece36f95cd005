//! Helpers shared by the integration tests: an in-process server, a small
//! JSON client, table-driven oracles and brute-force references.

#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ctxplain::service::{AppState, SharedState};
use ctxplain_core::{Answer, ContextSequence, Oracle, OracleCapabilities, OracleError, Query, SourceDocument};
use serde_json::Value;

pub struct Server {
    pub base: String,
    pub state: SharedState,
    _runtime: tokio::runtime::Runtime,
}

pub fn spawn(state: AppState) -> Server {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let state = Arc::new(state);
    runtime.spawn(ctxplain::service::serve(listener, state.clone(), std::future::pending()));
    Server {
        base,
        state,
        _runtime: runtime,
    }
}

/// Status code and raw body bytes.
pub fn request_raw(method: &str, url: &str, body: Option<&str>) -> (u16, Vec<u8>) {
    let req = ureq::request(method, url).set("Content-Type", "application/json");
    let result = match body {
        Some(b) => req.send_string(b),
        None => req.call(),
    };
    let response = match result {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{method} {url}: {e}"),
    };
    let status = response.status();
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut response.into_reader(), &mut bytes).unwrap();
    (status, bytes)
}

pub fn request(method: &str, url: &str, body: Option<&Value>) -> (u16, Value) {
    let text = body.map(|b| b.to_string());
    let (status, bytes) = request_raw(method, url, text.as_deref());
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

impl Server {
    pub fn get(&self, path: &str) -> (u16, Value) {
        request("GET", &format!("{}{path}", self.base), None)
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        request("POST", &format!("{}{path}", self.base), Some(body))
    }

    pub fn post_text(&self, path: &str, body: &str) -> (u16, Value) {
        let (status, bytes) = request_raw("POST", &format!("{}{path}", self.base), Some(body));
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    /// Polls a job until it leaves Pending/Running.
    pub fn wait(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(60);
        let mut last_evaluated = 0;
        loop {
            let (status, job) = self.get(&format!("/jobs/{job_id}"));
            assert_eq!(status, 200, "{job}");
            let evaluated = job["progress"]["evaluated"].as_u64().unwrap();
            assert!(evaluated >= last_evaluated, "progress went backwards");
            last_evaluated = evaluated;
            match job["state"].as_str().unwrap() {
                "Done" | "Failed" => return job,
                _ if Instant::now() > deadline => panic!("job {job_id} did not finish: {job}"),
                _ => std::thread::sleep(Duration::from_millis(10)),
            }
        }
    }

    /// Submits to `/sessions/{sid}/{kind}` and waits for the job.
    pub fn run_job(&self, session_id: &str, kind: &str, body: &Value) -> Value {
        let (status, job) = self.post(&format!("/sessions/{session_id}/{kind}"), body);
        assert_eq!(status, 202, "{job}");
        self.wait(job["job_id"].as_str().unwrap())
    }

    pub fn result(&self, job: &Value) -> Value {
        let rid = job["result_ref"].as_str().unwrap_or_else(|| panic!("no result: {job}"));
        let (status, payload) = self.get(&format!("/results/{rid}"));
        assert_eq!(status, 200);
        payload
    }
}

/// Answers from an explicit table keyed by the ordered doc_id list.
pub struct TableOracle {
    pub table: HashMap<Vec<String>, String>,
    pub default: String,
    pub calls: AtomicU64,
}

impl TableOracle {
    pub fn new(default: &str) -> Self {
        TableOracle {
            table: HashMap::new(),
            default: default.into(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn lookup(&self, ids: &[String]) -> &str {
        self.table.get(ids).map_or(self.default.as_str(), String::as_str)
    }
}

impl Oracle for TableOracle {
    fn id(&self) -> &str {
        "table"
    }

    fn capabilities(&self) -> OracleCapabilities {
        OracleCapabilities {
            supports_attention: false,
            max_context_chars: usize::MAX,
        }
    }

    fn answer(&self, _query: &Query, selected: &[&SourceDocument]) -> Result<Answer, OracleError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let ids: Vec<String> = selected.iter().map(|s| s.doc_id.clone()).collect();
        Ok(Answer {
            raw: self.lookup(&ids).to_string(),
            calls: 1,
        })
    }
}

pub fn context(k: usize) -> ContextSequence {
    ContextSequence::new(
        Query::new("which source decides?").unwrap(),
        (0..k)
            .map(|i| SourceDocument::new(format!("d{i}"), format!("document number {i}"), (k - i) as f64))
            .collect(),
    )
    .unwrap()
}

pub fn ids_of_mask(ctx: &ContextSequence, mask: u32) -> Vec<String> {
    ctx.doc_ids()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, id)| id.to_string())
        .collect()
}

pub fn ids_of_order(ctx: &ContextSequence, order: &[usize]) -> Vec<String> {
    let ids: Vec<&str> = ctx.doc_ids().collect();
    order.iter().map(|&i| ids[i].to_string()).collect()
}

/// Smallest removal (`top_down`) or retention set size that changes the
/// baseline answer, from a sweep over every subset.
pub fn brute_force_flip_size(ctx: &ContextSequence, oracle: &TableOracle, top_down: bool) -> Option<u32> {
    let full = (1u32 << ctx.k()) - 1;
    let retained = |mask: u32| if top_down { full & !mask } else { mask };
    let baseline = ctxplain_core::normalize_answer(oracle.lookup(&ids_of_mask(ctx, retained(0))));
    (1..=full)
        .filter(|&m| ctxplain_core::normalize_answer(oracle.lookup(&ids_of_mask(ctx, retained(m)))) != baseline)
        .map(u32::count_ones)
        .min()
}

/// Every permutation of `0..k` (Heap's algorithm).
pub fn heap_permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..n - 1 {
            rec(n - 1, a, out);
            if n % 2 == 0 {
                a.swap(i, n - 1);
            } else {
                a.swap(0, n - 1);
            }
        }
        rec(n - 1, a, out);
    }
    let mut a: Vec<usize> = (0..k).collect();
    let mut out = Vec::new();
    rec(k, &mut a, &mut out);
    out
}

/// Kendall's tau against the identity, from the pair-counting definition.
pub fn tau_by_pairs(p: &[usize]) -> f64 {
    let k = p.len();
    let (mut concordant, mut discordant) = (0i64, 0i64);
    for i in 0..k {
        for j in i + 1..k {
            if p[i] < p[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    (concordant - discordant) as f64 / (k * (k - 1) / 2) as f64
}

/// All k! assignments sorted by (cost, permutation).
pub fn brute_force_assignments(cost: &[Vec<f64>]) -> Vec<(f64, Vec<usize>)> {
    let mut all: Vec<(f64, Vec<usize>)> = heap_permutations(cost.len())
        .into_iter()
        .map(|p| (p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum(), p))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    all
}

pub fn mock_registration(id: &str, fixture: Value) -> Value {
    serde_json::json!({"id": id, "kind": "mock", "fixture": fixture})
}
