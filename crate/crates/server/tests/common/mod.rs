#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use banditry_core::service::DecisionService;
use banditry_server::{router, AppState};
use serde_json::{json, Value};
use ureq::Agent;

pub const ADMIN: &str = "test-admin-token";

/// A server running on its own runtime in a background thread.
pub struct TestServer {
    pub base: String,
    pub state: Arc<AppState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(service: DecisionService) -> Self {
        Self::start_with(service, None)
    }

    /// `threads = Some(1)` serves from a single-threaded runtime.
    pub fn start_with(service: DecisionService, threads: Option<usize>) -> Self {
        let state = Arc::new(AppState::new(service, ADMIN));
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::spawn(move || {
            let runtime = match threads {
                Some(1) => tokio::runtime::Builder::new_current_thread()
                    .enable_all()
                    .build(),
                Some(n) => tokio::runtime::Builder::new_multi_thread()
                    .worker_threads(n)
                    .enable_all()
                    .build(),
                None => tokio::runtime::Builder::new_multi_thread()
                    .enable_all()
                    .build(),
            }
            .unwrap();
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        Self {
            base: format!("http://{addr}"),
            state,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }
    }

    pub fn api(&self) -> Api {
        Api::new(&self.base)
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// The `banditry serve` binary as a child process.
pub struct ServerProcess {
    pub base: String,
    child: Child,
}

impl ServerProcess {
    pub fn spawn(data_dir: &Path, extra: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_banditry"))
            .args(["serve", "--port", "0", "--admin-token", ADMIN, "--data-dir"])
            .arg(data_dir)
            .args(extra)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("server binary starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Self { base, child }
    }

    pub fn api(&self) -> Api {
        Api::new(&self.base)
    }

    /// SIGKILL: no shutdown hook runs.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Thin protocol client returning `(status, body)`.
#[derive(Clone)]
pub struct Api {
    pub base: String,
    agent: Agent,
}

impl Api {
    pub fn new(base: &str) -> Self {
        let agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .new_agent();
        Self {
            base: base.to_string(),
            agent,
        }
    }

    fn finish(mut response: ureq::http::Response<ureq::Body>) -> (u16, Value) {
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .with_config()
            .limit(1 << 30)
            .read_to_string()
            .unwrap();
        (
            status,
            serde_json::from_str(&text).unwrap_or(Value::String(text)),
        )
    }

    pub fn get(&self, path: &str, query: &[(&str, String)]) -> (u16, Value) {
        let mut request = self.agent.get(format!("{}{path}", self.base));
        for (k, v) in query {
            request = request.query(*k, v);
        }
        Self::finish(request.call().unwrap())
    }

    pub fn admin_get(&self, path: &str, query: &[(&str, String)]) -> (u16, Value) {
        let mut request = self
            .agent
            .get(format!("{}{path}", self.base))
            .header("X-Admin-Token", ADMIN);
        for (k, v) in query {
            request = request.query(*k, v);
        }
        Self::finish(request.call().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value, admin: bool) -> (u16, Value) {
        let mut request = self.agent.post(format!("{}{path}", self.base));
        if admin {
            request = request.header("X-Admin-Token", ADMIN);
        }
        Self::finish(request.send_json(body).unwrap())
    }

    pub fn put(&self, path: &str, body: &Value) -> (u16, Value) {
        let request = self
            .agent
            .put(format!("{}{path}", self.base))
            .header("X-Admin-Token", ADMIN);
        Self::finish(request.send_json(body).unwrap())
    }

    pub fn delete(&self, path: &str) -> (u16, Value) {
        let request = self
            .agent
            .delete(format!("{}{path}", self.base))
            .header("X-Admin-Token", ADMIN);
        Self::finish(request.call().unwrap())
    }

    /// Creates an experiment, returning `(id, key)`.
    pub fn create(&self, name: &str, config: Value) -> (u64, String) {
        let (status, body) = self.post(
            "/management/exp",
            &json!({"name": name, "config": config}),
            true,
        );
        assert_eq!(status, 200, "{body}");
        (
            body["id"].as_u64().unwrap(),
            body["key"].as_str().unwrap().to_string(),
        )
    }

    pub fn get_action(&self, id: u64, key: &str, context: &Value) -> (u16, Value) {
        self.get(
            &format!("/{id}/getaction.json"),
            &[("key", key.to_string()), ("context", context.to_string())],
        )
    }

    /// The action document of a successful decision.
    pub fn action(&self, id: u64, key: &str, context: &Value) -> Value {
        let (status, body) = self.get_action(id, key, context);
        assert_eq!(status, 200, "{body}");
        body["action"].clone()
    }

    pub fn set_reward(
        &self,
        id: u64,
        key: &str,
        context: &Value,
        action: &Value,
        reward: &Value,
    ) -> (u16, Value) {
        self.get(
            &format!("/{id}/setreward.json"),
            &[
                ("key", key.to_string()),
                ("context", context.to_string()),
                ("action", action.to_string()),
                ("reward", reward.to_string()),
            ],
        )
    }

    pub fn reward(&self, id: u64, key: &str, context: &Value, action: &Value, reward: &Value) {
        let (status, body) = self.set_reward(id, key, context, action, reward);
        assert_eq!(status, 200, "{body}");
    }

    /// Full θ of an experiment via the admin token.
    pub fn theta(&self, id: u64) -> Value {
        let (status, body) = self.admin_get(&format!("/{id}/theta.json"), &[]);
        assert_eq!(status, 200, "{body}");
        body["theta"].clone()
    }
}
