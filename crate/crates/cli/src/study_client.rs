//! `study` subcommands: `serve` runs the HTTP API, the rest are thin
//! clients of it.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use reqwest::blocking::{Client, Response};
use serde_json::{json, Value};
use synth_eval_core::Origin;
use synth_eval_study::{http, StudyService};

use crate::responses::ResponseFile;

/// Opens the data directory, reports any recovered log tails, and serves
/// until the process is stopped.
pub fn serve(addr: SocketAddr, data_dir: &Path) -> Result<()> {
    let (service, notes) =
        StudyService::open(data_dir).with_context(|| format!("cannot open data dir {}", data_dir.display()))?;
    for n in &notes {
        log::warn!(
            "{}: discarded {} bytes of a damaged final event at offset {} ({})",
            n.path.display(),
            n.recovery.discarded_bytes,
            n.recovery.offset,
            n.recovery.reason
        );
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .with_context(|| format!("cannot bind {addr}"))?;
        let local = listener.local_addr()?;
        // the first stdout line tells scripts where to connect
        println!("listening on http://{local}");
        log::info!("serving studies from {}", data_dir.display());
        http::serve(listener, Arc::new(service)).await?;
        Ok(())
    })
}

pub struct StudyClient {
    base: String,
    http: Client,
}

impl StudyClient {
    pub fn new(url: &str) -> Result<Self> {
        Ok(StudyClient {
            base: url.trim_end_matches('/').to_string(),
            http: Client::builder().build()?,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Maps a non-2xx response to an error carrying the service's error kind.
    fn check(resp: Response) -> Result<Response> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        match serde_json::from_str::<Value>(&text) {
            Ok(body) if body.get("error").is_some() => bail!(
                "{} ({}): {}",
                body["error"].as_str().unwrap_or("error"),
                status.as_u16(),
                body["message"].as_str().unwrap_or_default()
            ),
            _ => bail!("HTTP {}: {}", status.as_u16(), text),
        }
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> Result<Response> {
        let resp = req
            .send()
            .with_context(|| format!("cannot reach study service at {}", self.base))?;
        Self::check(resp)
    }

    fn post(&self, path: &str, body: Value) -> Result<Value> {
        Ok(self.send(self.http.post(self.url(path)).json(&body))?.json()?)
    }

    fn get(&self, path: &str) -> Result<Value> {
        Ok(self.send(self.http.get(self.url(path)))?.json()?)
    }

    /// Creates a study. Manifest paths are made absolute so the server
    /// resolves them independently of its working directory.
    pub fn create(&self, real: &Path, synth: &Path, n_per_class: usize, seed: u64) -> Result<Value> {
        let abs = |p: &Path| -> Result<PathBuf> {
            std::fs::canonicalize(p).with_context(|| format!("{}: cannot resolve manifest path", p.display()))
        };
        self.post(
            "/studies",
            json!({
                "real_manifest": abs(real)?,
                "synth_manifest": abs(synth)?,
                "n_per_class": n_per_class,
                "seed": seed,
            }),
        )
    }

    pub fn open_session(&self, study_id: &str, rater_tag: &str) -> Result<Value> {
        self.post(
            &format!("/studies/{study_id}/sessions"),
            json!({ "rater_tag": rater_tag }),
        )
    }

    pub fn next(&self, session_id: &str) -> Result<Value> {
        self.get(&format!("/sessions/{session_id}/next"))
    }

    pub fn submit(&self, session_id: &str, item_id: &str, answer: Origin, elapsed_ms: Option<u64>) -> Result<Value> {
        self.post(
            &format!("/sessions/{session_id}/responses"),
            json!({ "item_id": item_id, "answer": answer, "elapsed_ms": elapsed_ms }),
        )
    }

    pub fn items(&self, study_id: &str) -> Result<Value> {
        self.get(&format!("/studies/{study_id}/items"))
    }

    pub fn import_session(&self, study_id: &str, file: &ResponseFile) -> Result<Value> {
        self.post(
            &format!("/studies/{study_id}/import_session"),
            serde_json::to_value(file)?,
        )
    }

    pub fn close(&self, study_id: &str) -> Result<Value> {
        self.post(&format!("/studies/{study_id}/close"), json!({}))
    }

    /// The report as served: canonical JSON or Markdown text.
    pub fn report(&self, study_id: &str, markdown: bool) -> Result<String> {
        let fmt = if markdown { "md" } else { "machine" };
        let resp = self.send(
            self.http
                .get(self.url(&format!("/studies/{study_id}/report?format={fmt}"))),
        )?;
        resp.text().map_err(|e| anyhow!("cannot read report body: {e}"))
    }
}
