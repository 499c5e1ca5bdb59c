//! HTTP service hosting the engines over a durable event log.
//!
//! Writers are serialized through the log: a write clones the current
//! snapshot, applies its commands, appends them to the log and only then
//! publishes the new snapshot. Readers never see partial writes.

pub mod api;
pub mod log;
pub mod state;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use thiserror::Error;

pub use api::{router, ApiError, Engines};
pub use log::{EventLog, LogError, LogRecord, Recovered};
pub use state::{Applied, CityState, Command, StateError, TrainSummary};

use crate::model::{Config, PostRegistry};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot replay record {seq}: {message}")]
    Replay { seq: u64, message: String },
}

#[derive(Debug, Error)]
pub enum WriteError {
    /// Command `index` of the batch was rejected; nothing was written.
    #[error("{error}")]
    Rejected { index: usize, error: StateError },
    #[error(transparent)]
    Storage(#[from] LogError),
}

#[derive(Debug)]
pub struct Service {
    snapshot: RwLock<Arc<CityState>>,
    log: Mutex<EventLog>,
}

/// Rebuild state from recovered records.
pub fn replay_records(mut state: CityState, records: &[LogRecord]) -> Result<CityState, ServiceError> {
    for rec in records {
        let cmd = Command::from_record(&rec.kind, &rec.payload)
            .map_err(|message| ServiceError::Replay { seq: rec.seq, message })?;
        state.apply(&cmd).map_err(|e| ServiceError::Replay { seq: rec.seq, message: e.to_string() })?;
        state.last_seq = rec.seq;
    }
    Ok(state)
}

impl Service {
    /// Open the log under `data_dir` and replay it.
    pub fn open(config: Config, registry: PostRegistry, data_dir: impl AsRef<Path>) -> Result<(Service, Recovered), ServiceError> {
        let (log, recovered) = EventLog::open(data_dir)?;
        let state = replay_records(CityState::new(config, registry), &recovered.records)?;
        tracing::info!(records = recovered.records.len(), "state recovered");
        let service = Service { snapshot: RwLock::new(Arc::new(state)), log: Mutex::new(log) };
        Ok((service, recovered))
    }

    /// The current immutable state.
    pub fn snapshot(&self) -> Arc<CityState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Apply and persist a batch atomically.
    pub fn execute(&self, commands: &[Command]) -> Result<Vec<Applied>, WriteError> {
        self.execute_with(|_| Ok(commands.to_vec()))
    }

    /// Like `execute`, with the batch built from the state it will apply
    /// to while holding the writer lock.
    pub fn execute_with(
        &self,
        build: impl FnOnce(&CityState) -> Result<Vec<Command>, StateError>,
    ) -> Result<Vec<Applied>, WriteError> {
        let mut log = self.log.lock().expect("log lock");
        let mut next = CityState::clone(&self.snapshot());
        let commands = build(&next).map_err(|error| WriteError::Rejected { index: 0, error })?;
        let mut applied = Vec::with_capacity(commands.len());
        for (index, cmd) in commands.iter().enumerate() {
            applied.push(next.apply(cmd).map_err(|error| WriteError::Rejected { index, error })?);
        }
        let records = log.append(commands.iter().map(|c| (c.kind().to_string(), c.payload())), Utc::now())?;
        if let Some(last) = records.last() {
            next.last_seq = last.seq;
        }
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(applied)
    }
}

/// Serve the API until Ctrl-C.
pub async fn serve(service: Arc<Service>, engines: Engines, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(service, engines))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
