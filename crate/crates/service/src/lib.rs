//! Local HTTP API over a loaded catalog: browse songs and segments, stream
//! segment audio, edit class prompts and re-score from cached embeddings.
//!
//! Every JSON response is `{"revision": r, "data": ...}` and carries an
//! `X-Catalog-Revision` header. Handlers read one catalog snapshot, so a
//! response never mixes revisions.

mod range;
mod routes;

use std::sync::{Arc, Mutex, RwLock};

use cratedig_core::{Catalog, ClassConfig, Encoder, PipelineConfig};

pub use range::{parse_range, ByteRange};
pub use routes::router;

pub const REVISION_HEADER: &str = "x-catalog-revision";

/// A catalog frozen at one revision.
#[derive(Debug)]
pub struct Snapshot {
    pub revision: u64,
    pub catalog: Catalog,
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    working: Mutex<ClassConfig>,
    /// Held for the duration of a class edit or a rescore.
    writer: tokio::sync::Mutex<()>,
    encoder: Arc<Encoder>,
    pipeline: PipelineConfig,
}

impl AppState {
    pub fn new(catalog: Catalog, encoder: Arc<Encoder>, pipeline: PipelineConfig) -> Arc<Self> {
        let working = catalog.class_config.clone();
        Arc::new(Self {
            snapshot: RwLock::new(Arc::new(Snapshot { revision: 0, catalog })),
            working: Mutex::new(working),
            writer: tokio::sync::Mutex::new(()),
            encoder,
            pipeline,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn working_classes(&self) -> ClassConfig {
        self.working.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn encoder(&self) -> &Arc<Encoder> {
        &self.encoder
    }

    fn publish(&self, catalog: Catalog) -> u64 {
        let mut slot = self.snapshot.write().unwrap_or_else(|e| e.into_inner());
        let revision = slot.revision + 1;
        *slot = Arc::new(Snapshot { revision, catalog });
        revision
    }

    fn set_working(&self, config: ClassConfig) {
        *self.working.lock().unwrap_or_else(|e| e.into_inner()) = config;
    }
}

/// Serves the API on a bound listener until the process is stopped.
pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
