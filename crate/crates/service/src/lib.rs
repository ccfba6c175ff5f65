//! Annotation service: trip catalog, annotator assignment, mark capture,
//! suggestions and finalization over a corpus directory.

pub mod assign;
pub mod http;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use assign::{assign_trajectories, AssignError};
pub use http::router;
pub use store::{ServiceError, Store, StoreConfig};

/// Serves `store` on an already bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener, store: Arc<Store>) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}

/// Binds `addr` and serves. Returns the bound address through `on_bound`
/// before blocking, which lets callers bind port 0.
pub async fn run(
    addr: SocketAddr,
    store: Arc<Store>,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    serve(listener, store).await
}
