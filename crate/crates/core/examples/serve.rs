//! Serves the session API on localhost with the built-in pools.
//!
//! ```text
//! cargo run --release --example serve [-- <port> [<data-dir>]]
//! curl -s -XPOST localhost:8080/sessions -H 'content-type: application/json' -d '{"task_id":"income"}'
//! ```

use fairguide::dataset::TaskSpec;
use fairguide::service::{default_pool, router, EventStore, Service};
use fairguide::teaching::GuidanceConfig;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let port: u16 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(8080);
    let dir = args.next().unwrap_or_else(|| "fairguide-data".into());

    let pools = vec![
        default_pool(&TaskSpec::income(), 0)?,
        default_pool(&TaskSpec::credit(), 0)?,
    ];
    let service = Service::new(EventStore::open(&dir)?, pools, GuidanceConfig::default(), 0);
    let resumed = service.recover().map_err(|e| e.message)?;
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    println!(
        "listening on {}; {resumed} stored session(s) in {dir}",
        listener.local_addr()?
    );
    axum::serve(listener, router(service)).await?;
    Ok(())
}
