//! The review API over a run store: list runs, fetch disagreements, post an annotation.
//!
//! Pass `--keep` to leave the server running on 127.0.0.1:8080 until Ctrl-C.

use kgaudit::service;
use kgaudit::store::RunStore;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = std::env::args().nth(1).filter(|a| a != "--keep").unwrap_or_else(|| "target/kgaudit-demo/data".into());
    let keep = std::env::args().any(|a| a == "--keep");
    let app = service::router(RunStore::new(&data), None);
    let addr = if keep { "127.0.0.1:8080" } else { "127.0.0.1:0" };
    let listener = service::bind(addr.parse()?).await?;
    let local = listener.local_addr()?;
    println!("serving {data} on http://{local}");
    if keep {
        service::serve(listener, app, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        return Ok(());
    }
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(service::serve(listener, app, async {
        let _ = rx.await;
    }));
    let body = tokio::task::spawn_blocking(move || {
        reqwest::blocking::get(format!("http://{local}/api/v1/runs")).and_then(|r| r.text())
    })
    .await??;
    println!("GET /api/v1/runs -> {body}");
    let _ = tx.send(());
    server.await??;
    Ok(())
}
