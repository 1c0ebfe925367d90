//! serve: run a checkpoint behind the bridge protocol until interrupted.

use std::io::Write;
use std::sync::mpsc;

use coinbot::bridge::serve_builtin;
use coinbot::policy::{PolicyCheckpoint, SamplerConfig};

use crate::error::CliError;

pub fn serve(ckpt: PolicyCheckpoint, sampler: SamplerConfig, addr: &str) -> Result<(), CliError> {
    let fingerprint = ckpt.fingerprint();
    let server = serve_builtin(ckpt, sampler, addr)?;
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })
    .map_err(|e| CliError::Endpoint(format!("cannot install signal handler: {e}")))?;
    // scripts wait for this line, so flush it right away
    println!("listening on {} ({fingerprint})", server.local_addr());
    std::io::stdout().flush()?;
    let _ = rx.recv();
    eprintln!("shutting down");
    server.shutdown();
    Ok(())
}
