//! Command-line front-end: `gen`, `sds`, `ablate` and `mesh`.
//!
//! Every command writes into a fresh timestamped directory under `--out`
//! and finishes with a `manifest.json`.

pub mod args;
pub mod commands;
pub mod manifest;

use std::path::PathBuf;

pub use args::{Cli, Command};
pub use commands::{cmd_ablate, cmd_gen, cmd_mesh, cmd_sds};
pub use manifest::RunManifest;

/// Runs one parsed command and returns its output directory.
pub fn run(cli: &Cli) -> anyhow::Result<PathBuf> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Sds(a) => cmd_sds(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Mesh(a) => cmd_mesh(a),
    }
}

/// Caps the global thread pool at `SIRLAB_THREADS` when it is set.
pub fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("SIRLAB_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("SIRLAB_THREADS must be a positive integer, got '{v}'"))?;
        anyhow::ensure!(n > 0, "SIRLAB_THREADS must be a positive integer");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}
