//! Per-run manifest: enough context to re-run a command and interpret its
//! artifacts on another machine.

use lztime::timing;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct MachineDescriptor {
    pub os: &'static str,
    pub arch: &'static str,
    pub timer_source: String,
    pub core_pinned: bool,
}

impl MachineDescriptor {
    fn detect() -> Self {
        MachineDescriptor {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            timer_source: timing::default_clock().describe(),
            core_pinned: std::env::args().any(|a| a == "--pin-core"),
        }
    }
}

#[derive(Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub argv: Vec<String>,
    pub config: toml::Value,
    pub machine: MachineDescriptor,
    pub artifacts: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new<A: Serialize>(
        subcommand: &str,
        args: &A,
        artifacts: Vec<PathBuf>,
    ) -> lztime::Result<Self> {
        let config = toml::Value::try_from(args)
            .map_err(|e| lztime::Error::config("manifest", e.to_string()))?;
        Ok(RunManifest {
            subcommand: subcommand.to_string(),
            argv: std::env::args().collect(),
            config,
            machine: MachineDescriptor::detect(),
            artifacts,
        })
    }

    pub fn write(&self, out_dir: &Path) -> lztime::Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| lztime::Error::config("manifest", e.to_string()))?;
        std::fs::write(out_dir.join("manifest.toml"), text)?;
        Ok(())
    }
}
