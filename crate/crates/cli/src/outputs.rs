//! Output bookkeeping: every file a command writes is registered so that a
//! failing run leaves nothing half-written behind, and every run writes a
//! configuration echo next to its primary output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::{CmdResult, Failure};

/// Files written by the current command, removed again unless committed.
pub struct Outputs {
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Outputs { written: Vec::new(), committed: false }
    }

    pub fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> CmdResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        self.written.push(path.to_path_buf());
        fs::write(path, contents)?;
        Ok(())
    }

    /// Writes `<primary>.config.json` holding the command name and its
    /// arguments.
    pub fn echo<T: Serialize>(&mut self, primary: &Path, command: &str, args: &T) -> CmdResult<()> {
        #[derive(Serialize)]
        struct Echo<'a, T> {
            command: &'a str,
            version: &'a str,
            arguments: &'a T,
        }
        let echo = Echo { command, version: env!("CARGO_PKG_VERSION"), arguments: args };
        let text = growthpath::model_io::to_exact_json(&echo)?;
        self.write(&sidecar(primary, "config.json"), text)
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

/// `<path>.<suffix>` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".");
    name.push(suffix);
    path.with_file_name(name)
}

/// Parses a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> CmdResult<Vec<T>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Failure::Usage(format!("cannot parse {s:?} in {what}"))))
        .collect()
}
