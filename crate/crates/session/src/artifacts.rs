//! Output directory layout: `audio/`, `logs/`, `models/`, `config.json` and
//! `meta.json`. Wall-clock timestamps live in `meta.json` only.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::{Mode, SessionConfig};
use crate::error::{Result, SessionError};

/// Present while a run is in progress or after it failed.
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

const SUBDIRS: [&str; 3] = ["audio", "logs", "models"];

pub struct OutputDir {
    root: PathBuf,
    started_at: f64,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

impl OutputDir {
    /// Create the layout, clearing artifacts of earlier runs, and mark the
    /// directory incomplete until [`OutputDir::finish`].
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| SessionError::io(root, e))?;
        let marker = root.join(INCOMPLETE_MARKER);
        fs::write(&marker, b"run in progress or failed\n")
            .map_err(|e| SessionError::io(&marker, e))?;
        for name in ["meta.json", "config.json"] {
            let p = root.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| SessionError::io(&p, e))?;
            }
        }
        for sub in SUBDIRS {
            let dir = root.join(sub);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| SessionError::io(&dir, e))?;
            }
            fs::create_dir_all(&dir).map_err(|e| SessionError::io(&dir, e))?;
        }
        Ok(OutputDir {
            root: root.to_owned(),
            started_at: now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(rel);
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| SessionError::json(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| SessionError::io(&path, e))?;
        Ok(path)
    }

    pub fn jsonl(&self, rel: &str) -> Result<JsonlWriter> {
        JsonlWriter::create(&self.path(rel))
    }

    /// Write `meta.json` and drop the incomplete marker.
    pub fn finish(self, config: &SessionConfig, status: &str) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Meta<'a> {
            tool: &'static str,
            version: &'static str,
            mode: Mode,
            seed: u64,
            status: &'a str,
            started_at: f64,
            finished_at: f64,
        }
        self.write_json(
            "meta.json",
            &Meta {
                tool: "corpusnil",
                version: env!("CARGO_PKG_VERSION"),
                mode: config.mode,
                seed: config.seed,
                status,
                started_at: self.started_at,
                finished_at: now(),
            },
        )?;
        let marker = self.path(INCOMPLETE_MARKER);
        fs::remove_file(&marker).map_err(|e| SessionError::io(&marker, e))?;
        Ok(self.root)
    }
}

/// JSON Lines file writer.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
    lines: usize,
}

impl JsonlWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| SessionError::io(path, e))?;
        Ok(JsonlWriter {
            path: path.to_owned(),
            out: BufWriter::new(file),
            lines: 0,
        })
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.out, value).map_err(|e| SessionError::json(&self.path, e))?;
        self.out
            .write_all(b"\n")
            .map_err(|e| SessionError::io(&self.path, e))?;
        self.lines += 1;
        Ok(())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn finish(mut self) -> Result<usize> {
        self.out.flush().map_err(|e| SessionError::io(&self.path, e))?;
        Ok(self.lines)
    }
}
