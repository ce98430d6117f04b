//! Output plumbing: atomic file writes and small CSV emitters.
//!
//! Every file written by a run starts with a `# config_hash = ...` comment
//! (CSV) or carries the hash in its manifest (datasets, checkpoints), so
//! any two artifacts of one run can be matched up.

use crate::error::Result;
use std::path::Path;

/// Write-temp-then-rename so readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A CSV table with a config-hash header comment.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(config_hash: &str, columns: &[&str]) -> Csv {
        let mut buf = format!("# config_hash = {config_hash}\n");
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Csv { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.buf.as_bytes())
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }
}

pub fn fmt_f64(v: f64) -> String {
    // Shortest representation that round-trips.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}
