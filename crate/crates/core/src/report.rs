//! Report plumbing: content hashes and JSON-lines emission with a markdown
//! summary. Reports embed the tool version and the hashes of the config and
//! game so artifacts are diffable across runs.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{GameError, Result};

pub fn content_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(16);
    for b in digest.iter().take(8) {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Accumulates one JSON object per line plus a human-readable summary table.
pub struct ReportWriter {
    pub lines: Vec<String>,
    pub summary: Vec<(String, String)>,
    pub version: String,
    pub config_hash: String,
    pub game_hash: String,
}

impl ReportWriter {
    pub fn new(config_text: &str, game_text: &str) -> Self {
        Self {
            lines: Vec::new(),
            summary: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: content_hash(config_text),
            game_hash: content_hash(game_text),
        }
    }

    pub fn record<T: Serialize>(&mut self, kind: &str, payload: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a, T> {
            kind: &'a str,
            version: &'a str,
            config_hash: &'a str,
            game_hash: &'a str,
            payload: &'a T,
        }
        let line = serde_json::to_string(&Line {
            kind,
            version: &self.version,
            config_hash: &self.config_hash,
            game_hash: &self.game_hash,
            payload,
        })
        .map_err(|e| GameError::Parse(e.to_string()))?;
        self.lines.push(line);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: String) {
        self.summary.push((key.to_string(), value));
    }

    pub fn jsonl(&self) -> String {
        let mut out = self.lines.join("\n");
        out.push('\n');
        out
    }

    pub fn markdown(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {title}\n");
        let _ = writeln!(
            out,
            "version `{}` | config `{}` | game `{}`\n",
            self.version, self.config_hash, self.game_hash
        );
        let _ = writeln!(out, "| check | result |");
        let _ = writeln!(out, "|---|---|");
        for (k, v) in &self.summary {
            let _ = writeln!(out, "| {k} | {v} |");
        }
        out
    }

    pub fn write_to_dir(&self, dir: &std::path::Path, title: &str) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| GameError::Parse(format!("cannot create {}: {e}", dir.display())))?;
        let mut f = std::fs::File::create(dir.join("report.jsonl"))
            .map_err(|e| GameError::Parse(e.to_string()))?;
        f.write_all(self.jsonl().as_bytes())
            .map_err(|e| GameError::Parse(e.to_string()))?;
        let mut m = std::fs::File::create(dir.join("summary.md"))
            .map_err(|e| GameError::Parse(e.to_string()))?;
        m.write_all(self.markdown(title).as_bytes())
            .map_err(|e| GameError::Parse(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_short() {
        assert_eq!(content_hash("abc"), content_hash("abc"));
        assert_ne!(content_hash("abc"), content_hash("abd"));
        assert_eq!(content_hash("x").len(), 16);
    }

    #[test]
    fn jsonl_lines_carry_hashes() {
        let mut w = ReportWriter::new("cfg", "game");
        w.record("unit", &serde_json::json!({"ok": true})).unwrap();
        let text = w.jsonl();
        assert!(text.contains("config_hash"));
        assert!(text.ends_with('\n'));
    }
}
