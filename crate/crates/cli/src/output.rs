use std::path::{Path, PathBuf};

use serde::Serialize;
use textkb::corpus::write_jsonl;

use crate::config::RunConfig;
use crate::error::{runtime, Result};

pub const VERSION_STAMP: &str = concat!("textkb ", env!("CARGO_PKG_VERSION"), "\n");

/// One run's output directory. Creating it records the resolved config and
/// the version stamp.
#[derive(Debug, Clone)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn create(path: &Path, cfg: &RunConfig) -> Result<Self> {
        std::fs::create_dir_all(path).map_err(runtime)?;
        let dir = RunDir { path: path.to_path_buf() };
        dir.write("config.txt", &cfg.render())?;
        dir.write("version.txt", VERSION_STAMP)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::write(self.file(name), contents).map_err(runtime)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(runtime)?;
        s.push('\n');
        self.write(name, &s)
    }

    pub fn jsonl<T: Serialize>(&self, name: &str, items: impl IntoIterator<Item = T>) -> Result<()> {
        write_jsonl(&self.file(name), items).map_err(runtime)
    }
}

pub fn markdown_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("| {} |\n", headers.join(" | "));
    out.push_str(&format!("|{}\n", " --- |".repeat(headers.len())));
    for r in rows {
        out.push_str(&format!("| {} |\n", r.join(" | ")));
    }
    out
}

pub fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_shape() {
        let t = markdown_table(&["a", "b"], &[vec!["1".into(), "2".into()]]);
        assert_eq!(t, "| a | b |\n| --- | --- |\n| 1 | 2 |\n");
    }
}
