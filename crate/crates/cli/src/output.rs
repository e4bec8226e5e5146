use anyhow::{Context as _, Result};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Files written by one command; removed again if the command fails.
#[derive(Default)]
pub struct Outputs {
    written: Mutex<Vec<PathBuf>>,
}

impl Outputs {
    pub fn track(&self, path: PathBuf) -> PathBuf {
        self.written.lock().unwrap().push(path.clone());
        path
    }

    pub fn discard(&self) {
        for p in self.written.lock().unwrap().drain(..) {
            let _ = std::fs::remove_file(p);
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

/// Shortest representation that reads back to the same value.
pub fn num(x: f64) -> String {
    x.to_string()
}

/// Per-record outcomes in manifest order; fails listing every bad record.
pub fn collect_records<T>(results: Vec<(String, Result<T>)>) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    for (id, r) in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push(format!("record {id}: {e:#}")),
        }
    }
    if failed.is_empty() {
        Ok(ok)
    } else {
        for f in &failed {
            eprintln!("error: {f}");
        }
        anyhow::bail!("{} of {} records failed", failed.len(), failed.len() + ok.len())
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
