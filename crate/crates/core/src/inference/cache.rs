//! Append-only JSONL cache of generations keyed by content hash.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub example_id: String,
    pub prompt_hash: String,
    pub generation: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Default)]
pub struct GenerationCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
    /// The file ends in a torn line that the next append must terminate.
    torn_tail: bool,
}

impl GenerationCache {
    /// An unbacked cache; appends stay in memory.
    pub fn in_memory() -> Self {
        GenerationCache::default()
    }

    /// Loads every well-formed line of `path`. Torn or foreign lines are
    /// skipped; later entries win.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(e),
        };
        let mut entries = HashMap::new();
        for line in text.lines() {
            if let Ok(entry) = serde_json::from_str::<CacheEntry>(line) {
                entries.insert(entry.example_id.clone(), entry);
            }
        }
        Ok(GenerationCache {
            path: Some(path.to_owned()),
            entries,
            torn_tail: !text.is_empty() && !text.ends_with('\n'),
        })
    }

    pub fn get(&self, example_id: &str) -> Option<&CacheEntry> {
        self.entries.get(example_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends one record as a single write so concurrent appenders never
    /// interleave partial lines.
    pub fn append(&mut self, example_id: &str, prompt_hash: &str, generation: &str) -> std::io::Result<()> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = CacheEntry {
            example_id: example_id.to_owned(),
            prompt_hash: prompt_hash.to_owned(),
            generation: generation.to_owned(),
            timestamp,
        };
        if let Some(path) = &self.path {
            let mut line = Vec::new();
            if self.torn_tail {
                line.push(b'\n');
            }
            serde_json::to_writer(&mut line, &entry).map_err(std::io::Error::from)?;
            line.push(b'\n');
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            file.write_all(&line)?;
            self.torn_tail = false;
        }
        self.entries.insert(entry.example_id.clone(), entry);
        Ok(())
    }
}
