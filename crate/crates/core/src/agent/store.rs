use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{AuditEntry, SelfPlaySession};

pub const SESSION_FILE: &str = "session.json";
pub const TRANSCRIPT_FILE: &str = "transcript.jsonl";
pub const DOT_FILE: &str = "dot.xml";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const VERDICT_FILE: &str = "verdict.json";

/// One directory per session under a root, named `session-0001` upwards.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Claims the next free session id by creating its directory.
    pub fn allocate(&self) -> std::io::Result<String> {
        let mut n = self.list()?.len() + 1;
        loop {
            let id = format!("session-{n:04}");
            match fs::create_dir(self.dir(&id)) {
                Ok(()) => return Ok(id),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e),
            }
        }
    }

    pub fn list(&self) -> std::io::Result<Vec<String>> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| n.starts_with("session-"))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn save(&self, session: &SelfPlaySession, audit: &[AuditEntry]) -> std::io::Result<()> {
        let dir = self.dir(&session.id);
        fs::create_dir_all(&dir)?;
        fs::write(dir.join(SESSION_FILE), pretty(session)?)?;
        fs::write(dir.join(DOT_FILE), session.dot.serialize())?;
        let exchanges = session.rounds.iter().flat_map(|r| r.exchanges.iter());
        write_lines(&dir.join(TRANSCRIPT_FILE), exchanges)?;
        write_lines(&dir.join(AUDIT_FILE), audit.iter())?;
        let verdict = match &session.verdict {
            Some(v) => pretty(v)?,
            None => pretty(&serde_json::json!({ "verdict": null, "status": session.status }))?,
        };
        fs::write(dir.join(VERDICT_FILE), verdict)
    }

    pub fn load(&self, id: &str) -> std::io::Result<SelfPlaySession> {
        let text = fs::read_to_string(self.dir(id).join(SESSION_FILE))?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn pretty<T: Serialize + ?Sized>(value: &T) -> std::io::Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    Ok(text)
}

fn write_lines<'a, T: Serialize + 'a>(path: &Path, items: impl Iterator<Item = &'a T>) -> std::io::Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    fs::write(path, out)
}
