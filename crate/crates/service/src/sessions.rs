//! Reader sessions backed by one append-only JSONL journal each.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use avn_core::Stage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::{Mutex, RwLock};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unassisted,
    Assisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum JournalEvent {
    Created { session_id: String, reader_id: String, mode: Mode, cases: Vec<String>, at_ms: u64 },
    Served { case_id: String, index: usize, at_ms: u64 },
    Reading { case_id: String, stage: Stage, elapsed: f64, elapsed_server: f64, at_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub case_id: String,
    pub stage: Stage,
    /// Seconds reported by the client.
    pub elapsed: f64,
    /// Seconds between serving the case and receiving the reading; authoritative.
    pub elapsed_server: f64,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub session_id: String,
    pub reader_id: String,
    pub mode: Mode,
    pub cases: Vec<String>,
    /// First time each case was served.
    pub served: BTreeMap<String, u64>,
    pub readings: Vec<Reading>,
    journal: PathBuf,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

impl Session {
    fn apply(&mut self, ev: &JournalEvent) {
        match ev {
            JournalEvent::Created { .. } => {}
            JournalEvent::Served { case_id, at_ms, .. } => {
                self.served.entry(case_id.clone()).or_insert(*at_ms);
            }
            JournalEvent::Reading { case_id, stage, elapsed, elapsed_server, at_ms } => self.readings.push(Reading {
                case_id: case_id.clone(),
                stage: *stage,
                elapsed: *elapsed,
                elapsed_server: *elapsed_server,
                timestamp_ms: *at_ms,
            }),
        }
    }

    fn append(&mut self, ev: JournalEvent) -> Result<(), ApiError> {
        let line = serde_json::to_string(&ev).map_err(|e| ApiError::Internal(e.to_string()))?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.journal)
            .map_err(|e| ApiError::Internal(format!("{}: {e}", self.journal.display())))?;
        writeln!(f, "{line}").and_then(|_| f.sync_data()).map_err(|e| ApiError::Internal(e.to_string()))?;
        self.apply(&ev);
        Ok(())
    }

    pub fn reading_for(&self, case_id: &str) -> Option<&Reading> {
        self.readings.iter().find(|r| r.case_id == case_id)
    }

    /// Index and id of the first case without a reading.
    pub fn next_case(&self) -> Option<(usize, &str)> {
        self.cases.iter().enumerate().find(|(_, c)| self.reading_for(c).is_none()).map(|(i, c)| (i, c.as_str()))
    }

    pub fn is_complete(&self) -> bool {
        self.readings.len() == self.cases.len()
    }

    /// Records that `case_id` was shown; repeated serves keep the first time.
    pub fn mark_served(&mut self, index: usize, case_id: &str) -> Result<(), ApiError> {
        if self.served.contains_key(case_id) {
            return Ok(());
        }
        self.append(JournalEvent::Served { case_id: case_id.to_string(), index, at_ms: now_ms() })
    }

    /// Cases are read strictly in order; each exactly once.
    pub fn submit(&mut self, case_id: &str, stage: Stage, elapsed: f64) -> Result<&Reading, ApiError> {
        if !self.cases.iter().any(|c| c == case_id) {
            return Err(ApiError::Unprocessable(format!("case {case_id} is not part of this session")));
        }
        if self.reading_for(case_id).is_some() {
            return Err(ApiError::Conflict(format!("case {case_id} already has a reading")));
        }
        if !(elapsed > 0.0 && elapsed.is_finite()) {
            return Err(ApiError::Unprocessable("elapsed must be a positive number of seconds".into()));
        }
        let served_at = match (self.next_case(), self.served.get(case_id)) {
            (Some((_, next)), Some(&t)) if next == case_id => t,
            _ => return Err(ApiError::Unprocessable(format!("case {case_id} has not been served as the next case"))),
        };
        let at_ms = now_ms();
        let elapsed_server = at_ms.saturating_sub(served_at) as f64 / 1000.0;
        self.append(JournalEvent::Reading { case_id: case_id.to_string(), stage, elapsed, elapsed_server, at_ms })?;
        Ok(self.readings.last().expect("just appended"))
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// All sessions, rebuilt from their journals at startup.
pub struct SessionStore {
    dir: PathBuf,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    counter: AtomicU64,
}

fn replay(path: &Path) -> Result<Session, String> {
    let f = File::open(path).map_err(|e| e.to_string())?;
    let mut session: Option<Session> = None;
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JournalEvent = serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?;
        match (&mut session, &ev) {
            (None, JournalEvent::Created { session_id, reader_id, mode, cases, .. }) => {
                session = Some(Session {
                    session_id: session_id.clone(),
                    reader_id: reader_id.clone(),
                    mode: *mode,
                    cases: cases.clone(),
                    served: BTreeMap::new(),
                    readings: Vec::new(),
                    journal: path.to_path_buf(),
                });
            }
            (Some(s), _) => s.apply(&ev),
            (None, _) => return Err("journal does not start with a created event".into()),
        }
    }
    session.ok_or_else(|| "empty journal".into())
}

impl SessionStore {
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut sessions = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for p in entries {
            match replay(&p) {
                Ok(s) => {
                    sessions.insert(s.session_id.clone(), Arc::new(Mutex::new(s)));
                }
                Err(e) => log::warn!("skipping journal {}: {e}", p.display()),
            }
        }
        let counter = AtomicU64::new(sessions.len() as u64);
        Ok(Self { dir: dir.to_path_buf(), sessions: RwLock::new(sessions), counter })
    }

    pub async fn create(&self, reader_id: &str, mode: Mode, cases: Vec<String>) -> Result<SessionHandle, ApiError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst);
        let at_ms = now_ms();
        let digest = Sha256::digest(format!("{reader_id}\0{mode:?}\0{at_ms}\0{n}\0{}", std::process::id()));
        let session_id: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        let session_id = format!("s{n:04}-{session_id}");
        let mut s = Session {
            session_id: session_id.clone(),
            reader_id: reader_id.to_string(),
            mode,
            cases: Vec::new(),
            served: BTreeMap::new(),
            readings: Vec::new(),
            journal: self.dir.join(format!("{session_id}.jsonl")),
        };
        s.append(JournalEvent::Created {
            session_id: session_id.clone(),
            reader_id: reader_id.to_string(),
            mode,
            cases: cases.clone(),
            at_ms,
        })?;
        s.cases = cases;
        let h = Arc::new(Mutex::new(s));
        self.sessions.write().await.insert(session_id, h.clone());
        Ok(h)
    }

    pub async fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    /// Handles in session-id order.
    pub async fn all(&self) -> Vec<SessionHandle> {
        self.sessions.read().await.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn journal_replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::open(dir.path()).unwrap();
        let h = store.create("r1", Mode::Assisted, vec!["a".into(), "b".into()]).await.unwrap();
        let id = {
            let mut s = h.lock().await;
            assert!(matches!(s.submit("a", Stage::II, 1.0), Err(ApiError::Unprocessable(_))));
            s.mark_served(0, "a").unwrap();
            s.submit("a", Stage::II, 2.5).unwrap();
            assert!(matches!(s.submit("a", Stage::II, 1.0), Err(ApiError::Conflict(_))));
            assert!(matches!(s.submit("zz", Stage::II, 1.0), Err(ApiError::Unprocessable(_))));
            assert_eq!(s.next_case(), Some((1, "b")));
            s.session_id.clone()
        };
        let again = SessionStore::open(dir.path()).unwrap();
        let s = again.get(&id).await.unwrap();
        let s = s.lock().await;
        assert_eq!(
            (s.mode, s.readings.len(), s.readings[0].stage, s.readings[0].elapsed),
            (Mode::Assisted, 1, Stage::II, 2.5)
        );
        assert!(!s.is_complete());
    }
}
