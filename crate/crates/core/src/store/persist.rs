use super::{Session, StoreError};
use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// One `<id>.json` document per session plus an append-only
/// `<id>.events.jsonl` log with one event record per line.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    appended: Mutex<HashMap<String, usize>>,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            appended: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn document_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    fn events_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.events.jsonl"))
    }

    pub fn save(&self, session: &Session) -> Result<(), StoreError> {
        let id = &session.session_id;
        let tmp = self.dir.join(format!(".{id}.json.tmp"));
        fs::write(&tmp, session.serialize())?;
        fs::rename(&tmp, self.document_path(id))?;

        let mut appended = self.appended.lock().expect("store lock");
        let written = match appended.get(id) {
            Some(n) => *n,
            None => count_lines(&self.events_path(id))?,
        };
        if session.events.len() > written {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.events_path(id))?;
            for event in &session.events[written..] {
                let line = serde_json::to_string(event).expect("event serializes");
                writeln!(file, "{line}")?;
            }
        }
        appended.insert(id.clone(), session.events.len());
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        let path = self.document_path(id);
        if !path.exists() {
            return Err(StoreError::NotFound(id.to_string()));
        }
        Session::load(&fs::read(path)?)
    }

    /// Ids of every stored session, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids: Vec<String> = fs::read_dir(&self.dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let id = name.strip_suffix(".json")?;
                (!id.starts_with('.')).then(|| id.to_string())
            })
            .collect();
        ids.sort();
        Ok(ids)
    }
}

fn count_lines(path: &Path) -> Result<usize, StoreError> {
    match fs::File::open(path) {
        Ok(f) => Ok(BufReader::new(f).lines().count()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(0),
        Err(e) => Err(e.into()),
    }
}
