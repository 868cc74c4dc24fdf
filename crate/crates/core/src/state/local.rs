use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{Backend, LockInfo, StateError, StateSnapshot};

/// State in a JSON file, locked through a sibling `<file>.lock`.
pub struct LocalBackend {
    path: PathBuf,
    lock_path: PathBuf,
    guard: Mutex<()>,
}

impl LocalBackend {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let mut lock_path = path.clone().into_os_string();
        lock_path.push(".lock");
        LocalBackend {
            path,
            lock_path: lock_path.into(),
            guard: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lock_path(&self) -> &Path {
        &self.lock_path
    }

    /// The current lock holder, if any.
    pub fn current_lock(&self) -> Result<Option<LockInfo>, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        self.read_lock()
    }

    fn read_lock(&self) -> Result<Option<LockInfo>, StateError> {
        match fs::read_to_string(&self.lock_path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| StateError::Corrupt(format!("lock file: {e}"))),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn temp_sibling(&self, target: &Path) -> PathBuf {
        let mut name = target.as_os_str().to_owned();
        name.push(format!(".tmp-{}", uuid::Uuid::new_v4()));
        name.into()
    }

    fn write_durably(&self, tmp: &Path, contents: &[u8]) -> std::io::Result<()> {
        let mut f = fs::File::create(tmp)?;
        f.write_all(contents)?;
        f.sync_all()
    }

    fn read_unlocked(&self) -> Result<StateSnapshot, StateError> {
        match fs::read_to_string(&self.path) {
            Ok(text) => StateSnapshot::from_json_str(&text),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(StateSnapshot::empty()),
            Err(e) => Err(e.into()),
        }
    }
}

impl Backend for LocalBackend {
    fn read_state(&self) -> Result<StateSnapshot, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        self.read_unlocked()
    }

    fn write_state(
        &self,
        snapshot: &StateSnapshot,
        expected_serial: u64,
        token: &str,
    ) -> Result<u64, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        match self.read_lock()? {
            Some(info) if info.token == token => {}
            _ => return Err(StateError::LockNotHeld),
        }
        if snapshot.serial != expected_serial {
            return Err(StateError::SnapshotSerial {
                snapshot: snapshot.serial,
                expected: expected_serial,
            });
        }
        let stored = self.read_unlocked()?;
        if stored.serial != expected_serial {
            return Err(StateError::SerialConflict {
                expected: expected_serial,
                stored: stored.serial,
            });
        }
        if stored.serial > 0 && stored.lineage != snapshot.lineage {
            return Err(StateError::LineageMismatch {
                stored: stored.lineage,
                given: snapshot.lineage.clone(),
            });
        }
        let mut next = snapshot.clone();
        next.serial = expected_serial + 1;
        let text = next.to_json_string()?;
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.temp_sibling(&self.path);
        let result = self
            .write_durably(&tmp, text.as_bytes())
            .and_then(|()| fs::rename(&tmp, &self.path));
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result?;
        Ok(next.serial)
    }

    fn lock(&self, info: &LockInfo) -> Result<String, StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(dir) = self.lock_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let body = serde_json::to_vec_pretty(info).expect("lock info serializes");
        let tmp = self.temp_sibling(&self.lock_path);
        self.write_durably(&tmp, &body)?;
        // Linking a complete file into place is both exclusive and atomic.
        let linked = fs::hard_link(&tmp, &self.lock_path);
        let _ = fs::remove_file(&tmp);
        match linked {
            Ok(()) => Ok(info.token.clone()),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => match self.read_lock()? {
                Some(holder) => Err(StateError::AlreadyLocked(Box::new(holder))),
                None => Err(StateError::Io(e)),
            },
            Err(e) => Err(e.into()),
        }
    }

    fn unlock(&self, token: &str) -> Result<(), StateError> {
        let _g = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        match self.read_lock()? {
            None => Err(StateError::NotLocked),
            Some(info) if info.token != token => Err(StateError::WrongToken),
            Some(_) => {
                fs::remove_file(&self.lock_path)?;
                Ok(())
            }
        }
    }

    fn describe(&self) -> String {
        self.path.display().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::LockOperation;

    fn backend() -> (tempfile::TempDir, LocalBackend) {
        let dir = tempfile::tempdir().unwrap();
        let b = LocalBackend::new(dir.path().join("microform.tfstate"));
        (dir, b)
    }

    fn info() -> LockInfo {
        LockInfo::new("tester", LockOperation::Apply)
    }

    #[test]
    fn missing_file_is_empty_state() {
        let (_d, b) = backend();
        let s = b.read_state().unwrap();
        assert_eq!(s.serial, 0);
        assert!(s.resources.is_empty());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let (_d, b) = backend();
        fs::write(b.path(), "{\"format_version\": 1, \"serial\"").unwrap();
        assert!(matches!(b.read_state(), Err(StateError::Corrupt(_))));
    }

    #[test]
    fn serial_increments_and_conflicts() {
        let (_d, b) = backend();
        let token = b.lock(&info()).unwrap();
        let s = b.read_state().unwrap();
        assert_eq!(b.write_state(&s, 0, &token).unwrap(), 1);
        let s1 = b.read_state().unwrap();
        assert_eq!(s1.lineage, s.lineage);
        assert_eq!(b.write_state(&s1, 1, &token).unwrap(), 2);
        let mut stale = s1.clone();
        stale.serial = 1;
        assert!(matches!(
            b.write_state(&stale, 1, &token),
            Err(StateError::SerialConflict { expected: 1, stored: 2 })
        ));
    }

    #[test]
    fn write_requires_lock() {
        let (_d, b) = backend();
        let s = b.read_state().unwrap();
        assert!(matches!(b.write_state(&s, 0, "nope"), Err(StateError::LockNotHeld)));
    }

    #[test]
    fn lock_exclusion_and_tokens() {
        let (_d, b) = backend();
        let first = info();
        let t1 = b.lock(&first).unwrap();
        match b.lock(&info()) {
            Err(StateError::AlreadyLocked(holder)) => assert_eq!(holder.token, t1),
            other => panic!("expected already-locked, got {other:?}"),
        }
        assert!(matches!(b.unlock("other"), Err(StateError::WrongToken)));
        b.unlock(&t1).unwrap();
        assert!(matches!(b.unlock(&t1), Err(StateError::NotLocked)));
        let t2 = b.lock(&info()).unwrap();
        assert_ne!(t1, t2);
    }

    #[test]
    fn stale_token_after_force_unlock() {
        let (_d, b) = backend();
        let t1 = b.lock(&info()).unwrap();
        b.unlock(&t1).unwrap();
        let _t2 = b.lock(&info()).unwrap();
        assert!(matches!(b.unlock(&t1), Err(StateError::WrongToken)));
    }
}
