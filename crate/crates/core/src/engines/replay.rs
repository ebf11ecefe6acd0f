use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use super::{Capabilities, ChatRequest, Completion, EngineError, Transport};

#[derive(Serialize, Deserialize)]
struct Entry {
    request: ChatRequest,
    completion: Completion,
}

/// Directory of recorded completions, one `<request-hash>.json` per request.
///
/// With an inner transport, misses are forwarded and recorded; without one,
/// a miss is an error. Reads run concurrently, writes are exclusive.
pub struct ReplayTransport {
    dir: PathBuf,
    label: String,
    inner: Option<Arc<dyn Transport>>,
    lock: RwLock<()>,
}

impl ReplayTransport {
    pub fn open(dir: &Path, inner: Option<Arc<dyn Transport>>) -> Result<Self, EngineError> {
        fs::create_dir_all(dir)
            .map_err(|e| EngineError::Config(format!("replay dir {}: {e}", dir.display())))?;
        let label = match &inner {
            Some(t) => format!("replay({})", t.endpoint()),
            None => format!("replay:{}", dir.display()),
        };
        Ok(ReplayTransport {
            dir: dir.to_owned(),
            label,
            inner,
            lock: RwLock::new(()),
        })
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Looks up a recorded completion without touching the inner transport.
    pub fn lookup(&self, request: &ChatRequest) -> Result<Option<Completion>, EngineError> {
        let path = self.path_for(&request.key());
        let _guard = self.lock.read().unwrap_or_else(|e| e.into_inner());
        match fs::read(&path) {
            Ok(bytes) => {
                let entry: Entry = serde_json::from_slice(&bytes).map_err(|e| EngineError::Protocol {
                    endpoint: self.label.clone(),
                    message: format!("corrupt replay entry {}: {e}", path.display()),
                })?;
                Ok(Some(entry.completion))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(EngineError::Protocol {
                endpoint: self.label.clone(),
                message: format!("{}: {e}", path.display()),
            }),
        }
    }

    /// Stores a completion for `request`.
    pub fn record(&self, request: &ChatRequest, completion: &Completion) -> Result<(), EngineError> {
        let key = request.key();
        let path = self.path_for(&key);
        let entry = Entry {
            request: request.clone(),
            completion: completion.clone(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).expect("replay entries serialize");
        let _guard = self.lock.write().unwrap_or_else(|e| e.into_inner());
        let tmp = self.dir.join(format!("{key}.partial"));
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| EngineError::Protocol {
                endpoint: self.label.clone(),
                message: format!("cannot record {}: {e}", path.display()),
            })
    }
}

impl Transport for ReplayTransport {
    fn endpoint(&self) -> &str {
        &self.label
    }

    fn capabilities(&self) -> Capabilities {
        match &self.inner {
            Some(t) => t.capabilities(),
            None => Capabilities {
                reasoning: true,
                prefill: true,
            },
        }
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, EngineError> {
        if let Some(hit) = self.lookup(request)? {
            return Ok(hit);
        }
        match &self.inner {
            Some(inner) => {
                let completion = inner.send(request)?;
                self.record(request, &completion)?;
                Ok(completion)
            }
            None => Err(EngineError::ReplayMiss { key: request.key() }),
        }
    }
}
