use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Completion, Reasoner, ReasonerRequest, TemplateId};

/// One scripted key and the replies it yields, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub template: TemplateId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<usize>,
    /// Strings are returned verbatim; any other value is sent as compact JSON.
    pub responses: Vec<Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptEntry>,
}

impl Script {
    pub fn push(&mut self, template: TemplateId, clip: Option<usize>, response: Value) {
        match self
            .entries
            .iter_mut()
            .find(|e| e.template == template && e.clip == clip)
        {
            Some(e) => e.responses.push(response),
            None => self.entries.push(ScriptEntry {
                template,
                clip,
                responses: vec![response],
            }),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }
}

type Key = (TemplateId, Option<usize>);

/// Deterministic test backend: replies come from a script keyed by template and clip.
///
/// Running out of replies for a key is an error, so a test cannot silently
/// depend on calls it never scripted.
#[derive(Debug, Default)]
pub struct ScriptedOracle {
    queues: Mutex<HashMap<Key, VecDeque<String>>>,
    log: Mutex<Vec<Key>>,
}

impl ScriptedOracle {
    pub fn new(script: &Script) -> Self {
        let mut queues: HashMap<Key, VecDeque<String>> = HashMap::new();
        for e in &script.entries {
            let q = queues.entry((e.template, e.clip)).or_default();
            q.extend(e.responses.iter().map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            }));
        }
        Self {
            queues: Mutex::new(queues),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::new(&Script::load(path)?))
    }

    /// Keys served so far, in call order.
    pub fn calls(&self) -> Vec<(TemplateId, Option<usize>)> {
        self.log.lock().expect("oracle log poisoned").clone()
    }

    pub fn remaining(&self, template: TemplateId, clip: Option<usize>) -> usize {
        self.queues
            .lock()
            .expect("oracle queues poisoned")
            .get(&(template, clip))
            .map_or(0, VecDeque::len)
    }
}

impl Reasoner for ScriptedOracle {
    fn complete(&self, request: &ReasonerRequest) -> Result<Completion, BackendError> {
        let key = (request.template, request.clip);
        let text = self
            .queues
            .lock()
            .expect("oracle queues poisoned")
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or(BackendError::ScriptExhausted {
                template: key.0,
                clip: key.1,
            })?;
        self.log.lock().expect("oracle log poisoned").push(key);
        Ok(Completion { text, attempts: 1 })
    }
}
