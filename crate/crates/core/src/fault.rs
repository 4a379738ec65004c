//! Crash injection for tests.
//!
//! Components consult a [`Faults`] handle at every file operation and at every
//! stage boundary. Production code uses [`Faults::none`], which never fires.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

/// A simulated crash. The component that returns it must be discarded and
/// reopened from disk.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("simulated crash at {0}")]
pub struct Crash(pub String);

#[derive(Debug, Default)]
struct State {
    op_budget: Option<u64>,
    armed: HashMap<String, u64>,
    hits: HashMap<String, u64>,
    fired: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Faults {
    inner: Option<Arc<Mutex<State>>>,
}

impl Faults {
    pub fn none() -> Faults {
        Faults { inner: None }
    }

    pub fn new() -> Faults {
        Faults {
            inner: Some(Arc::default()),
        }
    }

    /// Lets exactly `n` primitive file operations succeed; every later one
    /// crashes.
    pub fn with_op_budget(n: u64) -> Faults {
        let f = Faults::new();
        f.state().unwrap().op_budget = Some(n);
        f
    }

    /// Crashes on the `nth` (1-based) time `point` is reached.
    pub fn arm(&self, point: &str, nth: u64) -> &Faults {
        if let Some(mut s) = self.state() {
            s.armed.insert(point.to_string(), nth.max(1));
        }
        self
    }

    fn state(&self) -> Option<std::sync::MutexGuard<'_, State>> {
        self.inner
            .as_ref()
            .map(|m| m.lock().unwrap_or_else(|e| e.into_inner()))
    }

    /// Called before each primitive file operation.
    pub fn op(&self, what: &str) -> Result<(), Crash> {
        let Some(mut s) = self.state() else {
            return Ok(());
        };
        match s.op_budget {
            Some(0) => {
                s.fired.push(what.to_string());
                Err(Crash(what.to_string()))
            }
            Some(n) => {
                s.op_budget = Some(n - 1);
                Ok(())
            }
            None => Ok(()),
        }
    }

    /// Called at a named stage boundary.
    pub fn point(&self, name: &str) -> Result<(), Crash> {
        let Some(mut s) = self.state() else {
            return Ok(());
        };
        let hits = {
            let h = s.hits.entry(name.to_string()).or_insert(0);
            *h += 1;
            *h
        };
        if s.armed.get(name) == Some(&hits) {
            s.armed.remove(name);
            s.fired.push(name.to_string());
            return Err(Crash(name.to_string()));
        }
        Ok(())
    }

    /// Names of the faults that have fired so far.
    pub fn fired(&self) -> Vec<String> {
        self.state().map(|s| s.fired.clone()).unwrap_or_default()
    }

    pub fn hits(&self, name: &str) -> u64 {
        self.state()
            .and_then(|s| s.hits.get(name).copied())
            .unwrap_or(0)
    }
}
