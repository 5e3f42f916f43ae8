//! Fault injection for crash-safety testing.
//!
//! Each [`FailPoint`] names a boundary in the dual-tier write path. Arming a
//! point makes the next hit either return an error (a hot-tier fault the
//! process survives), return [`Error::InjectedCrash`] (the caller must drop
//! the store without further writes, emulating a kill), or abort the process
//! outright. The CLI arms points from `TEMPOVEC_FAILPOINTS`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use parking_lot::Mutex;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FailPoint {
    /// WAL entry appended as pending; cold tier untouched.
    AfterPending,
    /// Half of the cold-log frame has reached disk.
    MidColdAppend,
    /// Cold transaction durable; WAL still says pending.
    AfterColdAppend,
    /// WAL advanced to cold_written; hot tier untouched.
    AfterColdWritten,
    /// Hot tier batch application (error action = hot-tier fault).
    HotApply,
    /// Some hot-tier records written, tombstones not yet.
    MidHotApply,
    /// Hot tier applied; WAL not yet committed.
    AfterHotApply,
    /// WAL committed; hash store not yet updated.
    AfterCommitted,
    /// Hash store persistence.
    HashStoreSave,
}

impl FailPoint {
    pub const ALL: [FailPoint; 9] = [
        FailPoint::AfterPending,
        FailPoint::MidColdAppend,
        FailPoint::AfterColdAppend,
        FailPoint::AfterColdWritten,
        FailPoint::HotApply,
        FailPoint::MidHotApply,
        FailPoint::AfterHotApply,
        FailPoint::AfterCommitted,
        FailPoint::HashStoreSave,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FailPoint::AfterPending => "after_pending",
            FailPoint::MidColdAppend => "mid_cold_append",
            FailPoint::AfterColdAppend => "after_cold_append",
            FailPoint::AfterColdWritten => "after_cold_written",
            FailPoint::HotApply => "hot_apply",
            FailPoint::MidHotApply => "mid_hot_apply",
            FailPoint::AfterHotApply => "after_hot_apply",
            FailPoint::AfterCommitted => "after_committed",
            FailPoint::HashStoreSave => "hash_store_save",
        }
    }
}

impl fmt::Display for FailPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FailPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FailPoint::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown failpoint {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailAction {
    Error,
    Crash,
    Abort,
}

impl FromStr for FailAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(FailAction::Error),
            "crash" => Ok(FailAction::Crash),
            "abort" => Ok(FailAction::Abort),
            other => Err(Error::Config(format!("unknown failpoint action {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Armed {
    action: FailAction,
    /// Hits to let through before firing.
    skip: u32,
    /// Remaining firings; `None` fires forever.
    remaining: Option<u32>,
}

#[derive(Debug, Default)]
pub struct Failpoints {
    any_armed: AtomicBool,
    armed: Mutex<HashMap<FailPoint, Armed>>,
}

impl Failpoints {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fire once, on the next hit.
    pub fn arm(&self, point: FailPoint, action: FailAction) {
        self.arm_with(point, action, 0, Some(1));
    }

    /// Fire on every hit until disarmed.
    pub fn arm_persistent(&self, point: FailPoint, action: FailAction) {
        self.arm_with(point, action, 0, None);
    }

    pub fn arm_with(&self, point: FailPoint, action: FailAction, skip: u32, times: Option<u32>) {
        self.armed.lock().insert(
            point,
            Armed {
                action,
                skip,
                remaining: times,
            },
        );
        self.any_armed.store(true, Ordering::SeqCst);
    }

    pub fn disarm(&self, point: FailPoint) {
        let mut armed = self.armed.lock();
        armed.remove(&point);
        self.any_armed.store(!armed.is_empty(), Ordering::SeqCst);
    }

    pub fn clear(&self) {
        self.armed.lock().clear();
        self.any_armed.store(false, Ordering::SeqCst);
    }

    /// Parse `point=action[,point=action...]`, e.g. `after_cold_written=abort`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let fp = Failpoints::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (point, action) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("malformed failpoint {item:?}")))?;
            fp.arm(point.trim().parse()?, action.trim().parse()?);
        }
        Ok(fp)
    }

    /// Check a failpoint. Returns the action to take if it fires.
    pub fn hit(&self, point: FailPoint) -> Option<FailAction> {
        if !self.any_armed.load(Ordering::Relaxed) {
            return None;
        }
        let mut armed = self.armed.lock();
        let entry = armed.get_mut(&point)?;
        if entry.skip > 0 {
            entry.skip -= 1;
            return None;
        }
        let action = entry.action;
        if let Some(n) = entry.remaining.as_mut() {
            *n -= 1;
            if *n == 0 {
                armed.remove(&point);
                self.any_armed.store(!armed.is_empty(), Ordering::SeqCst);
            }
        }
        Some(action)
    }

    /// Check a failpoint and convert a firing into the matching error (or abort).
    pub fn check(&self, point: FailPoint) -> Result<()> {
        match self.hit(point) {
            None => Ok(()),
            Some(FailAction::Error) => Err(Error::InjectedFault(point)),
            Some(FailAction::Crash) => Err(Error::InjectedCrash(point)),
            Some(FailAction::Abort) => std::process::abort(),
        }
    }
}
