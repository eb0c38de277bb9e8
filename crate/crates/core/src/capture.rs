//! Debug hook that records the affinity matrices produced by the attention
//! passes. Off by default; when no sink is installed the passes never keep
//! their affinities around.

use std::cell::RefCell;
use std::fmt;

use crate::analysis::BlockAffinity;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageLabel {
    Dense,
    Long,
    Short,
}

impl fmt::Display for StageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageLabel::Dense => "dense",
            StageLabel::Long => "long",
            StageLabel::Short => "short",
        })
    }
}

pub type Captured = Vec<(StageLabel, BlockAffinity)>;

thread_local! {
    static SINK: RefCell<Option<Captured>> = const { RefCell::new(None) };
}

pub fn is_active() -> bool {
    SINK.with(|s| s.borrow().is_some())
}

pub(crate) fn push(label: StageLabel, affinity: BlockAffinity) {
    SINK.with(|s| {
        if let Some(sink) = s.borrow_mut().as_mut() {
            sink.push((label, affinity));
        }
    });
}

/// Runs `f` with a fresh sink and returns everything captured during the call.
/// One entry is recorded per stage and batch item, in execution order.
pub fn capture<T>(f: impl FnOnce() -> T) -> (T, Captured) {
    let saved = SINK.with(|s| s.replace(Some(Vec::new())));
    let out = f();
    let captured = SINK.with(|s| s.replace(saved)).unwrap_or_default();
    (out, captured)
}
