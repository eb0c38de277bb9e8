//! Fault injection for the verification suite.
//!
//! TEST-ONLY. These switches exist so that `issa-bench verify --fault=...` can
//! demonstrate that each check is capable of failing. The active fault is
//! thread-local and defaults to [`Fault::None`].

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use crate::error::IssaError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// The short-range stage of the interlaced module is replaced by identity.
    SkipShortPass,
    /// Row softmax returns the unnormalized exponentials.
    NoSoftmaxNorm,
}

thread_local! {
    static ACTIVE: Cell<Fault> = const { Cell::new(Fault::None) };
}

pub fn active() -> Fault {
    ACTIVE.with(|f| f.get())
}

pub fn set(fault: Fault) {
    ACTIVE.with(|f| f.set(fault));
}

/// Runs `f` with `fault` active, restoring the previous setting afterwards.
pub fn with_fault<T>(fault: Fault, f: impl FnOnce() -> T) -> T {
    let prev = ACTIVE.with(|c| c.replace(fault));
    let out = f();
    set(prev);
    out
}

impl FromStr for Fault {
    type Err = IssaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Fault::None),
            "skip-short-pass" => Ok(Fault::SkipShortPass),
            "no-softmax-norm" => Ok(Fault::NoSoftmaxNorm),
            other => Err(IssaError::param(format!("unknown fault '{other}'"))),
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fault::None => "none",
            Fault::SkipShortPass => "skip-short-pass",
            Fault::NoSoftmaxNorm => "no-softmax-norm",
        })
    }
}
