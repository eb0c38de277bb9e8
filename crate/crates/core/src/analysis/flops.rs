//! Thread-local FLOP counter.
//!
//! `matmul`, the projections and the row softmax call [`record`] with their
//! documented counts. Nothing is accumulated unless [`install`] was called on
//! the current thread, so parallel benchmark runs never see each other's work.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

/// Start counting on this thread. Resets an already installed counter to zero.
pub fn install() {
    COUNTER.with(|c| c.set(Some(0)));
}

pub fn uninstall() {
    COUNTER.with(|c| c.set(None));
}

pub fn is_installed() -> bool {
    COUNTER.with(|c| c.get().is_some())
}

/// Total since the last install or reset. Zero (with a warning) when no
/// counter is installed.
pub fn read() -> u64 {
    match COUNTER.with(|c| c.get()) {
        Some(v) => v,
        None => {
            log::warn!("flop counter read without install; returning 0");
            0
        }
    }
}

pub fn reset() {
    COUNTER.with(|c| {
        if c.get().is_some() {
            c.set(Some(0));
        }
    });
}

#[inline]
pub fn record(flops: u64) {
    COUNTER.with(|c| {
        if let Some(v) = c.get() {
            c.set(Some(v + flops));
        }
    });
}

/// Runs `f` with a fresh counter and returns its result with the FLOPs it
/// registered. The previous counter state of the thread is restored.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let saved = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = COUNTER.with(|c| c.replace(saved)).unwrap_or(0);
    (out, counted)
}
