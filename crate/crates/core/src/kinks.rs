//! Records which branch every non-smooth operation took.
//!
//! ReLU, max pooling and the variance hinge are piecewise smooth. A central
//! difference that straddles a switch point measures a blend of two slopes,
//! so a gradient check must know whether `x ± h` stayed on the branch taken
//! at `x`. [`trace`] runs a computation and returns a digest of every branch
//! decision made on the current thread while it ran.

use std::cell::RefCell;
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

thread_local! {
    static TRACE: RefCell<Option<DefaultHasher>> = const { RefCell::new(None) };
}

/// Runs `f` and returns its result with the digest of its branch decisions.
/// Not reentrant: an inner `trace` takes over until it returns.
pub fn trace<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let outer = TRACE.with(|t| t.replace(Some(DefaultHasher::new())));
    let out = f();
    let digest = TRACE.with(|t| t.replace(outer)).map_or(0, |h| h.finish());
    (out, digest)
}

fn active() -> bool {
    TRACE.with(|t| t.borrow().is_some())
}

/// Records one boolean per element, e.g. which inputs a ReLU passed.
pub(crate) fn note_signs(values: &[f64]) {
    if !active() {
        return;
    }
    TRACE.with(|t| {
        if let Some(h) = t.borrow_mut().as_mut() {
            for chunk in values.chunks(64) {
                let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, v)| acc | (u64::from(*v > 0.0) << i));
                h.write_u64(bits);
            }
            h.write_usize(values.len());
        }
    });
}

/// Records selected indices, e.g. the winning row of each pooled column.
pub(crate) fn note_choices(choices: &[usize]) {
    if !active() {
        return;
    }
    TRACE.with(|t| {
        if let Some(h) = t.borrow_mut().as_mut() {
            for c in choices {
                h.write_usize(*c);
            }
            h.write_usize(choices.len());
        }
    });
}
