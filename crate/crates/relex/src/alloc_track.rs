//! A thread-local byte-counting allocator for peak-memory measurements.
//!
//! The counters only move once [`TrackingAllocator`] is installed with
//! `#[global_allocator]`; binaries that want [`crate::bench`] to report
//! real peaks must do so. Counting is per thread, so one thread's
//! measurement window is not polluted by allocations on other threads.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;

pub struct TrackingAllocator;

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

// Counter cells hold no destructor, so touching them from the allocator is
// safe even during thread teardown; `try_with` covers the remaining edge.
fn record_alloc(bytes: usize) {
    let _ = CURRENT.try_with(|c| {
        let now = c.get().saturating_add(bytes);
        c.set(now);
        let _ = PEAK.try_with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
    });
}

fn record_dealloc(bytes: usize) {
    let _ = CURRENT.try_with(|c| c.set(c.get().saturating_sub(bytes)));
}

/// Live bytes allocated by this thread.
pub fn current_bytes() -> usize {
    CURRENT.try_with(Cell::get).unwrap_or(0)
}

/// High-water mark of [`current_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.try_with(Cell::get).unwrap_or(0)
}

/// Start a new measurement window: the peak collapses to the live count.
pub fn reset_peak() {
    let _ = CURRENT.try_with(|c| {
        let _ = PEAK.try_with(|p| p.set(c.get()));
    });
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = unsafe { System.alloc(layout) };
        if !ptr.is_null() {
            record_alloc(layout.size());
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        record_dealloc(layout.size());
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = unsafe { System.alloc_zeroed(layout) };
        if !ptr.is_null() {
            record_alloc(layout.size());
        }
        ptr
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let new_ptr = unsafe { System.realloc(ptr, layout, new_size) };
        if !new_ptr.is_null() {
            record_dealloc(layout.size());
            record_alloc(new_size);
        }
        new_ptr
    }
}
