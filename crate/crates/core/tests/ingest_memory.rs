//! Ingestion must not allocate proportionally to file size when only
//! one terminal's column is requested. This lives in its own test
//! binary because the counting allocator must observe nothing but the
//! ingest call.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

struct CountingAlloc;

static ALLOCATED: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        ALLOCATED.fetch_add(layout.size(), Ordering::Relaxed);
        unsafe { System.alloc(layout) }
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        ALLOCATED.fetch_add(new_size.saturating_sub(layout.size()), Ordering::Relaxed);
        unsafe { System.realloc(ptr, layout, new_size) }
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

#[test]
fn single_terminal_ingest_allocates_far_less_than_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.csv");

    // 80 terminals x 3000 rows, a few megabytes of text.
    let n_terminals = 80;
    let n_rows = 3000usize;
    let mut text = String::from("timestamp");
    for t in 0..n_terminals {
        text.push_str(&format!(",PMU{t:03}"));
    }
    text.push('\n');
    for i in 0..n_rows {
        let us = (i as f64 / 30.0 * 1e6).round() as u64;
        text.push_str(&format!(
            "1970-01-01T00:{:02}:{:02}.{:06}Z",
            us / 60_000_000,
            us / 1_000_000 % 60,
            us % 1_000_000
        ));
        for t in 0..n_terminals {
            text.push_str(&format!(",60.{:04}", (i + t) % 10_000));
        }
        text.push('\n');
    }
    std::fs::write(&path, &text).unwrap();
    let file_size = text.len();
    drop(text);

    let before = ALLOCATED.load(Ordering::Relaxed);
    let rec = oscdet_core::data::ingest_pmu_csv(&path, "PMU040").unwrap();
    let after = ALLOCATED.load(Ordering::Relaxed);

    assert_eq!(rec.samples.len(), n_rows);
    assert_eq!(rec.skipped_rows, 0);

    // Cumulative allocation during the call: the kept column plus
    // growth reallocs and fixed parser buffers. One column is ~1/80 of
    // the file; a whole-file slurp would show up as >= file_size.
    let delta = after - before;
    assert!(
        delta < file_size / 4,
        "ingest allocated {delta} bytes against a {file_size}-byte file"
    );
}
