//! Tail-follow reader for `detect --follow`: reads a PMU CSV as it is
//! being written, emitting parsed samples for one terminal.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use oscdet_core::data::rfc3339_to_epoch;
use oscdet_core::Error;

const POLL: Duration = Duration::from_millis(100);

/// Tails `path`, parsing `timestamp,<terminals...>` rows and feeding
/// `(t_epoch_s, value)` for `terminal` into `sink` until the sink
/// declines (consumer gone) or the file stays quiet for
/// `idle_timeout_s`. Rows that fail to parse are counted and skipped;
/// a row may arrive in several partial writes and is only processed
/// once its newline shows up. Returns the skipped-row count.
pub fn tail_terminal(
    path: &Path,
    terminal: &str,
    idle_timeout_s: f64,
    mut sink: impl FnMut(f64, f64) -> bool,
) -> Result<u64, Error> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut pending = String::new();
    let mut chunk = String::new();
    let mut idle = Duration::ZERO;
    let timeout = Duration::from_secs_f64(idle_timeout_s.max(0.0));
    let mut column: Option<usize> = None;
    let mut skipped = 0u64;

    loop {
        chunk.clear();
        if reader.read_line(&mut chunk)? == 0 {
            if idle >= timeout {
                return Ok(skipped);
            }
            std::thread::sleep(POLL);
            idle += POLL;
            continue;
        }
        idle = Duration::ZERO;
        pending.push_str(&chunk);
        if !pending.ends_with('\n') {
            continue;
        }
        let row = pending.trim_end().to_string();
        pending.clear();

        let col = match column {
            Some(c) => c,
            None => {
                // First complete row is the header.
                let mut fields = row.split(',');
                if fields.next() != Some("timestamp") {
                    return Err(Error::Data(format!(
                        "{}: header must start with `timestamp`",
                        path.display()
                    )));
                }
                let c = fields.position(|f| f == terminal).ok_or_else(|| {
                    Error::Data(format!("terminal {terminal} not in {}", path.display()))
                })? + 1;
                column = Some(c);
                continue;
            }
        };

        let fields: Vec<&str> = row.split(',').collect();
        let parsed = fields.first().and_then(|ts| rfc3339_to_epoch(ts)).zip(
            fields
                .get(col)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite()),
        );
        match parsed {
            Some((t, v)) => {
                if !sink(t, v) {
                    return Ok(skipped);
                }
            }
            None => skipped += 1,
        }
    }
}
