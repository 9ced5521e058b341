//! Shared-file write/read with disjoint per-lane extents.

use std::fs::{File, OpenOptions};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::time::Instant;

use super::BenchError;

pub const MB: u64 = 1_000_000;
const BLOCK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IoMode {
    Write,
    Read,
}

/// Byte expected at absolute file offset `off`.
pub fn pattern_byte(off: u64) -> u8 {
    (off ^ (off >> 8) ^ (off >> 16) ^ 0x5a) as u8
}

fn fill(buf: &mut [u8], start: u64) {
    for (i, b) in buf.iter_mut().enumerate() {
        *b = pattern_byte(start + i as u64);
    }
}

fn io_err(path: &Path, e: std::io::Error) -> BenchError {
    BenchError::IoFailure(format!("{}: {e}", path.display()))
}

/// Extent `[start, end)` of lane `i`.
pub fn extent(total: u64, lanes: usize, i: usize) -> (u64, u64) {
    let per = total.div_ceil(lanes as u64);
    let start = (per * i as u64).min(total);
    (start, (start + per).min(total))
}

fn run_lanes(
    path: &Path,
    file: &File,
    total: u64,
    lanes: usize,
    op: impl Fn(&File, &mut [u8], u64) -> std::io::Result<bool> + Sync,
) -> Result<bool, BenchError> {
    let results: Vec<std::io::Result<bool>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..lanes)
            .map(|i| {
                let op = &op;
                s.spawn(move || {
                    let (mut off, end) = extent(total, lanes, i);
                    let mut buf = vec![0u8; BLOCK];
                    let mut ok = true;
                    while off < end {
                        let len = ((end - off) as usize).min(BLOCK);
                        ok &= op(file, &mut buf[..len], off)?;
                        off += len as u64;
                    }
                    Ok(ok)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("lane panicked")).collect()
    });
    let mut all = true;
    for r in results {
        all &= r.map_err(|e| io_err(path, e))?;
    }
    Ok(all)
}

/// Writes the pattern over `total` bytes with `lanes` writers.
pub fn write_pattern(path: &Path, total: u64, lanes: usize) -> Result<(), BenchError> {
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    file.set_len(total).map_err(|e| io_err(path, e))?;
    run_lanes(path, &file, total, lanes, |f, buf, off| {
        fill(buf, off);
        f.write_all_at(buf, off)?;
        Ok(true)
    })?;
    file.sync_all().map_err(|e| io_err(path, e))
}

/// Reads `total` bytes back with `lanes` readers and checks the pattern.
pub fn read_verify(path: &Path, total: u64, lanes: usize) -> Result<bool, BenchError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let len = file.metadata().map_err(|e| io_err(path, e))?.len();
    if len != total {
        return Err(BenchError::IoFailure(format!(
            "{}: expected {total} bytes, found {len}",
            path.display()
        )));
    }
    run_lanes(path, &file, total, lanes, |f, buf, off| {
        f.read_exact_at(buf, off)?;
        Ok(buf.iter().enumerate().all(|(i, b)| *b == pattern_byte(off + i as u64)))
    })
}

/// Five timed passes. A write pass is followed by an untimed read-back
/// check; a read pass expects a file written by a previous write run.
pub fn measure(path: &Path, total_mb: u64, lanes: usize, mode: IoMode, runs: usize) -> Result<Vec<f64>, BenchError> {
    if total_mb == 0 {
        return Err(BenchError::InvalidSize("total_mb must be >= 1".into()));
    }
    if lanes == 0 {
        return Err(BenchError::InvalidLanes(lanes));
    }
    let total = total_mb * MB;
    let mut out = Vec::with_capacity(runs);
    for run in 0..runs {
        let start = Instant::now();
        let ok = match mode {
            IoMode::Write => {
                write_pattern(path, total, lanes)?;
                let secs = start.elapsed().as_secs_f64().max(1e-9);
                out.push(total as f64 / secs / 1e6);
                read_verify(path, total, lanes)?
            }
            IoMode::Read => {
                let ok = read_verify(path, total, lanes)?;
                let secs = start.elapsed().as_secs_f64().max(1e-9);
                out.push(total as f64 / secs / 1e6);
                ok
            }
        };
        if !ok {
            return Err(BenchError::Incorrect(format!(
                "{}: pattern mismatch on run {run}",
                path.display()
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_cover_file_disjointly() {
        for (total, lanes) in [(10u64, 3usize), (MB, 4), (5, 8)] {
            let mut covered = 0;
            let mut prev_end = 0;
            for i in 0..lanes {
                let (s, e) = extent(total, lanes, i);
                assert!(s >= prev_end || s == e);
                covered += e - s;
                prev_end = prev_end.max(e);
            }
            assert_eq!(covered, total);
        }
    }

    #[test]
    fn round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("io.dat");
        let w = measure(&path, 2, 4, IoMode::Write, 5).unwrap();
        assert!(w.iter().all(|v| v.is_finite() && *v > 0.0));
        let r = measure(&path, 2, 3, IoMode::Read, 5).unwrap();
        assert_eq!(r.len(), 5);
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.iter().enumerate().all(|(i, b)| *b == pattern_byte(i as u64)));
        let missing = measure(&dir.path().join("nope"), 1, 1, IoMode::Read, 5);
        assert!(matches!(missing, Err(BenchError::IoFailure(_))));
    }

    #[test]
    fn corrupted_file_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("io.dat");
        write_pattern(&path, MB, 2).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[12345] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(!read_verify(&path, MB, 2).unwrap());
    }
}
