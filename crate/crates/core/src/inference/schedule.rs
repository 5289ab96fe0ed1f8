//! Long-video segmentation with one shared frame between neighbours.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Inclusive frame range `[start, end]` plus `pad` trailing copies of frame
/// `end`, so that `end - start + 1 + pad ≡ 1 (mod 4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub pad: usize,
}

impl Segment {
    /// Real frames covered.
    pub fn frames(&self) -> usize {
        self.end - self.start + 1
    }

    /// Frames fed to the codec, padding included.
    pub fn padded_frames(&self) -> usize {
        self.frames() + self.pad
    }
}

/// Splits `[0, total)` into segments of at most `length` frames. Consecutive
/// segments share exactly one frame; a short final segment is padded by
/// repeating its last frame.
pub fn schedule_segments(total: usize, length: usize) -> Result<Vec<Segment>> {
    if length < 5 || length % 4 != 1 {
        return Err(Error::Config(format!(
            "segment length must be at least 5 and satisfy L % 4 == 1, got {length}"
        )));
    }
    if total == 0 {
        return Err(Error::InvalidValue("cannot schedule an empty clip".into()));
    }
    let mut out = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + length - 1).min(total - 1);
        let real = end - start + 1;
        out.push(Segment {
            start,
            end,
            pad: (4 - (real - 1) % 4) % 4,
        });
        if end == total - 1 {
            return Ok(out);
        }
        start = end;
    }
}
