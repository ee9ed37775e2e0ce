use super::frame::{RawBitstream, TrailerField};
use super::BitLevel;
use crate::error::StuffError;

/// Run length after which an opposite-level stuff bit is inserted.
pub const STUFF_RUN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StuffedBitstream {
    /// Stuffed region (SOF..CRC) with stuff bits inserted, followed by the trailer.
    pub bits: Vec<BitLevel>,
    /// Indices into `bits` that hold stuff bits.
    pub stuff_positions: Vec<usize>,
    /// Number of leading entries of `bits` that belong to the stuffed region.
    pub region_len: usize,
    pub trailer: Vec<(TrailerField, BitLevel)>,
}

impl StuffedBitstream {
    pub fn region(&self) -> &[BitLevel] {
        &self.bits[..self.region_len]
    }
}

/// Inserts stuff bits into a level sequence. The inserted bit starts a new run.
pub fn stuff_levels(raw: &[BitLevel]) -> (Vec<BitLevel>, Vec<usize>) {
    let mut out = Vec::with_capacity(raw.len() + raw.len() / 4 + 1);
    let mut positions = Vec::new();
    let mut run_level = None;
    let mut run_len = 0;
    for &bit in raw {
        out.push(bit);
        if Some(bit) == run_level {
            run_len += 1;
        } else {
            run_level = Some(bit);
            run_len = 1;
        }
        if run_len == STUFF_RUN {
            let stuff = bit.flip();
            positions.push(out.len());
            out.push(stuff);
            run_level = Some(stuff);
            run_len = 1;
        }
    }
    (out, positions)
}

pub fn stuff(raw: &RawBitstream) -> StuffedBitstream {
    let (mut bits, stuff_positions) = stuff_levels(&raw.bits);
    let region_len = bits.len();
    bits.extend(raw.trailer.iter().map(|&(_, l)| l));
    StuffedBitstream {
        bits,
        stuff_positions,
        region_len,
        trailer: raw.trailer.clone(),
    }
}

/// Removes stuff bits from a stuffed region, rejecting any 6-run.
pub fn destuff_levels(stuffed: &[BitLevel]) -> Result<Vec<BitLevel>, StuffError> {
    let mut out = Vec::with_capacity(stuffed.len());
    let mut run_level = None;
    let mut run_len = 0;
    let mut expect_stuff = false;
    for (i, &bit) in stuffed.iter().enumerate() {
        if expect_stuff {
            if Some(bit) == run_level {
                return Err(StuffError::StuffViolation { position: i });
            }
            run_level = Some(bit);
            run_len = 1;
            expect_stuff = false;
            continue;
        }
        out.push(bit);
        if Some(bit) == run_level {
            run_len += 1;
        } else {
            run_level = Some(bit);
            run_len = 1;
        }
        expect_stuff = run_len == STUFF_RUN;
    }
    if expect_stuff {
        return Err(StuffError::Truncated);
    }
    Ok(out)
}

pub fn destuff(stuffed: &StuffedBitstream) -> Result<RawBitstream, StuffError> {
    let bits = destuff_levels(stuffed.region())?;
    Ok(RawBitstream {
        bits,
        trailer: stuffed.trailer.clone(),
    })
}

/// Longest run of equal levels in a sequence.
pub fn longest_run(levels: &[BitLevel]) -> usize {
    let mut best = 0;
    let mut cur = 0;
    let mut prev = None;
    for &l in levels {
        cur = if Some(l) == prev { cur + 1 } else { 1 };
        prev = Some(l);
        best = best.max(cur);
    }
    best
}
