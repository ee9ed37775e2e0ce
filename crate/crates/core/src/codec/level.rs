use std::fmt;

/// One bus symbol. Dominant is logical 0 and overrides Recessive on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BitLevel {
    Dominant,
    Recessive,
}

impl BitLevel {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            BitLevel::Recessive
        } else {
            BitLevel::Dominant
        }
    }

    /// Logical value carried by the level (Recessive = 1).
    pub fn as_bit(self) -> bool {
        matches!(self, BitLevel::Recessive)
    }

    pub fn is_dominant(self) -> bool {
        matches!(self, BitLevel::Dominant)
    }

    pub fn flip(self) -> Self {
        match self {
            BitLevel::Dominant => BitLevel::Recessive,
            BitLevel::Recessive => BitLevel::Dominant,
        }
    }

    /// Wired-AND of two driven levels.
    pub fn and(self, other: BitLevel) -> BitLevel {
        if self.is_dominant() || other.is_dominant() {
            BitLevel::Dominant
        } else {
            BitLevel::Recessive
        }
    }
}

impl fmt::Display for BitLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.as_bit() { "1" } else { "0" })
    }
}

/// Resolves the levels driven by all participants of one bit-time.
/// An empty set resolves to Recessive (idle bus).
pub fn wired_and<I: IntoIterator<Item = BitLevel>>(levels: I) -> BitLevel {
    levels
        .into_iter()
        .fold(BitLevel::Recessive, BitLevel::and)
}

/// Parses a string of `0`/`1` characters, ignoring whitespace. Test helper.
pub fn levels_from_str(s: &str) -> Vec<BitLevel> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| BitLevel::from_bit(c == '1'))
        .collect()
}

pub fn levels_to_string(levels: &[BitLevel]) -> String {
    levels.iter().map(|l| l.to_string()).collect()
}
