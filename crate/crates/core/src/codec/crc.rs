use super::BitLevel;

/// CAN CRC-15 generator, x^15 + x^14 + x^10 + x^8 + x^7 + x^4 + x^3 + 1 (top term implicit).
pub const CRC15_POLY: u16 = 0x4599;
const CRC15_MASK: u16 = 0x7FFF;

/// Shift-register CRC-15 usable one bit at a time by the streaming decoder.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Crc15 {
    reg: u16,
}

impl Crc15 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, level: BitLevel) {
        let feedback = level.as_bit() ^ ((self.reg >> 14) & 1 == 1);
        self.reg = (self.reg << 1) & CRC15_MASK;
        if feedback {
            self.reg ^= CRC15_POLY;
        }
    }

    pub fn value(&self) -> u16 {
        self.reg
    }
}

/// CRC-15 over the SOF..data prefix of a raw frame.
pub fn compute_crc15(bits: &[BitLevel]) -> u16 {
    let mut crc = Crc15::new();
    for &b in bits {
        crc.push(b);
    }
    crc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Polynomial long division over GF(2): remainder of m(x)·x^width / g(x).
    /// Kept independent of the shift-register form above.
    fn long_division(bits: &[bool], generator: u32, width: usize) -> u32 {
        let g: Vec<bool> = (0..=width).rev().map(|k| generator >> k & 1 == 1).collect();
        let mut m: Vec<bool> = bits.to_vec();
        m.extend(std::iter::repeat_n(false, width));
        for i in 0..bits.len() {
            if m[i] {
                for (j, &gj) in g.iter().enumerate() {
                    m[i + j] ^= gj;
                }
            }
        }
        m[bits.len()..]
            .iter()
            .fold(0u32, |acc, &b| (acc << 1) | b as u32)
    }

    fn crc15_oracle(bits: &[BitLevel]) -> u16 {
        let b: Vec<bool> = bits.iter().map(|l| l.as_bit()).collect();
        long_division(&b, 0x8000 | CRC15_POLY as u32, 15) as u16
    }

    fn byte_bits(bytes: &[u8]) -> Vec<bool> {
        bytes
            .iter()
            .flat_map(|b| (0..8).rev().map(move |k| b >> k & 1 == 1))
            .collect()
    }

    #[test]
    fn oracle_matches_crc8_check_value() {
        // CRC-8 (poly 0x07, init 0, no reflection) of "123456789" is 0xF4.
        assert_eq!(long_division(&byte_bits(b"123456789"), 0x107, 8), 0xF4);
    }

    #[test]
    fn zero_header_crc() {
        // SOF + 11 zero id bits + RTR/IDE/r0 + DLC=0, all dominant.
        let bits = vec![BitLevel::Dominant; 19];
        assert_eq!(crc15_oracle(&bits), 0x0000);
        assert_eq!(compute_crc15(&bits), 0x0000);
    }

    #[test]
    fn register_matches_oracle_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let len = rng.gen_range(1..120);
            let bits: Vec<BitLevel> = (0..len).map(|_| BitLevel::from_bit(rng.gen())).collect();
            assert_eq!(compute_crc15(&bits), crc15_oracle(&bits));
            assert_eq!(compute_crc15(&bits), compute_crc15(&bits));
        }
    }

    #[test]
    fn single_bit_flips_change_crc() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut changed = 0;
        for _ in 0..1000 {
            let len = rng.gen_range(19..84);
            let bits: Vec<BitLevel> = (0..len).map(|_| BitLevel::from_bit(rng.gen())).collect();
            let mut flipped = bits.clone();
            let i = rng.gen_range(0..len);
            flipped[i] = flipped[i].flip();
            if crc15_oracle(&bits) != crc15_oracle(&flipped) {
                changed += 1;
            }
            assert_eq!(compute_crc15(&flipped), crc15_oracle(&flipped));
        }
        assert!(changed >= 990, "only {changed} of 1000 flips detected");
    }

    #[test]
    fn crc_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let len = rng.gen_range(1..100);
            let x: Vec<BitLevel> = (0..len).map(|_| BitLevel::from_bit(rng.gen())).collect();
            let y: Vec<BitLevel> = (0..len).map(|_| BitLevel::from_bit(rng.gen())).collect();
            let xy: Vec<BitLevel> = x
                .iter()
                .zip(&y)
                .map(|(a, b)| BitLevel::from_bit(a.as_bit() ^ b.as_bit()))
                .collect();
            assert_eq!(compute_crc15(&x) ^ compute_crc15(&y), compute_crc15(&xy));
        }
    }
}
