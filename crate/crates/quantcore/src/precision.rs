//! Quantization formats and their integer ranges.

use crate::error::QuantError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signedness {
    Signed,
    Unsigned,
}

/// An integer quantization format: bit width plus signedness.
///
/// Signed formats use the symmetric range `[-(2^(B-1)-1), 2^(B-1)-1]` — at
/// B=1 that range holds no nonzero value, so signed needs at least 2 bits.
/// Unsigned formats use `[0, 2^B-1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntPrecision {
    bits: u8,
    signedness: Signedness,
}

impl IntPrecision {
    pub fn new(bits: u8, signedness: Signedness) -> Result<Self, QuantError> {
        let min_bits = match signedness {
            Signedness::Signed => 2,
            Signedness::Unsigned => 1,
        };
        if bits < min_bits || bits > 16 {
            return Err(QuantError::InvalidPrecision {
                bits,
                signedness: match signedness {
                    Signedness::Signed => "signed",
                    Signedness::Unsigned => "unsigned",
                },
            });
        }
        Ok(IntPrecision { bits, signedness })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn signedness(&self) -> Signedness {
        self.signedness
    }

    pub fn range(&self) -> QuantRange {
        match self.signedness {
            Signedness::Signed => {
                let hi = (1i32 << (self.bits - 1)) - 1;
                QuantRange { lo: -hi, hi }
            }
            Signedness::Unsigned => QuantRange {
                lo: 0,
                hi: (1i32 << self.bits) - 1,
            },
        }
    }
}

/// A layer operand's precision: an integer format, or full precision
/// (no quantization; costed downstream as 16-bit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Precision {
    Full,
    Int(IntPrecision),
}

impl Precision {
    pub fn signed(bits: u8) -> Result<Self, QuantError> {
        Ok(Precision::Int(IntPrecision::new(bits, Signedness::Signed)?))
    }

    pub fn unsigned(bits: u8) -> Result<Self, QuantError> {
        Ok(Precision::Int(IntPrecision::new(bits, Signedness::Unsigned)?))
    }

    pub fn is_full(&self) -> bool {
        matches!(self, Precision::Full)
    }

    /// Integer range of this format; full precision has none.
    pub fn quant_range(&self) -> Result<QuantRange, QuantError> {
        match self {
            Precision::Full => Err(QuantError::FullPrecisionHasNoRange),
            Precision::Int(p) => Ok(p.range()),
        }
    }
}

/// Inclusive integer range `[lo, hi]` of a quantization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantRange {
    pub lo: i32,
    pub hi: i32,
}
