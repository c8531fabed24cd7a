//! Q16.16 two's-complement fixed point.
//!
//! Every operation wraps modulo 2^32 (2^64 for wide accumulators), which
//! keeps addition associative: any accumulation order gives the same bits.
//! All rescaling goes through the three rounding helpers at the bottom of
//! this file, each of which rounds toward negative infinity.

use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

pub const FRAC_BITS: u32 = 16;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fixed(pub i32);

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);
    pub const ONE: Fixed = Fixed(1 << FRAC_BITS);
    pub const MIN: Fixed = Fixed(i32::MIN);
    pub const MAX: Fixed = Fixed(i32::MAX);

    pub const fn from_raw(raw: i32) -> Fixed {
        Fixed(raw)
    }

    pub const fn raw(self) -> i32 {
        self.0
    }

    pub const fn from_int(n: i32) -> Fixed {
        Fixed(n.wrapping_shl(FRAC_BITS))
    }

    /// `num / den` rounded down to the grid. Used for hyperparameter
    /// literals.
    pub fn from_ratio(num: i64, den: i64) -> Fixed {
        div_floor(num << FRAC_BITS, den)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 65536.0
    }

    /// Nearest-below grid point of a finite float. Test and fixture helper
    /// only; the engine never calls it.
    pub fn from_f64_floor(x: f64) -> Fixed {
        Fixed((x * 65536.0).floor() as i32)
    }

    pub fn wrapping_mul(self, rhs: Fixed) -> Fixed {
        floor_shift(mul_wide(self, rhs))
    }

    pub fn clamp_to(self, lo: Fixed, hi: Fixed) -> Fixed {
        Fixed(self.0.clamp(lo.0, hi.0))
    }

    pub fn abs_raw(self) -> i64 {
        (self.0 as i64).abs()
    }
}

impl fmt::Debug for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.to_f64(), self.0)
    }
}

impl fmt::Display for Fixed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.wrapping_add(rhs.0))
    }
}

impl AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        *self = *self + rhs;
    }
}

impl Sub for Fixed {
    type Output = Fixed;
    fn sub(self, rhs: Fixed) -> Fixed {
        Fixed(self.0.wrapping_sub(rhs.0))
    }
}

impl SubAssign for Fixed {
    fn sub_assign(&mut self, rhs: Fixed) {
        *self = *self - rhs;
    }
}

impl Neg for Fixed {
    type Output = Fixed;
    fn neg(self) -> Fixed {
        Fixed(self.0.wrapping_neg())
    }
}

/// Exact Q32.32 product of two Q16.16 values.
pub fn mul_wide(a: Fixed, b: Fixed) -> i64 {
    (a.0 as i64).wrapping_mul(b.0 as i64)
}

/// Q16.16 value lifted to Q32.32 without rounding.
pub fn widen(x: Fixed) -> i64 {
    (x.0 as i64).wrapping_shl(FRAC_BITS)
}

// ---------------------------------------------------------------------------
// Rounding sites
// ---------------------------------------------------------------------------

/// Q32.32 accumulator back to Q16.16, rounding toward negative infinity and
/// wrapping into 32 bits.
pub fn floor_shift(acc: i64) -> Fixed {
    Fixed((acc >> FRAC_BITS) as i32)
}

/// `num / den` with `num` in Q32.32 and `den` in Q16.16, giving Q16.16,
/// rounded toward negative infinity. `den` must be positive.
pub fn div_floor(num: i64, den: i64) -> Fixed {
    debug_assert!(den > 0);
    Fixed(num.div_euclid(den) as i32)
}

/// Square root of a non-negative Q16.16 value, rounded down. Negative
/// inputs are treated as zero.
pub fn sqrt_floor(x: Fixed) -> Fixed {
    if x.0 <= 0 {
        return Fixed::ZERO;
    }
    let scaled = (x.0 as u64) << FRAC_BITS;
    let mut r = (scaled as f64).sqrt() as u64;
    while r * r > scaled {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= scaled {
        r += 1;
    }
    Fixed(r as i32)
}

/// Overflow behavior used by [`overflow_mode_demo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowMode {
    Saturate,
    Wrap,
}

/// Both groupings of `a + b + c` in 8-bit arithmetic: `((a + b) + c,
/// a + (b + c))`. Saturation is not associative; wrapping is.
pub fn overflow_mode_demo(a: i8, b: i8, c: i8, mode: OverflowMode) -> (i8, i8) {
    match mode {
        OverflowMode::Saturate => (a.saturating_add(b).saturating_add(c), a.saturating_add(b.saturating_add(c))),
        OverflowMode::Wrap => (a.wrapping_add(b).wrapping_add(c), a.wrapping_add(b.wrapping_add(c))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn saturation_breaks_associativity() {
        assert_eq!(overflow_mode_demo(127, 50, -50, OverflowMode::Saturate), (77, 127));
        assert_eq!(overflow_mode_demo(127, 50, -50, OverflowMode::Wrap), (127, 127));
    }

    #[test]
    fn shifts_round_toward_negative_infinity() {
        assert_eq!(floor_shift(-1).raw(), -1);
        assert_eq!(floor_shift(65535).raw(), 0);
        assert_eq!(floor_shift(-65536).raw(), -1);
        assert_eq!(floor_shift(-65537).raw(), -2);
        assert_eq!(div_floor(-1, 3).raw(), -1);
        assert_eq!(div_floor(7, 2).raw(), 3);
    }

    #[test]
    fn multiplication_on_the_grid() {
        let half = Fixed::from_ratio(1, 2);
        let quarter = Fixed::from_ratio(1, 4);
        assert_eq!(half.wrapping_mul(quarter).raw(), 8192);
        assert_eq!(Fixed::ONE.wrapping_mul(Fixed::ONE), Fixed::ONE);
        assert_eq!((-half).wrapping_mul(quarter).raw(), -8192);
    }

    #[test]
    fn sqrt_of_grid_points() {
        assert_eq!(sqrt_floor(Fixed::from_int(4)), Fixed::from_int(2));
        assert_eq!(sqrt_floor(Fixed::ONE), Fixed::ONE);
        assert_eq!(sqrt_floor(Fixed::from_ratio(1, 4)), Fixed::from_ratio(1, 2));
        assert_eq!(sqrt_floor(Fixed(-5)), Fixed::ZERO);
        assert_eq!(sqrt_floor(Fixed(i32::MAX)).raw(), 11_863_283);
    }

    proptest! {
        #[test]
        fn wrapping_sum_is_order_independent(
            values in prop::collection::vec(any::<i32>(), 0..64),
            perm_seed in any::<u64>(),
        ) {
            let forward = values.iter().fold(Fixed::ZERO, |acc, &v| acc + Fixed(v));
            let mut shuffled = values.clone();
            // Deterministic shuffle from the seed.
            let mut state = perm_seed | 1;
            for i in (1..shuffled.len()).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let j = (state % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            let permuted = shuffled.iter().fold(Fixed::ZERO, |acc, &v| acc + Fixed(v));
            prop_assert_eq!(forward, permuted);
        }

        #[test]
        fn sqrt_floor_is_exact_floor(raw in 0i32..i32::MAX) {
            let r = sqrt_floor(Fixed(raw)).raw() as u128;
            let scaled = (raw as u128) << 16;
            prop_assert!(r * r <= scaled);
            prop_assert!((r + 1) * (r + 1) > scaled);
        }
    }
}
