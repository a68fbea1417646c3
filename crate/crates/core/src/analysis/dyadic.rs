use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// An exact non-negative dyadic rational `mantissa / 2^exp`.
#[derive(Clone, Debug)]
pub struct Dyadic {
    mantissa: BigUint,
    exp: u64,
}

impl Dyadic {
    pub fn zero() -> Self {
        Self::new(BigUint::zero(), 0)
    }

    pub fn new(mantissa: BigUint, exp: u64) -> Self {
        Self { mantissa, exp }
    }

    pub fn from_u64(v: u64) -> Self {
        Self::new(BigUint::from(v), 0)
    }

    pub fn mantissa(&self) -> &BigUint {
        &self.mantissa
    }

    pub fn exp(&self) -> u64 {
        self.exp
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    fn aligned(&self, exp: u64) -> BigUint {
        &self.mantissa << (exp - self.exp)
    }

    pub fn add(&self, other: &Self) -> Self {
        let exp = self.exp.max(other.exp);
        Self::new(self.aligned(exp) + other.aligned(exp), exp)
    }

    pub fn mul_u64(&self, f: u64) -> Self {
        Self::new(&self.mantissa * f, self.exp)
    }

    /// Multiplies by `2^shift` (negative shifts divide).
    pub fn scale_pow2(&self, shift: i64) -> Self {
        if shift >= 0 {
            let s = shift as u64;
            if s <= self.exp {
                Self::new(self.mantissa.clone(), self.exp - s)
            } else {
                Self::new(&self.mantissa << (s - self.exp), 0)
            }
        } else {
            Self::new(self.mantissa.clone(), self.exp + shift.unsigned_abs())
        }
    }

    /// `self <= num / den`, decided exactly.
    pub fn le_fraction(&self, num: u64, den: u64) -> bool {
        assert!(den > 0);
        &self.mantissa * den <= (BigUint::from(num) << self.exp)
    }

    pub fn to_f64(&self) -> f64 {
        let bits = self.mantissa.bits();
        if bits == 0 {
            return 0.0;
        }
        let shift = bits.saturating_sub(64);
        let top = (&self.mantissa >> shift).to_u64().expect("fits in 64 bits") as f64;
        let e = shift as f64 - self.exp as f64;
        // Split the scaling so huge exponents do not overflow before the
        // product underflows.
        let half = (e / 2.0).trunc();
        top * half.exp2() * (e - half).exp2()
    }
}

impl PartialEq for Dyadic {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Dyadic {}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let exp = self.exp.max(other.exp);
        self.aligned(exp).cmp(&other.aligned(exp))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

/// Exact binomial coefficient.
pub fn binomial(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut c = BigUint::one();
    for i in 0..r {
        c = c * (n - i) / (i + 1);
    }
    c
}
