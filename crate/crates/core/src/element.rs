//! Stream element types.
//!
//! Shared Gather&Sort slots are single machine words, so every element type
//! round-trips through a `u64` bit pattern. Ordering is the type's total order
//! (`total_cmp` for floats).

use std::cmp::Ordering;
use std::fmt::Debug;

pub trait Element: Copy + Default + Debug + Send + Sync + 'static {
    fn to_bits(self) -> u64;
    fn from_bits(bits: u64) -> Self;
    fn total_cmp(&self, other: &Self) -> Ordering;
}

impl Element for f64 {
    #[inline]
    fn to_bits(self) -> u64 {
        f64::to_bits(self)
    }
    #[inline]
    fn from_bits(bits: u64) -> Self {
        f64::from_bits(bits)
    }
    #[inline]
    fn total_cmp(&self, other: &Self) -> Ordering {
        f64::total_cmp(self, other)
    }
}

impl Element for f32 {
    #[inline]
    fn to_bits(self) -> u64 {
        f32::to_bits(self) as u64
    }
    #[inline]
    fn from_bits(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }
    #[inline]
    fn total_cmp(&self, other: &Self) -> Ordering {
        f32::total_cmp(self, other)
    }
}

macro_rules! int_element {
    ($($t:ty),*) => {$(
        impl Element for $t {
            #[inline]
            fn to_bits(self) -> u64 {
                self as u64
            }
            #[inline]
            fn from_bits(bits: u64) -> Self {
                bits as $t
            }
            #[inline]
            fn total_cmp(&self, other: &Self) -> Ordering {
                self.cmp(other)
            }
        }
    )*};
}

int_element!(u64, i64, u32, i32);

pub(crate) fn sort_elements<T: Element>(items: &mut [T]) {
    items.sort_unstable_by(T::total_cmp);
}

pub(crate) fn is_sorted<T: Element>(items: &[T]) -> bool {
    items
        .windows(2)
        .all(|w| w[0].total_cmp(&w[1]) != Ordering::Greater)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bits_round_trip() {
        for v in [0.0f64, -1.5, f64::MAX, f64::MIN_POSITIVE] {
            assert_eq!(<f64 as Element>::from_bits(Element::to_bits(v)), v);
        }
        for v in [0i64, -7, i64::MIN, i64::MAX] {
            assert_eq!(<i64 as Element>::from_bits(Element::to_bits(v)), v);
        }
    }

    #[test]
    fn float_order_is_total() {
        let mut xs = vec![3.0, -0.0, 0.0, -2.0, 1.0f64];
        sort_elements(&mut xs);
        assert!(is_sorted(&xs));
        assert_eq!(xs[0], -2.0);
    }
}
