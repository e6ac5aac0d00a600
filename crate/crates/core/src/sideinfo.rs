//! Side-information vectors and the discrete phase codes attached to them.
//!
//! A token's side information is a presence vector over `K` reference
//! identities. Two tokens agree on reference `i` when their `i`-th bits
//! match; a mismatch rotates the `i`-th side plane by the phase code
//! `phi_i = (2*pi*i - pi) / K`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{arg_err, Error, Result};

/// Presence bits over `K` references, bit `i` (0-based) standing for
/// reference `i + 1`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SideInfoVec {
    bits: Vec<bool>,
}

impl SideInfoVec {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return arg_err("side-information vector must have K >= 1 entries");
        }
        Ok(Self { bits })
    }

    /// All-zero vector: a token that mentions no reference.
    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![false; k])
    }

    /// One-hot vector for reference `r` (1-based), as carried by reference tokens.
    pub fn one_hot(r: usize, k: usize) -> Result<Self> {
        if r == 0 || r > k {
            return arg_err(format!("reference index {r} outside 1..={k}"));
        }
        let mut bits = vec![false; k];
        bits[r - 1] = true;
        Self::new(bits)
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>, k: usize) -> Result<Self> {
        let mut v = Self::zeros(k)?;
        for r in indices {
            if r == 0 || r > k {
                return arg_err(format!("reference index {r} outside 1..={k}"));
            }
            v.bits[r - 1] = true;
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_one_hot(&self) -> bool {
        self.count_ones() == 1
    }

    /// Bits as 0.0 / 1.0, used as absolute side coordinates.
    pub fn as_coords(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

impl fmt::Display for SideInfoVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for SideInfoVec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!(
                    "side bit string {s:?} contains {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }
}

impl Serialize for SideInfoVec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SideInfoVec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Elementwise `|a_i - b_i|`.
pub fn side_distance(a: &SideInfoVec, b: &SideInfoVec) -> Result<Vec<u8>> {
    if a.len() != b.len() {
        return arg_err(format!(
            "side vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        ));
    }
    Ok(a.bits
        .iter()
        .zip(&b.bits)
        .map(|(x, y)| u8::from(x != y))
        .collect())
}

/// Phase code for reference `i` (1-based) out of `k`.
pub fn ref_phase(i: usize, k: usize) -> Result<f64> {
    if k == 0 || i == 0 || i > k {
        return arg_err(format!("phase index {i} outside 1..={k}"));
    }
    Ok((2.0 * PI * i as f64 - PI) / k as f64)
}

/// All `k` phase codes in order.
pub fn ref_phases(k: usize) -> Result<Vec<f64>> {
    (1..=k).map(|i| ref_phase(i, k)).collect()
}

/// Per-plane side rotation angles `phi_i * delta_i`.
pub fn side_angles(delta: &[u8], k: usize) -> Result<Vec<f64>> {
    if delta.len() != k {
        return arg_err(format!("side distance has length {}, expected {k}", delta.len()));
    }
    if let Some(bad) = delta.iter().find(|d| **d > 1) {
        return arg_err(format!("side distance entries must be 0 or 1, got {bad}"));
    }
    delta
        .iter()
        .enumerate()
        .map(|(i, &d)| Ok(ref_phase(i + 1, k)? * f64::from(d)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sv(s: &str) -> SideInfoVec {
        s.parse().unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(side_distance(&sv("10"), &sv("01")).unwrap(), vec![1, 1]);
        assert_eq!(side_distance(&sv("11"), &sv("10")).unwrap(), vec![0, 1]);
        for s in ["00", "01", "10", "11", "1011"] {
            assert!(side_distance(&sv(s), &sv(s)).unwrap().iter().all(|d| *d == 0));
        }
    }

    #[test]
    fn distance_length_mismatch() {
        assert!(matches!(
            side_distance(&sv("10"), &sv("100")),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn phase_examples() {
        assert_eq!(ref_phase(1, 1).unwrap(), PI);
        let k2 = ref_phases(2).unwrap();
        assert!((k2[0] - PI / 2.0).abs() < 1e-15);
        assert!((k2[1] - 3.0 * PI / 2.0).abs() < 1e-15);
        let k4 = ref_phases(4).unwrap();
        for (got, num) in k4.iter().zip([1.0, 3.0, 5.0, 7.0]) {
            assert!((got - num * PI / 4.0).abs() < 1e-15);
        }
        assert!(ref_phase(0, 2).is_err());
        assert!(ref_phase(3, 2).is_err());
    }

    #[test]
    fn phases_distinct_and_nonzero_mod_two_pi() {
        for k in 1..=64 {
            let p = ref_phases(k).unwrap();
            for (i, a) in p.iter().enumerate() {
                let r = a.rem_euclid(2.0 * PI);
                assert!(r > 1e-9 && (2.0 * PI - r) > 1e-9, "K={k} phase {i} is 0 mod 2pi");
                for b in &p[i + 1..] {
                    assert!((a - b).abs() > 1e-9);
                }
            }
            for w in p.windows(2) {
                assert!((w[1] - w[0] - 2.0 * PI / k as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn side_angle_examples() {
        assert_eq!(side_angles(&[0, 0], 2).unwrap(), vec![0.0, 0.0]);
        let a = side_angles(&[1, 0], 2).unwrap();
        assert!((a[0] - PI / 2.0).abs() < 1e-15 && a[1] == 0.0);
        let a = side_angles(&[1, 1], 2).unwrap();
        assert!((a[1] - 3.0 * PI / 2.0).abs() < 1e-15);
        assert!(side_angles(&[1], 2).is_err());
        assert!(side_angles(&[2, 0], 2).is_err());
    }

    #[test]
    fn bit_string_round_trip() {
        let v = SideInfoVec::from_indices([1, 3], 4).unwrap();
        assert_eq!(v.to_string(), "1010");
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, "\"1010\"");
        assert_eq!(serde_json::from_str::<SideInfoVec>(&json).unwrap(), v);
        assert!("10x".parse::<SideInfoVec>().is_err());
        assert!("".parse::<SideInfoVec>().is_err());
    }

    #[test]
    fn one_hot_bounds() {
        assert!(SideInfoVec::one_hot(2, 2).unwrap().is_one_hot());
        assert!(SideInfoVec::one_hot(0, 2).is_err());
        assert!(SideInfoVec::one_hot(3, 2).is_err());
    }
}
