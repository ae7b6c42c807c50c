use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    /// Positive-sequence rotation of this phase: 1, a², a.
    pub fn rotation(self) -> Complex64 {
        let angle = -2.0 * std::f64::consts::PI / 3.0 * self.index() as f64;
        Complex64::from_polar(1.0, angle)
    }

    fn letter(self) -> char {
        match self {
            Phase::A => 'A',
            Phase::B => 'B',
            Phase::C => 'C',
        }
    }
}

/// Non-empty subset of {A, B, C}, stored as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn from_phases(phases: &[Phase]) -> Self {
        PhaseSet(phases.iter().fold(0, |m, p| m | (1 << p.index())))
    }

    pub fn contains(self, phase: Phase) -> bool {
        self.0 & (1 << phase.index()) != 0
    }

    pub fn is_subset_of(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl FromStr for PhaseSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mask = 0u8;
        for ch in s.chars() {
            let bit = match ch.to_ascii_uppercase() {
                'A' => 1,
                'B' => 2,
                'C' => 4,
                'N' => 0,
                _ => return Err(format!("invalid phase letter '{ch}' in \"{s}\"")),
            };
            if mask & bit != 0 {
                return Err(format!("duplicate phase '{ch}' in \"{s}\""));
            }
            mask |= bit;
        }
        if mask == 0 {
            return Err(format!("phase set \"{s}\" is empty"));
        }
        Ok(PhaseSet(mask))
    }
}

impl Serialize for PhaseSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PhaseSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let p: PhaseSet = "CBN".parse().unwrap();
        assert_eq!(p.to_string(), "BC");
        assert_eq!(p.len(), 2);
        assert!(p.is_subset_of(PhaseSet::ABC));
        assert!(!PhaseSet::ABC.is_subset_of(p));
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!("".parse::<PhaseSet>().is_err());
        assert!("N".parse::<PhaseSet>().is_err());
        assert!("AA".parse::<PhaseSet>().is_err());
        assert!("AX".parse::<PhaseSet>().is_err());
    }

    #[test]
    fn rotations_are_120_degrees_apart() {
        let a = Phase::A.rotation();
        let b = Phase::B.rotation();
        let c = Phase::C.rotation();
        assert!((a + b + c).norm() < 1e-12);
        assert!((b.arg().to_degrees() + 120.0).abs() < 1e-9);
    }
}
