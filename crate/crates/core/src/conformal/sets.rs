use std::fmt;

/// Subset of `{0, 1}` as a 2-bit mask: bit 0 means label 0 is in the set,
/// bit 1 means label 1 is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PredictionSet(u8);

impl PredictionSet {
    pub const EMPTY: Self = Self(0b00);
    pub const NORMAL: Self = Self(0b01);
    pub const ANOMALY: Self = Self(0b10);
    pub const BOTH: Self = Self(0b11);

    pub fn from_mask(mask: u8) -> Option<Self> {
        (mask <= 0b11).then_some(Self(mask))
    }

    pub fn from_membership(has_normal: bool, has_anomaly: bool) -> Self {
        Self(u8::from(has_normal) | (u8::from(has_anomaly) << 1))
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, label: u8) -> bool {
        label <= 1 && self.0 & (1 << label) != 0
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn intersect(self, other: Self) -> Self {
        Self(self.0 & other.0)
    }
}

impl fmt::Display for PredictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self.0 {
            0b00 => "{}",
            0b01 => "{0}",
            0b10 => "{1}",
            _ => "{0,1}",
        })
    }
}
