//! Tissue segmentation masks stored on the downsampled tissue grid.

use serde::{Deserialize, Serialize};

use crate::error::FieldError;
use crate::field::ScalarField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TissueClass {
    #[serde(rename = "BG")]
    Background,
    #[serde(rename = "CA")]
    Cancer,
    #[serde(rename = "UNK")]
    Unknown,
}

impl TissueClass {
    pub const ALL: [TissueClass; 3] = [Self::Background, Self::Cancer, Self::Unknown];

    /// On-disk pixel code.
    pub fn code(self) -> u8 {
        match self {
            Self::Background => 1,
            Self::Cancer => 2,
            Self::Unknown => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Self::Background),
            2 => Some(Self::Cancer),
            255 => Some(Self::Unknown),
            _ => None,
        }
    }

    /// Channel in the one-hot tissue encoding used by the network: UNK=0, BG=1, CA=2.
    pub fn channel(self) -> usize {
        match self {
            Self::Unknown => 0,
            Self::Background => 1,
            Self::Cancer => 2,
        }
    }

    pub fn from_channel(c: usize) -> Option<Self> {
        match c {
            0 => Some(Self::Unknown),
            1 => Some(Self::Background),
            2 => Some(Self::Cancer),
            _ => None,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::Background => "BG",
            Self::Cancer => "CA",
            Self::Unknown => "UNK",
        }
    }
}

/// Number of channels in the one-hot tissue encoding.
pub const TISSUE_CHANNELS: usize = 3;

/// Square tissue label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TissueMask {
    side: usize,
    classes: Vec<TissueClass>,
}

impl TissueMask {
    pub fn filled(side: usize, class: TissueClass) -> Self {
        Self {
            side,
            classes: vec![class; side * side],
        }
    }

    pub fn from_classes(side: usize, classes: Vec<TissueClass>) -> Result<Self, FieldError> {
        if classes.len() != side * side {
            return Err(FieldError::LengthMismatch {
                expected: side * side,
                actual: classes.len(),
            });
        }
        Ok(Self { side, classes })
    }

    /// Decodes raw pixel codes; the error carries the first unknown code.
    pub fn from_codes(side: usize, codes: &[u8]) -> Result<Self, u8> {
        let classes = codes
            .iter()
            .map(|&c| TissueClass::from_code(c).ok_or(c))
            .collect::<Result<Vec<_>, u8>>()?;
        Self::from_classes(side, classes).map_err(|_| 0)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn get(&self, y: usize, x: usize) -> TissueClass {
        self.classes[y * self.side + x]
    }

    pub fn set(&mut self, y: usize, x: usize, class: TissueClass) {
        self.classes[y * self.side + x] = class;
    }

    pub fn classes(&self) -> &[TissueClass] {
        &self.classes
    }

    pub fn codes(&self) -> Vec<u8> {
        self.classes.iter().map(|c| c.code()).collect()
    }

    pub fn count(&self, class: TissueClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn to_one_hot(&self) -> ScalarField {
        let labels: Vec<usize> = self.classes.iter().map(|c| c.channel()).collect();
        ScalarField::one_hot(&labels, self.side, self.side, TISSUE_CHANNELS)
            .expect("channels are in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_roundtrip() {
        for c in TissueClass::ALL {
            assert_eq!(TissueClass::from_code(c.code()), Some(c));
            assert_eq!(TissueClass::from_channel(c.channel()), Some(c));
        }
        assert_eq!(TissueClass::from_code(0), None);
        assert_eq!(TissueMask::from_codes(1, &[7]).unwrap_err(), 7);
    }

    #[test]
    fn one_hot_layout() {
        let m = TissueMask::from_codes(2, &[1, 2, 255, 2]).unwrap();
        let f = m.to_one_hot();
        assert_eq!(f.get(1, 0, 0), 1.0);
        assert_eq!(f.get(2, 0, 1), 1.0);
        assert_eq!(f.get(0, 1, 0), 1.0);
        assert_eq!(m.count(TissueClass::Cancer), 2);
    }
}
