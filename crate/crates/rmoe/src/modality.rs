//! Input modalities and their fixed channel layouts.

use serde::{Deserialize, Serialize};

/// The four supported sensor modalities. Channel counts are fixed:
/// optical 3, multispectral 4, amplitude radar 1, and complex polarimetric
/// radar 8 (four polarizations × real/imaginary).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Opt,
    Ms,
    SarL1,
    SarL2,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Opt, Modality::Ms, Modality::SarL1, Modality::SarL2];

    pub fn channels(self) -> usize {
        match self {
            Modality::Opt => 3,
            Modality::Ms => 4,
            Modality::SarL1 => 8,
            Modality::SarL2 => 1,
        }
    }

    /// Complex-valued modalities store interleaved (re, im) pairs.
    pub fn is_complex(self) -> bool {
        matches!(self, Modality::SarL1)
    }

    /// Width of one input token: all pixels of a patch, channel-last.
    pub fn token_dim(self, patch: usize) -> usize {
        patch * patch * self.channels()
    }

    /// Width of one reconstruction target row. Pixel values for Opt, MS and
    /// amplitude radar; a single power value per pixel for complex radar.
    pub fn target_dim(self, patch: usize) -> usize {
        match self {
            Modality::SarL1 => patch * patch,
            _ => patch * patch * self.channels(),
        }
    }

    /// Wire code used by the RAW image format.
    pub fn wire_code(self) -> u8 {
        match self {
            Modality::Opt => 0,
            Modality::Ms => 1,
            Modality::SarL1 => 2,
            Modality::SarL2 => 3,
        }
    }

    pub fn from_wire_code(code: u8) -> Option<Modality> {
        match code {
            0 => Some(Modality::Opt),
            1 => Some(Modality::Ms),
            2 => Some(Modality::SarL1),
            3 => Some(Modality::SarL2),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Opt => "opt",
            Modality::Ms => "ms",
            Modality::SarL1 => "sar_l1",
            Modality::SarL2 => "sar_l2",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s {
            "opt" => Some(Modality::Opt),
            "ms" => Some(Modality::Ms),
            "sar_l1" => Some(Modality::SarL1),
            "sar_l2" => Some(Modality::SarL2),
            _ => None,
        }
    }
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
