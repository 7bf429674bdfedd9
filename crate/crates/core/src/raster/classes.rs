//! Relabelling of dataset-specific class codes into training ground truth.

use serde::{Deserialize, Serialize};

use super::{Mask, Raster};
use crate::error::{invalid, Result};

/// Biome 8 mask codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiomeClass {
    Fill,
    CloudShadow,
    Clear,
    ThinCloud,
    Cloud,
}

impl BiomeClass {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Fill),
            64 => Ok(Self::CloudShadow),
            128 => Ok(Self::Clear),
            192 => Ok(Self::ThinCloud),
            255 => Ok(Self::Cloud),
            other => Err(invalid(format!("unknown Biome 8 class code {other}"))),
        }
    }
}

/// SPARCS mask codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SparcsClass {
    Shadow,
    ShadowOverWater,
    Water,
    SnowIce,
    Land,
    Cloud,
    Flooded,
}

impl SparcsClass {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Self::Shadow),
            1 => Ok(Self::ShadowOverWater),
            2 => Ok(Self::Water),
            3 => Ok(Self::SnowIce),
            4 => Ok(Self::Land),
            5 => Ok(Self::Cloud),
            6 => Ok(Self::Flooded),
            other => Err(invalid(format!("unknown SPARCS class code {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeScheme {
    /// Cloud and thin cloud become cloud, everything else clear.
    BiomeBinaryCloud,
    /// Cloud shadow against everything else.
    BiomeBinaryShadow,
    /// Cloud, shadow (including shadow over water), clear.
    SparcsThreeClass,
    /// Cloud against everything else.
    SparcsBinary,
    /// Shadow (including shadow over water) against everything else.
    SparcsBinaryShadow,
}

/// Mutually exclusive class masks; `valid` marks non-fill pixels, which
/// the masks partition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub names: Vec<String>,
    pub masks: Vec<Mask>,
    pub valid: Mask,
}

impl GroundTruth {
    pub fn class(&self, name: &str) -> Option<&Mask> {
        self.names.iter().position(|n| n == name).map(|i| &self.masks[i])
    }

    pub fn classes(&self) -> usize {
        self.masks.len()
    }
}

/// Map a dataset label raster onto the classes of `scheme`.
///
/// Binary schemes list the positive class first and `clear` second.
pub fn merge_classes(labels: &Raster<u8>, scheme: MergeScheme) -> Result<GroundTruth> {
    if labels.channels() != 1 {
        return Err(invalid("label raster must be single-channel"));
    }
    let (h, w) = labels.dims();
    // class index per pixel, None for fill
    let mut assigned: Vec<Option<usize>> = Vec::with_capacity(h * w);
    let names: Vec<&str> = match scheme {
        MergeScheme::BiomeBinaryCloud | MergeScheme::SparcsBinary => vec!["cloud", "clear"],
        MergeScheme::BiomeBinaryShadow | MergeScheme::SparcsBinaryShadow => vec!["shadow", "clear"],
        MergeScheme::SparcsThreeClass => vec!["cloud", "shadow", "clear"],
    };
    for &code in labels.data() {
        let class = match scheme {
            MergeScheme::BiomeBinaryCloud => match BiomeClass::from_code(code)? {
                BiomeClass::Fill => None,
                BiomeClass::Cloud | BiomeClass::ThinCloud => Some(0),
                _ => Some(1),
            },
            MergeScheme::BiomeBinaryShadow => match BiomeClass::from_code(code)? {
                BiomeClass::Fill => None,
                BiomeClass::CloudShadow => Some(0),
                _ => Some(1),
            },
            MergeScheme::SparcsThreeClass => match SparcsClass::from_code(code)? {
                SparcsClass::Cloud => Some(0),
                SparcsClass::Shadow | SparcsClass::ShadowOverWater => Some(1),
                _ => Some(2),
            },
            MergeScheme::SparcsBinary => match SparcsClass::from_code(code)? {
                SparcsClass::Cloud => Some(0),
                _ => Some(1),
            },
            MergeScheme::SparcsBinaryShadow => match SparcsClass::from_code(code)? {
                SparcsClass::Shadow | SparcsClass::ShadowOverWater => Some(0),
                _ => Some(1),
            },
        };
        assigned.push(class);
    }
    let masks =
        (0..names.len()).map(|k| Raster::new(h, w, 1, assigned.iter().map(|a| *a == Some(k)).collect())).collect::<Result<Vec<_>>>()?;
    let valid = Raster::new(h, w, 1, assigned.iter().map(Option::is_some).collect())?;
    Ok(GroundTruth { names: names.into_iter().map(String::from).collect(), masks, valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(codes: &[u8]) -> Raster<u8> {
        Raster::new(1, codes.len(), 1, codes.to_vec()).unwrap()
    }

    #[test]
    fn biome_cloud_merges_thin_cloud() {
        let gt = merge_classes(&labels(&[0, 64, 128, 192, 255]), MergeScheme::BiomeBinaryCloud).unwrap();
        assert_eq!(gt.class("cloud").unwrap().data(), &[false, false, false, true, true]);
        // shadow counts as clear
        assert_eq!(gt.class("clear").unwrap().data(), &[false, true, true, false, false]);
        assert_eq!(gt.valid.data(), &[false, true, true, true, true]);
    }

    #[test]
    fn biome_shadow() {
        let gt = merge_classes(&labels(&[64, 255, 128]), MergeScheme::BiomeBinaryShadow).unwrap();
        assert_eq!(gt.masks[0].data(), &[true, false, false]);
    }

    #[test]
    fn sparcs_three_class() {
        let gt = merge_classes(&labels(&[0, 1, 2, 3, 4, 5, 6]), MergeScheme::SparcsThreeClass).unwrap();
        assert_eq!(gt.class("cloud").unwrap().data(), &[false, false, false, false, false, true, false]);
        assert_eq!(gt.class("shadow").unwrap().data(), &[true, true, false, false, false, false, false]);
        // water pixel is clear
        assert!(gt.class("clear").unwrap().get(0, 2, 0));
    }

    #[test]
    fn unknown_code_rejected() {
        assert!(merge_classes(&labels(&[7]), MergeScheme::SparcsBinary).is_err());
        assert!(merge_classes(&labels(&[10]), MergeScheme::BiomeBinaryCloud).is_err());
    }

    #[test]
    fn partitions_valid_pixels() {
        let codes: Vec<u8> = (0..7).cycle().take(50).collect();
        for scheme in [MergeScheme::SparcsThreeClass, MergeScheme::SparcsBinary, MergeScheme::SparcsBinaryShadow] {
            let gt = merge_classes(&labels(&codes), scheme).unwrap();
            for i in 0..codes.len() {
                let owners = gt.masks.iter().filter(|m| m.data()[i]).count();
                assert_eq!(owners, usize::from(gt.valid.data()[i]));
            }
        }
        let biome: Vec<u8> = [0u8, 64, 128, 192, 255].iter().copied().cycle().take(40).collect();
        for scheme in [MergeScheme::BiomeBinaryCloud, MergeScheme::BiomeBinaryShadow] {
            let gt = merge_classes(&labels(&biome), scheme).unwrap();
            for i in 0..biome.len() {
                let owners = gt.masks.iter().filter(|m| m.data()[i]).count();
                assert_eq!(owners, usize::from(gt.valid.data()[i]));
            }
        }
    }
}
