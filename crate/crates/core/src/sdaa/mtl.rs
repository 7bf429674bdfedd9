//! Landsat MTL metadata: `KEY = value` lines, optionally inside
//! `GROUP = NAME` / `END_GROUP = NAME` blocks.

use std::collections::BTreeMap;

use super::SolarGeometry;
use crate::error::{Error, Result};

/// Flattened key/value pairs of an MTL document. Keys keep their group
/// path (`IMAGE_ATTRIBUTES.SUN_AZIMUTH`) and are also reachable by bare
/// name through [`MtlDocument::find`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MtlDocument {
    entries: BTreeMap<String, String>,
}

impl MtlDocument {
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups: Vec<String> = Vec::new();
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line == "END" {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse(format!("line {}: expected KEY = value, got '{line}'", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim().trim_matches('"').to_string();
            match key {
                "GROUP" => groups.push(value),
                "END_GROUP" => {
                    if groups.pop().as_deref() != Some(value.as_str()) {
                        return Err(Error::Parse(format!("line {}: unbalanced END_GROUP {value}", lineno + 1)));
                    }
                }
                _ => {
                    let mut path = groups.join(".");
                    if !path.is_empty() {
                        path.push('.');
                    }
                    path.push_str(key);
                    entries.insert(path, value);
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, path: &str) -> Option<&str> {
        self.entries.get(path).map(String::as_str)
    }

    /// First value whose last path component equals `key`.
    pub fn find(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(path, _)| path.rsplit('.').next() == Some(key)).map(|(_, v)| v.as_str())
    }

    fn number(&self, key: &str) -> Result<f64> {
        let raw = self.find(key).ok_or_else(|| Error::Parse(format!("missing key {key}")))?;
        raw.parse::<f64>().map_err(|_| Error::Parse(format!("{key}: '{raw}' is not a number")))
    }
}

/// Solar azimuth and zenith from an MTL document.
///
/// Zenith is `90 − SUN_ELEVATION`. Negative azimuths (the ±180° convention
/// some products use) are wrapped into `[0, 360)`.
pub fn parse_mtl(text: &str) -> Result<SolarGeometry> {
    let doc = MtlDocument::parse(text)?;
    let azimuth = doc.number("SUN_AZIMUTH")?;
    let elevation = doc.number("SUN_ELEVATION")?;
    if !(-180.0..360.0).contains(&azimuth) {
        return Err(Error::InvalidInput(format!("SUN_AZIMUTH {azimuth} outside [-180, 360)")));
    }
    SolarGeometry::from_elevation(azimuth.rem_euclid(360.0), elevation)
}

/// Minimal MTL document holding the two solar angles.
pub fn render_mtl(geometry: &SolarGeometry) -> String {
    format!(
        "GROUP = L1_METADATA_FILE\n  GROUP = IMAGE_ATTRIBUTES\n    SUN_AZIMUTH = {}\n    SUN_ELEVATION = {}\n  END_GROUP = IMAGE_ATTRIBUTES\nEND_GROUP = L1_METADATA_FILE\nEND\n",
        geometry.azimuth_deg,
        geometry.elevation_deg()
    )
}
