//! Enumerate and load on-disk datasets. Nothing is ever downloaded.
//!
//! 38/95-Cloud: one directory per band and split, `<split>_<band>/`, holding
//! `<band>_<patch-id>_<scene-id>.TIF`; ground truth lives in `<split>_gt/`
//! with the `gt_` prefix. Patch ids look like `patch_12_3_by_7` and scene ids
//! start with `LC`.
//!
//! SPARCS: flat directory of `<id>_data.tif` (10 bands, Landsat 8 bands 1–11
//! without the panchromatic band), `<id>_mask.png` (class codes) and
//! `<id>_mtl.txt`.

use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_label_png, read_tiff_u16, read_tiff_u8};
use super::{Mask, Raster, RawRaster, BANDS};
use crate::error::{invalid, Result};
use crate::sdaa::{parse_mtl, SolarGeometry};

/// Split `<patch-id>_<scene-id>` at the scene prefix `_LC`.
pub fn split_patch_name(stem: &str) -> Option<(&str, &str)> {
    let at = stem.find("_LC")?;
    Some((&stem[..at], &stem[at + 1..]))
}

/// One 38-Cloud patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CloudPatch {
    pub patch_id: String,
    pub scene_id: String,
    /// Red, green, blue, NIR.
    pub bands: [PathBuf; 4],
    pub gt: Option<PathBuf>,
}

fn has_tif_ext(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
}

/// All patches of `split` (e.g. `train`, `test`), sorted by scene then patch.
///
/// A patch is listed only when all four band files exist.
pub fn list_38cloud(root: &Path, split: &str) -> Result<Vec<CloudPatch>> {
    let red_dir = root.join(format!("{split}_red"));
    let mut patches = Vec::new();
    for entry in fs::read_dir(&red_dir)? {
        let path = entry?.path();
        if !has_tif_ext(&path) {
            continue;
        }
        let Some(file) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(rest) = file.strip_prefix("red_") else { continue };
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("TIF");
        let stem = &rest[..rest.len() - ext.len() - 1];
        let Some((patch_id, scene_id)) = split_patch_name(stem) else { continue };
        let bands: [PathBuf; 4] =
            std::array::from_fn(|c| root.join(format!("{split}_{}", BANDS[c])).join(format!("{}_{stem}.{ext}", BANDS[c])));
        if !bands.iter().all(|b| b.is_file()) {
            continue;
        }
        let gt = root.join(format!("{split}_gt")).join(format!("gt_{stem}.{ext}"));
        patches.push(CloudPatch { patch_id: patch_id.to_string(), scene_id: scene_id.to_string(), bands, gt: gt.is_file().then_some(gt) });
    }
    patches.sort_by(|a, b| (&a.scene_id, &a.patch_id).cmp(&(&b.scene_id, &b.patch_id)));
    Ok(patches)
}

/// Four-band raster and, when present, the cloud mask of a patch.
pub fn load_38cloud(patch: &CloudPatch) -> Result<(RawRaster, Option<Mask>)> {
    let bands = patch.bands.iter().map(|p| read_tiff_u16(p)).collect::<Result<Vec<_>>>()?;
    if bands.iter().any(|b| b.channels() != 1) {
        return Err(invalid(format!("patch {}: band files must be single-channel", patch.patch_id)));
    }
    let raster = Raster::stack(&bands)?;
    let gt = match &patch.gt {
        Some(p) => Some(read_tiff_u8(p)?.map(|v| v != 0)),
        None => None,
    };
    if let Some(m) = &gt {
        if !m.same_dims(&raster) {
            return Err(invalid(format!("patch {}: ground truth dimensions differ", patch.patch_id)));
        }
    }
    Ok((raster, gt))
}

/// Indices of red, green, blue and NIR within a SPARCS data cube.
pub const SPARCS_RGBN: [usize; 4] = [3, 2, 1, 4];

/// One SPARCS scene on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparcsEntry {
    pub scene_id: String,
    pub data: PathBuf,
    pub mask: PathBuf,
    pub mtl: PathBuf,
}

/// Loaded SPARCS scene: RGBN raster, raw class codes and solar angles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparcsScene {
    pub scene_id: String,
    pub raster: RawRaster,
    pub labels: Raster<u8>,
    pub geometry: SolarGeometry,
}

/// Scenes under `root` with all three files present, sorted by id.
pub fn list_sparcs(root: &Path) -> Result<Vec<SparcsEntry>> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        let Some(id) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix("_data.tif")) else {
            continue;
        };
        let mask = root.join(format!("{id}_mask.png"));
        let mtl = root.join(format!("{id}_mtl.txt"));
        if mask.is_file() && mtl.is_file() {
            entries.push(SparcsEntry { scene_id: id.to_string(), data: path.clone(), mask, mtl });
        }
    }
    entries.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    Ok(entries)
}

pub fn load_sparcs(entry: &SparcsEntry) -> Result<SparcsScene> {
    let cube = read_tiff_u16(&entry.data)?;
    if cube.channels() <= SPARCS_RGBN.iter().copied().max().unwrap_or(0) {
        return Err(invalid(format!("{}: {} bands is too few", entry.scene_id, cube.channels())));
    }
    let bands: Vec<_> = SPARCS_RGBN.iter().map(|&c| cube.band(c)).collect();
    let raster = Raster::stack(&bands)?;
    let labels = read_label_png(&entry.mask)?;
    if !labels.same_dims(&raster) {
        return Err(invalid(format!("{}: mask dimensions differ from data", entry.scene_id)));
    }
    let geometry = parse_mtl(&fs::read_to_string(&entry.mtl)?)?;
    Ok(SparcsScene { scene_id: entry.scene_id.clone(), raster, labels, geometry })
}
