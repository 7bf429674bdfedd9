//! Sunlight-direction-aware shadow augmentation.
//!
//! Given a scene with cloud and shadow ground truth and its solar angles,
//! an augmented sample is produced in four steps:
//!
//! 1. original shadows are removed ([`remove_shadows`]);
//! 2. the solar azimuth is offset by `θ_A_O`;
//! 3. every cloud pixel is shifted by
//!    `r·sin(θ_Z + θ_Z_O)·(cos, sin)(θ_A + θ_A_O)` along `(y, x)`, giving the
//!    synthetic shadow mask (SSM) ([`project_shadows`]);
//! 4. SSM pixels are darkened with `i' = round(i^γ)` on raw digital numbers
//!    in every band ([`apply_gamma`]).
//!
//! The SSM becomes the shadow ground truth of the new sample. Projected
//! pixels that land on cloud are dropped, since the cloud hides them.

mod mtl;
mod removal;

pub use mtl::{parse_mtl, render_mtl, MtlDocument};
pub use removal::{connected_components, empty_pixels, match_histogram, remove_shadows, RING_RADIUS};

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid, shape, Result};
use crate::raster::{Mask, Raster, RawRaster};

/// Solar angles at acquisition time, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolarGeometry {
    /// Clockwise from north, in `[0, 360)`.
    pub azimuth_deg: f64,
    /// Angle from the vertical, in `[0, 90)`.
    pub zenith_deg: f64,
}

impl SolarGeometry {
    pub fn new(azimuth_deg: f64, zenith_deg: f64) -> Result<Self> {
        if !(0.0..360.0).contains(&azimuth_deg) {
            return Err(invalid(format!("azimuth {azimuth_deg} outside [0, 360)")));
        }
        if !(0.0..90.0).contains(&zenith_deg) {
            return Err(invalid(format!("zenith {zenith_deg} outside [0, 90)")));
        }
        Ok(Self { azimuth_deg, zenith_deg })
    }

    /// Build from a sun elevation angle; `zenith = 90 − elevation`.
    pub fn from_elevation(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        Self::new(azimuth_deg, 90.0 - elevation_deg)
    }

    pub fn elevation_deg(&self) -> f64 {
        90.0 - self.zenith_deg
    }
}

/// One augmentation setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdaaParams {
    pub azimuth_offset_deg: f64,
    /// Held at zero: shadow length is controlled by `shift_r_px` alone.
    #[serde(default)]
    pub zenith_offset_deg: f64,
    /// Shadow length factor `r`, in pixels.
    pub shift_r_px: f64,
    pub gamma: f64,
}

impl SdaaParams {
    pub fn new(azimuth_offset_deg: f64, shift_r_px: f64, gamma: f64) -> Result<Self> {
        let p = Self { azimuth_offset_deg, zenith_offset_deg: 0.0, shift_r_px, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.azimuth_offset_deg.is_finite() {
            return Err(config("azimuth offset must be finite"));
        }
        if self.zenith_offset_deg != 0.0 {
            return Err(config("zenith offset must be 0"));
        }
        if !(self.shift_r_px >= 0.0 && self.shift_r_px.is_finite()) {
            return Err(config(format!("shift r must be a non-negative number, got {}", self.shift_r_px)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(config(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Continuous `(dy, dx)` displacement of a cloud pixel to its shadow.
    pub fn shift(&self, geometry: &SolarGeometry) -> (f64, f64) {
        let zenith = (geometry.zenith_deg + self.zenith_offset_deg).to_radians();
        let azimuth = (geometry.azimuth_deg + self.azimuth_offset_deg).to_radians();
        let length = self.shift_r_px * zenith.sin();
        (length * azimuth.cos(), length * azimuth.sin())
    }
}

/// Azimuth offsets of the default grid, degrees.
pub const AZIMUTH_OFFSETS: [f64; 3] = [90.0, 180.0, 270.0];
/// Shift factors of the default grid, pixels.
pub const SHIFTS: [f64; 5] = [20.0, 40.0, 60.0, 80.0, 100.0];
/// Gamma values of the default grid.
pub const GAMMAS: [f64; 8] = [0.8, 0.825, 0.85, 0.875, 0.9, 0.925, 0.95, 0.975];

/// Cross product of [`AZIMUTH_OFFSETS`], [`SHIFTS`] and [`GAMMAS`].
pub fn default_param_grid() -> Vec<SdaaParams> {
    let mut grid = Vec::with_capacity(AZIMUTH_OFFSETS.len() * SHIFTS.len() * GAMMAS.len());
    for &a in &AZIMUTH_OFFSETS {
        for &r in &SHIFTS {
            for &g in &GAMMAS {
                grid.push(SdaaParams { azimuth_offset_deg: a, zenith_offset_deg: 0.0, shift_r_px: r, gamma: g });
            }
        }
    }
    grid
}

/// A four-band scene with its cloud and shadow ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub raster: RawRaster,
    pub cloud_mask: Mask,
    pub shadow_mask: Mask,
    pub geometry: SolarGeometry,
}

impl Scene {
    pub fn new(scene_id: String, raster: RawRaster, cloud_mask: Mask, shadow_mask: Mask, geometry: SolarGeometry) -> Result<Self> {
        if !raster.same_dims(&cloud_mask) || !raster.same_dims(&shadow_mask) {
            return Err(shape("raster and masks must share dimensions"));
        }
        if cloud_mask.channels() != 1 || shadow_mask.channels() != 1 {
            return Err(shape("masks must be single-channel"));
        }
        if !cloud_mask.and(&shadow_mask).is_all_false() {
            return Err(invalid("cloud and shadow masks overlap"));
        }
        Ok(Self { scene_id, raster, cloud_mask, shadow_mask, geometry })
    }
}

/// Where an augmented sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub azimuth_offset_deg: f64,
    pub shift_r_px: f64,
    pub gamma: f64,
}

/// Output of [`augment`].
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub raster: RawRaster,
    /// Synthetic shadow mask; the shadow ground truth of this sample.
    pub ssm: Mask,
    pub cloud_mask: Mask,
    pub params: SdaaParams,
    pub provenance: Provenance,
}

impl AugmentedSample {
    /// Stable identifier derived from the source scene and the parameters.
    pub fn sample_id(&self) -> String {
        let p = &self.params;
        format!(
            "{}_a{:03}_r{:03}_g{:04}",
            self.provenance.scene_id,
            p.azimuth_offset_deg.round() as i64,
            p.shift_r_px.round() as i64,
            (p.gamma * 1000.0).round() as i64
        )
    }

    /// View as a scene, with the SSM as its shadow mask.
    pub fn into_scene(self, geometry: SolarGeometry) -> Scene {
        let id = self.sample_id();
        Scene { scene_id: id, raster: self.raster, cloud_mask: self.cloud_mask, shadow_mask: self.ssm, geometry }
    }
}

/// Synthetic shadow mask of `cloud_mask` under the offset sun direction.
///
/// Target coordinates are rounded half away from zero; those outside the
/// raster are discarded and those landing on cloud are excluded.
pub fn project_shadows(cloud_mask: &Mask, geometry: &SolarGeometry, params: &SdaaParams) -> Result<Mask> {
    params.validate()?;
    if cloud_mask.is_all_false() {
        return Err(invalid("cloud mask is empty; nothing to project"));
    }
    let (h, w) = cloud_mask.dims();
    let (dy, dx) = params.shift(geometry);
    let mut ssm = Mask::empty_mask(h, w);
    for y in 0..h {
        for x in 0..w {
            if !cloud_mask.get(y, x, 0) {
                continue;
            }
            let sy = (y as f64 + dy).round();
            let sx = (x as f64 + dx).round();
            if sy < 0.0 || sx < 0.0 || sy >= h as f64 || sx >= w as f64 {
                continue;
            }
            let (sy, sx) = (sy as usize, sx as usize);
            if !cloud_mask.get(sy, sx, 0) {
                ssm.set(sy, sx, 0, true);
            }
        }
    }
    Ok(ssm)
}

/// Darken the SSM pixels of every band with `i' = round(i^γ)`.
pub fn apply_gamma(raster: &RawRaster, ssm: &Mask, gamma: f64) -> Result<RawRaster> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(config(format!("gamma must be positive, got {gamma}")));
    }
    if !raster.same_dims(ssm) {
        return Err(shape("raster and SSM must share dimensions"));
    }
    let c = raster.channels();
    let mut out = raster.clone();
    for (k, &inside) in ssm.data().iter().enumerate() {
        if !inside {
            continue;
        }
        for v in &mut out.data_mut()[k * c..(k + 1) * c] {
            *v = f64::from(*v).powf(gamma).round().min(65535.0) as u16;
        }
    }
    Ok(out)
}

/// Run the four augmentation steps on one scene.
pub fn augment(scene: &Scene, params: &SdaaParams) -> Result<AugmentedSample> {
    params.validate()?;
    if scene.shadow_mask.is_all_false() {
        return Err(invalid(format!("scene '{}' is free of shadow and cannot be augmented", scene.scene_id)));
    }
    if scene.cloud_mask.is_all_false() {
        return Err(invalid(format!("scene '{}' has no clouds to project", scene.scene_id)));
    }
    let shadow_free = remove_shadows(scene)?;
    let ssm = project_shadows(&scene.cloud_mask, &scene.geometry, params)?;
    let raster = apply_gamma(&shadow_free, &ssm, params.gamma)?;
    Ok(AugmentedSample {
        raster,
        ssm,
        cloud_mask: scene.cloud_mask.clone(),
        params: *params,
        provenance: Provenance {
            scene_id: scene.scene_id.clone(),
            azimuth_offset_deg: params.azimuth_offset_deg,
            shift_r_px: params.shift_r_px,
            gamma: params.gamma,
        },
    })
}

/// Single-pixel-at-a-time displacement actually realised by a projection,
/// measured as the mode of `(shadow − cloud)` offsets; used by checks.
pub fn measured_shift(cloud_mask: &Mask, ssm: &Mask) -> Option<(i64, i64)> {
    let centroid = |m: &Mask| -> Option<(f64, f64)> {
        let (mut sy, mut sx, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(y, x, 0) {
                    sy += y as f64;
                    sx += x as f64;
                    n += 1.0;
                }
            }
        }
        (n > 0.0).then(|| (sy / n, sx / n))
    };
    let (cy, cx) = centroid(cloud_mask)?;
    let (sy, sx) = centroid(ssm)?;
    Some(((sy - cy).round() as i64, (sx - cx).round() as i64))
}

/// Helper for tests and synthetic data: a filled rectangle mask.
pub fn rect_mask(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Mask {
    Raster::from_fn(h, w, 1, |y, x, _| rows.contains(&y) && cols.contains(&x))
}
