//! Synthetic four-band scenes with cloud, shadow and bright confusers.

use rand::Rng;

use super::{resize_bilinear, Mask, Raster, RawRaster};
use crate::error::{config, Result};
use crate::sdaa::{project_shadows, Scene, SdaaParams, SolarGeometry};
use crate::seed;

/// Knobs of [`synth_scene_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub height: usize,
    pub width: usize,
    /// Fraction of pixels marked cloud.
    pub cloud_cover: f64,
    /// Fraction of pixels painted as bright non-cloud surface (snow, sand).
    pub confuser_cover: f64,
    pub geometry: SolarGeometry,
    /// Range of the shadow length factor `r`, pixels.
    pub shift_range: (f64, f64),
    /// Coarsest noise grid, cells per side.
    pub blob_cells: usize,
}

impl SynthOptions {
    pub fn new(height: usize, width: usize, cloud_cover: f64, geometry: SolarGeometry) -> Self {
        let side = height.min(width) as f64;
        Self { height, width, cloud_cover, confuser_cover: 0.0, geometry, shift_range: (0.05 * side, 0.15 * side), blob_cells: 4 }
    }

    fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(config(format!("synthetic scene must be at least 2x2, got {}x{}", self.height, self.width)));
        }
        for (name, v) in [("cloud_cover", self.cloud_cover), ("confuser_cover", self.confuser_cover)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.cloud_cover + self.confuser_cover > 1.0 {
            return Err(config("cloud_cover + confuser_cover exceeds 1"));
        }
        let (lo, hi) = self.shift_range;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(config(format!("invalid shift range ({lo}, {hi})")));
        }
        if self.blob_cells == 0 {
            return Err(config("blob_cells must be positive"));
        }
        Ok(())
    }
}

const CLOUD_DN: f64 = 24000.0;
const CONFUSER_VISIBLE_DN: f64 = 22000.0;
const CONFUSER_NIR_DN: f64 = 11000.0;
const SHADOW_FACTOR: f64 = 0.55;

/// Scene with default options and the requested cloud cover.
pub fn synth_scene(seed: u64, height: usize, width: usize, cloud_cover: f64, geometry: SolarGeometry) -> Result<Scene> {
    synth_scene_with(seed, &SynthOptions::new(height, width, cloud_cover, geometry))
}

/// Deterministic synthetic scene.
///
/// Cloud and confuser masks are the top quantiles of smooth value noise, so
/// their covers are exact up to one pixel. Shadows are the clouds projected
/// along the sun direction with a random `r`.
pub fn synth_scene_with(seed: u64, opts: &SynthOptions) -> Result<Scene> {
    opts.validate()?;
    let (h, w) = (opts.height, opts.width);
    let n = h * w;
    let mut rng = seed::rng(seed);

    let cloud_field = blob_field(&mut rng, h, w, opts.blob_cells)?;
    let cloud_idx = top_fraction(&cloud_field, opts.cloud_cover, &vec![false; n]);
    let mut cloud = vec![false; n];
    cloud_idx.iter().for_each(|&k| cloud[k] = true);
    let cloud_mask = Mask::new(h, w, 1, cloud)?;

    let shadow_mask = if cloud_idx.is_empty() {
        Mask::empty_mask(h, w)
    } else {
        let r = rng.random_range(opts.shift_range.0..=opts.shift_range.1);
        let params = SdaaParams { azimuth_offset_deg: 0.0, zenith_offset_deg: 0.0, shift_r_px: r, gamma: 1.0 };
        project_shadows(&cloud_mask, &opts.geometry, &params)?
    };

    let confuser_field = blob_field(&mut rng, h, w, opts.blob_cells)?;
    let taken = cloud_mask.or(&shadow_mask);
    let free = n - taken.count_ones();
    let want = opts.confuser_cover * n as f64 / free.max(1) as f64;
    let confuser_idx = top_fraction(&confuser_field, want.min(1.0), taken.data());
    let mut confuser = vec![false; n];
    confuser_idx.iter().for_each(|&k| confuser[k] = true);

    let mut texture = Vec::with_capacity(4);
    for _ in 0..4 {
        texture.push(blob_field(&mut rng, h, w, 2 * opts.blob_cells)?);
    }
    let base: [f64; 4] = std::array::from_fn(|_| rng.random_range(8000.0..11000.0));
    let mut raster = RawRaster::filled(h, w, 4, 0);
    for k in 0..n {
        let grain: f64 = rng.random_range(-150.0..150.0);
        for c in 0..4 {
            let background = base[c] + 3000.0 * texture[c][k] + grain;
            let v = if cloud_mask.data()[k] {
                CLOUD_DN + 2500.0 * cloud_field[k] + grain
            } else if confuser[k] {
                let level = if c == 3 { CONFUSER_NIR_DN } else { CONFUSER_VISIBLE_DN };
                level + 1500.0 * confuser_field[k] + grain
            } else if shadow_mask.data()[k] {
                SHADOW_FACTOR * background
            } else {
                background
            };
            raster.data_mut()[k * 4 + c] = v.round().clamp(1.0, 65535.0) as u16;
        }
    }
    Scene::new(format!("synth{seed:016x}"), raster, cloud_mask, shadow_mask, opts.geometry)
}

/// Smooth noise in `[0, 1]`: two octaves of bilinearly upsampled lattices.
fn blob_field<R: Rng>(rng: &mut R, h: usize, w: usize, cells: usize) -> Result<Vec<f64>> {
    let mut field = vec![0.0; h * w];
    for (octave, weight) in [(cells, 1.0), (2 * cells, 0.5)] {
        let values = (0..(octave + 1) * (octave + 1)).map(|_| rng.random::<f64>()).collect();
        let lattice = Raster::new(octave + 1, octave + 1, 1, values)?;
        let up = resize_bilinear(&lattice, h, w)?;
        field.iter_mut().zip(up.data()).for_each(|(f, v)| *f += weight * v);
    }
    let (lo, hi) = field.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    field.iter_mut().for_each(|v| *v = (*v - lo) / span);
    Ok(field)
}

/// Indices of the `round(fraction · eligible)` largest field values among
/// pixels not in `excluded`; ties broken by index.
fn top_fraction(field: &[f64], fraction: f64, excluded: &[bool]) -> Vec<usize> {
    let mut eligible: Vec<usize> = (0..field.len()).filter(|&k| !excluded[k]).collect();
    let take = (fraction * eligible.len() as f64).round() as usize;
    eligible.sort_by(|&a, &b| field[b].total_cmp(&field[a]).then(a.cmp(&b)));
    eligible.truncate(take);
    eligible
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> SolarGeometry {
        SolarGeometry::new(140.0, 35.0).unwrap()
    }

    #[test]
    fn zero_cover_gives_empty_cloud_mask() {
        let s = synth_scene(3, 32, 32, 0.0, geom()).unwrap();
        assert!(s.cloud_mask.is_all_false());
        assert!(s.shadow_mask.is_all_false());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = synth_scene(11, 48, 40, 0.3, geom()).unwrap();
        let b = synth_scene(11, 48, 40, 0.3, geom()).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(12, 48, 40, 0.3, geom()).unwrap();
        assert_ne!(a.raster, c.raster);
    }

    #[test]
    fn half_cover_on_512() {
        let s = synth_scene(5, 512, 512, 0.5, geom()).unwrap();
        let frac = s.cloud_mask.count_ones() as f64 / (512.0 * 512.0);
        assert!((0.45..=0.55).contains(&frac), "cloud fraction {frac}");
    }

    #[test]
    fn masks_are_disjoint_and_shadows_exist() {
        for seed in 0..5 {
            let s = synth_scene(seed, 64, 64, 0.2, geom()).unwrap();
            assert!(s.cloud_mask.and(&s.shadow_mask).is_all_false());
            assert!(s.shadow_mask.count_ones() > 0);
        }
    }

    #[test]
    fn confusers_avoid_cloud_and_are_bright_in_visible() {
        let mut opts = SynthOptions::new(64, 64, 0.0, geom());
        opts.confuser_cover = 0.25;
        let s = synth_scene_with(9, &opts).unwrap();
        assert!(s.cloud_mask.is_all_false());
        let bright = (0..64 * 64).filter(|&k| s.raster.data()[k * 4] > 20000).count();
        assert!((bright as f64 - 0.25 * 4096.0).abs() < 2.0, "bright {bright}");
        let nir_low = (0..64 * 64).filter(|&k| s.raster.data()[k * 4] > 20000 && s.raster.data()[k * 4 + 3] < 13000).count();
        assert_eq!(nir_low, bright);
    }

    #[test]
    fn rejects_bad_options() {
        assert!(synth_scene(0, 16, 16, 1.5, geom()).is_err());
        let mut o = SynthOptions::new(16, 16, 0.6, geom());
        o.confuser_cover = 0.6;
        assert!(synth_scene_with(0, &o).is_err());
    }
}
