//! File formats.
//!
//! - Band files: 16-bit single-channel PNG or TIFF.
//! - Masks: 8-bit single-channel PNG, zero is background, anything else set
//!   (written as 255).
//! - Probability maps: raw little-endian `f32` in `H × W × K` order plus a
//!   JSON sidecar describing the layout.
//! - Scene directories: one PNG per band (`red.png`, `green.png`,
//!   `blue.png`, `nir.png`), `cloud.png`, `shadow.png`, `<scene-id>_MTL.txt`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::encoder::colortype::{self, ColorType};
use tiff::encoder::TiffEncoder;
use tiff::tags::{PhotometricInterpretation, SampleFormat};

use super::{Mask, Raster, RawRaster, BANDS};
use crate::error::{invalid, shape, Error, Result};
use crate::sdaa::{parse_mtl, render_mtl, AugmentedSample, Scene, SolarGeometry};

fn codec(msg: impl Into<String>) -> Error {
    Error::Codec(msg.into())
}

fn decode_png(path: &Path) -> Result<(usize, usize, png::BitDepth, Vec<u8>)> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info()?;
    let size = reader.output_buffer_size().ok_or_else(|| codec("PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(codec(format!("{}: expected a grayscale PNG, found {:?}", path.display(), info.color_type)));
    }
    buf.truncate(info.buffer_size());
    Ok((info.height as usize, info.width as usize, info.bit_depth, buf))
}

fn encode_png(path: &Path, height: usize, width: usize, depth: png::BitDepth, bytes: &[u8]) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(bytes)?;
    writer.finish()?;
    Ok(())
}

/// Single-channel 8- or 16-bit grayscale PNG as digital numbers.
pub fn read_png_u16(path: &Path) -> Result<RawRaster> {
    let (h, w, depth, buf) = decode_png(path)?;
    let data = match depth {
        png::BitDepth::Sixteen => buf.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect(),
        png::BitDepth::Eight => buf.into_iter().map(u16::from).collect(),
        other => return Err(codec(format!("{}: unsupported bit depth {other:?}", path.display()))),
    };
    Raster::new(h, w, 1, data)
}

/// Write a single-channel raster as a 16-bit grayscale PNG.
pub fn write_png_u16(path: &Path, raster: &RawRaster) -> Result<()> {
    if raster.channels() != 1 {
        return Err(shape("PNG band files hold exactly one channel"));
    }
    let bytes: Vec<u8> = raster.data().iter().flat_map(|v| v.to_be_bytes()).collect();
    encode_png(path, raster.height(), raster.width(), png::BitDepth::Sixteen, &bytes)
}

/// 8-bit grayscale PNG of class codes.
pub fn read_label_png(path: &Path) -> Result<Raster<u8>> {
    let (h, w, depth, buf) = decode_png(path)?;
    if depth != png::BitDepth::Eight {
        return Err(codec(format!("{}: label images must be 8-bit", path.display())));
    }
    Raster::new(h, w, 1, buf)
}

pub fn write_label_png(path: &Path, labels: &Raster<u8>) -> Result<()> {
    if labels.channels() != 1 {
        return Err(shape("label images hold exactly one channel"));
    }
    encode_png(path, labels.height(), labels.width(), png::BitDepth::Eight, labels.data())
}

/// Mask PNG; any nonzero value is set.
pub fn read_mask_png(path: &Path) -> Result<Mask> {
    Ok(read_label_png(path)?.map(|v| v != 0))
}

/// Mask as an 8-bit PNG with values {0, 255}.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    write_label_png(path, &mask.map(|v| if v { 255u8 } else { 0 }))
}

/// Chunky unsigned 16-bit samples, `N` per pixel.
struct Bands16<const N: usize>;

impl<const N: usize> ColorType for Bands16<N> {
    type Inner = u16;
    const TIFF_VALUE: PhotometricInterpretation = PhotometricInterpretation::BlackIsZero;
    const BITS_PER_SAMPLE: &'static [u16] = &[16; N];
    const SAMPLE_FORMAT: &'static [SampleFormat] = &[SampleFormat::Uint; N];

    fn horizontal_predict(row: &[u16], result: &mut Vec<u16>) {
        result.extend_from_slice(&row[..N.min(row.len())]);
        result.extend(row.iter().zip(row.iter().skip(N)).map(|(prev, cur)| cur.wrapping_sub(*prev)));
    }
}

fn tiff_samples(path: &Path) -> Result<(usize, usize, tiff::decoder::DecodingResult)> {
    let mut decoder = tiff::decoder::Decoder::new(BufReader::new(File::open(path)?))?;
    let (w, h) = decoder.dimensions()?;
    let image = decoder.read_image()?;
    Ok((h as usize, w as usize, image))
}

/// TIFF of unsigned 8- or 16-bit samples, any number of chunky bands.
pub fn read_tiff_u16(path: &Path) -> Result<RawRaster> {
    use tiff::decoder::DecodingResult;
    let (h, w, image) = tiff_samples(path)?;
    let data: Vec<u16> = match image {
        DecodingResult::U16(v) => v,
        DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
        _ => return Err(codec(format!("{}: expected unsigned 8/16-bit samples", path.display()))),
    };
    if data.is_empty() || !data.len().is_multiple_of(h * w) {
        return Err(codec(format!("{}: sample count does not match dimensions", path.display())));
    }
    let channels = data.len() / (h * w);
    Raster::new(h, w, channels, data)
}

/// Single-band 8-bit TIFF, typically a ground-truth mask.
pub fn read_tiff_u8(path: &Path) -> Result<Raster<u8>> {
    use tiff::decoder::DecodingResult;
    let (h, w, image) = tiff_samples(path)?;
    match image {
        DecodingResult::U8(v) => Raster::new(h, w, 1, v),
        _ => Err(codec(format!("{}: expected 8-bit samples", path.display()))),
    }
}

/// Write 16-bit samples; 1, 3, 4 and 10 bands are supported.
pub fn write_tiff_u16(path: &Path, raster: &RawRaster) -> Result<()> {
    let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path)?))?;
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    match raster.channels() {
        1 => encoder.write_image::<colortype::Gray16>(w, h, raster.data())?,
        3 => encoder.write_image::<colortype::RGB16>(w, h, raster.data())?,
        4 => encoder.write_image::<Bands16<4>>(w, h, raster.data())?,
        10 => encoder.write_image::<Bands16<10>>(w, h, raster.data())?,
        c => return Err(invalid(format!("cannot write a {c}-band TIFF"))),
    }
    Ok(())
}

pub fn write_tiff_u8(path: &Path, raster: &Raster<u8>) -> Result<()> {
    if raster.channels() != 1 {
        return Err(shape("8-bit TIFF output holds exactly one channel"));
    }
    let mut encoder = TiffEncoder::new(BufWriter::new(File::create(path)?))?;
    encoder.write_image::<colortype::Gray8>(raster.width() as u32, raster.height() as u32, raster.data())?;
    Ok(())
}

/// Layout record stored next to a probability map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapHeader {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub dtype: String,
    pub scene_id: String,
}

/// Sidecar path of a map file: `x.f32` becomes `x.json`.
pub fn sidecar_path(map_path: &Path) -> PathBuf {
    map_path.with_extension("json")
}

/// Write `map` as little-endian `f32` plus its JSON sidecar.
pub fn write_probability_map(path: &Path, map: &Raster<f64>, scene_id: &str) -> Result<()> {
    let bytes: Vec<u8> = map.data().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let header = MapHeader {
        height: map.height(),
        width: map.width(),
        classes: map.channels(),
        dtype: "float32-le".into(),
        scene_id: scene_id.into(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&header)? + "\n")?;
    Ok(())
}

pub fn read_probability_map(path: &Path) -> Result<(Raster<f64>, MapHeader)> {
    let header: MapHeader = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    if header.dtype != "float32-le" {
        return Err(codec(format!("unsupported map dtype '{}'", header.dtype)));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))).collect();
    Ok((Raster::new(header.height, header.width, header.classes, data)?, header))
}

/// Write a scene directory.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (c, name) in BANDS.iter().enumerate() {
        write_png_u16(&dir.join(format!("{name}.png")), &scene.raster.band(c))?;
    }
    write_mask_png(&dir.join("cloud.png"), &scene.cloud_mask)?;
    write_mask_png(&dir.join("shadow.png"), &scene.shadow_mask)?;
    fs::write(dir.join(format!("{}_MTL.txt", scene.scene_id)), render_mtl(&scene.geometry))?;
    Ok(())
}

fn find_mtl(dir: &Path) -> Result<(String, PathBuf)> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(id) = name.strip_suffix("_MTL.txt") {
            found.push((id.to_string(), path.clone()));
        }
    }
    found.sort();
    match found.len() {
        1 => Ok(found.pop().expect("one element")),
        0 => Err(invalid(format!("{}: no *_MTL.txt metadata file", dir.display()))),
        n => Err(invalid(format!("{}: {n} metadata files, expected one", dir.display()))),
    }
}

/// Read a scene directory written by [`write_scene`].
pub fn read_scene(dir: &Path) -> Result<Scene> {
    let (scene_id, mtl) = find_mtl(dir)?;
    let geometry = parse_mtl(&fs::read_to_string(mtl)?)?;
    let bands = BANDS.iter().map(|name| read_png_u16(&dir.join(format!("{name}.png")))).collect::<Result<Vec<_>>>()?;
    let raster = Raster::stack(&bands)?;
    let cloud = read_mask_png(&dir.join("cloud.png"))?;
    let shadow = read_mask_png(&dir.join("shadow.png"))?;
    Scene::new(scene_id, raster, cloud, shadow, geometry)
}

/// Scene directories directly below `root`, sorted by name.
pub fn list_scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.is_dir() && find_mtl(&path).is_ok() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

/// Write an augmented sample as a scene directory named by its sample id,
/// with a `provenance.json` sidecar. Returns the directory.
pub fn write_augmented(root: &Path, sample: &AugmentedSample, geometry: SolarGeometry) -> Result<PathBuf> {
    let dir = root.join(sample.sample_id());
    let provenance = serde_json::to_string_pretty(&sample.provenance)? + "\n";
    write_scene(&dir, &sample.clone().into_scene(geometry))?;
    let mut f = File::create(dir.join("provenance.json"))?;
    f.write_all(provenance.as_bytes())?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::synth_scene;

    #[test]
    fn png_band_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_fn(5, 7, 1, |y, x, _| (y * 9000 + x * 1000) as u16);
        let p = dir.path().join("b.png");
        write_png_u16(&p, &r).unwrap();
        assert_eq!(read_png_u16(&p).unwrap(), r);
    }

    #[test]
    fn mask_png_uses_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let m = Raster::from_fn(4, 4, 1, |y, x, _| (y + x) % 3 == 0);
        let p = dir.path().join("m.png");
        write_mask_png(&p, &m).unwrap();
        let raw = read_label_png(&p).unwrap();
        assert!(raw.data().iter().all(|&v| v == 0 || v == 255));
        assert_eq!(read_mask_png(&p).unwrap(), m);
    }

    #[test]
    fn tiff_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        for c in [1, 4, 10] {
            let r = Raster::from_fn(6, 5, c, |y, x, k| (y * 1000 + x * 10 + k) as u16);
            let p = dir.path().join(format!("t{c}.tif"));
            write_tiff_u16(&p, &r).unwrap();
            assert_eq!(read_tiff_u16(&p).unwrap(), r, "{c} bands");
        }
        let g = Raster::from_fn(3, 3, 1, |y, _, _| if y == 1 { 255u8 } else { 0 });
        let p = dir.path().join("gt.tif");
        write_tiff_u8(&p, &g).unwrap();
        assert_eq!(read_tiff_u8(&p).unwrap(), g);
    }

    #[test]
    fn probability_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Raster::from_fn(3, 4, 2, |y, x, c| (y * 4 + x) as f64 / 16.0 + c as f64 * 0.25);
        let p = dir.path().join("scene.f32");
        write_probability_map(&p, &m, "scene").unwrap();
        let (back, header) = read_probability_map(&p).unwrap();
        assert_eq!(header.classes, 2);
        assert_eq!(header.scene_id, "scene");
        for (a, b) in back.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn scene_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = synth_scene(2, 24, 20, 0.2, SolarGeometry::new(150.0, 40.0).unwrap()).unwrap();
        write_scene(&dir.path().join("s"), &s).unwrap();
        let back = read_scene(&dir.path().join("s")).unwrap();
        assert_eq!(back.raster, s.raster);
        assert_eq!(back.cloud_mask, s.cloud_mask);
        assert_eq!(back.shadow_mask, s.shadow_mask);
        assert_eq!(back.scene_id, s.scene_id);
        assert!((back.geometry.azimuth_deg - 150.0).abs() < 1e-9);
        assert!((back.geometry.zenith_deg - 40.0).abs() < 1e-9);
        assert_eq!(list_scene_dirs(dir.path()).unwrap().len(), 1);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_png_u16(&dir.path().join("nope.png")), Err(Error::Io(_))));
    }
}
