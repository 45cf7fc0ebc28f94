//! Files: PNG images, camera lists, and the MPI directory format.
//!
//! An MPI directory holds `mpi.json` plus one straight-alpha RGBA PNG per
//! plane, `plane_000.png` first (back). Pixel `(i, j)` of a PNG is the sample
//! at integer coordinates `(i, j)` used by every warp.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, View};
use crate::image::Image;
use crate::mpi::{premultiply, unpremultiply, Mpi, MpiPlane};

pub const MPI_MANIFEST: &str = "mpi.json";
pub const MPI_FORMAT: &str = "mpi-lgd-mpi";
pub const MPI_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            b => Err(Error::InvalidParameter(format!("bit depth must be 8 or 16, got {b}"))),
        }
    }
}

/// Reads a PNG as RGB, or RGBA when `keep_alpha` and the file has alpha.
/// Values are scaled to `[0, 1]`; alpha stays straight.
pub fn read_png(path: &Path, keep_alpha: bool) -> Result<Image> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    );
    let alpha = keep_alpha && img.color().has_alpha();
    let channels = if alpha { 4 } else { 3 };
    let data: Vec<f64> = if sixteen {
        let scale = 1.0 / 65535.0;
        if alpha {
            img.to_rgba16().into_raw().into_iter().map(|v| v as f64 * scale).collect()
        } else {
            img.to_rgb16().into_raw().into_iter().map(|v| v as f64 * scale).collect()
        }
    } else {
        let scale = 1.0 / 255.0;
        if alpha {
            img.to_rgba8().into_raw().into_iter().map(|v| v as f64 * scale).collect()
        } else {
            img.to_rgb8().into_raw().into_iter().map(|v| v as f64 * scale).collect()
        }
    };
    Image::from_vec(w, h, channels, data)
}

fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Writes a 1-, 2-, 3- or 4-channel image, clamping to `[0, 1]`.
pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bad = || Error::ShapeMismatch("image buffer size".into());
    let d = img.data();
    let dynamic = match (img.channels(), depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, d.iter().map(|&v| quantize8(v)).collect()).ok_or_else(bad)?,
        ),
        (2, BitDepth::Eight) => DynamicImage::ImageLumaA8(
            ImageBuffer::<LumaA<u8>, _>::from_raw(w, h, d.iter().map(|&v| quantize8(v)).collect()).ok_or_else(bad)?,
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, d.iter().map(|&v| quantize8(v)).collect()).ok_or_else(bad)?,
        ),
        (4, BitDepth::Eight) => DynamicImage::ImageRgba8(
            ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, d.iter().map(|&v| quantize8(v)).collect()).ok_or_else(bad)?,
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, d.iter().map(|&v| quantize16(v)).collect()).ok_or_else(bad)?,
        ),
        (2, BitDepth::Sixteen) => DynamicImage::ImageLumaA16(
            ImageBuffer::<LumaA<u16>, _>::from_raw(w, h, d.iter().map(|&v| quantize16(v)).collect()).ok_or_else(bad)?,
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, d.iter().map(|&v| quantize16(v)).collect()).ok_or_else(bad)?,
        ),
        (4, BitDepth::Sixteen) => DynamicImage::ImageRgba16(
            ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, d.iter().map(|&v| quantize16(v)).collect()).ok_or_else(bad)?,
        ),
        (c, _) => return Err(Error::ShapeMismatch(format!("cannot write {c}-channel PNG"))),
    };
    dynamic.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn load_camera(path: &Path) -> Result<Camera> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_camera(path: &Path, camera: &Camera) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(camera)?)?;
    Ok(())
}

/// A JSON array of camera records.
pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn save_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(cameras)?)?;
    Ok(())
}

/// PNG files of `dir`, sorted by file name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs the sorted PNGs of `dir` with the cameras of `cameras_json`, in
/// order.
pub fn load_views(dir: &Path, cameras_json: &Path) -> Result<Vec<View>> {
    let cameras = load_cameras(cameras_json)?;
    let files = list_pngs(dir)?;
    if files.len() != cameras.len() {
        return Err(Error::InvalidParameter(format!(
            "{} images in {} but {} cameras",
            files.len(),
            dir.display(),
            cameras.len()
        )));
    }
    if files.is_empty() {
        return Err(Error::NoViews);
    }
    files
        .iter()
        .zip(cameras)
        .map(|(f, c)| View::new(c, read_png(f, false)?))
        .collect()
}

pub fn save_views(dir: &Path, views: &[View], cameras_json: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, v) in views.iter().enumerate() {
        write_png(&dir.join(format!("view_{i:03}.png")), &v.image, BitDepth::Eight)?;
    }
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    save_cameras(cameras_json, &cams)
}

/// Contents of `mpi.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpiManifest {
    pub format: String,
    pub version: u32,
    pub reference: Camera,
    /// Back to front, increasing.
    pub disparities: Vec<f64>,
    pub planes: usize,
    pub width: usize,
    pub height: usize,
    pub bit_depth: BitDepth,
    pub files: Vec<String>,
}

pub fn plane_file_name(d: usize) -> String {
    format!("plane_{d:03}.png")
}

pub fn save_mpi(dir: &Path, mpi: &Mpi, depth: BitDepth) -> Result<()> {
    fs::create_dir_all(dir)?;
    let files: Vec<String> = (0..mpi.len()).map(plane_file_name).collect();
    for (p, f) in mpi.planes().iter().zip(&files) {
        write_png(&dir.join(f), &unpremultiply(&p.rgba), depth)?;
    }
    let manifest = MpiManifest {
        format: MPI_FORMAT.into(),
        version: MPI_VERSION,
        reference: mpi.reference().clone(),
        disparities: mpi.planes().iter().map(|p| p.disparity).collect(),
        planes: mpi.len(),
        width: mpi.width(),
        height: mpi.height(),
        bit_depth: depth,
        files,
    };
    fs::write(dir.join(MPI_MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<MpiManifest> {
    let m: MpiManifest = serde_json::from_str(&fs::read_to_string(dir.join(MPI_MANIFEST))?)?;
    if m.format != MPI_FORMAT || m.version != MPI_VERSION {
        return Err(Error::Format(format!("{} version {}", m.format, m.version)));
    }
    if m.disparities.len() != m.planes || m.files.len() != m.planes {
        return Err(Error::PlaneCountMismatch {
            expected: m.planes,
            found: m.disparities.len().min(m.files.len()),
        });
    }
    if m.width != m.reference.width() || m.height != m.reference.height() {
        return Err(Error::ShapeMismatch("plane size differs from the reference camera".into()));
    }
    Ok(m)
}

pub fn load_mpi(dir: &Path) -> Result<Mpi> {
    let m = load_manifest(dir)?;
    let planes = m
        .files
        .iter()
        .zip(&m.disparities)
        .map(|(f, &disparity)| {
            let straight = read_png(&dir.join(f), true)?;
            if straight.channels() != 4 {
                return Err(Error::Format(format!("{f} has no alpha channel")));
            }
            Ok(MpiPlane {
                disparity,
                rgba: premultiply(&straight),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Mpi::new(m.reference, planes)
}

/// Copies a validated MPI directory into a viewer bundle. The bundle uses the
/// same files byte for byte.
pub fn export_viewer(mpi_dir: &Path, out: &Path) -> Result<()> {
    load_mpi(mpi_dir)?;
    let m = load_manifest(mpi_dir)?;
    fs::create_dir_all(out)?;
    fs::copy(mpi_dir.join(MPI_MANIFEST), out.join(MPI_MANIFEST))?;
    for f in &m.files {
        fs::copy(mpi_dir.join(f), out.join(f))?;
    }
    Ok(())
}
