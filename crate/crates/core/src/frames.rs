//! Frame folders: zero-padded, numbered PNG files (`00000.png`, `00001.png`, ...).
//!
//! Color values are stored as 8-bit and converted with `v / 255` on import and
//! `round(v * 255)` on export, so an imported clip round-trips bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage, Rgba, RgbaImage};
use ndarray::{Array2, Array3, Array4};

use crate::video::{MaskSequence, ReferenceImage, VideoClip};
use crate::{Error, Result};

pub fn frame_file_name(index: usize) -> String {
    format!("{index:05}.png")
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no PNG frames"),
        ));
    }
    Ok(files)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn save<P, C>(img: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_clip_folder(dir: impl AsRef<Path>) -> Result<VideoClip> {
    let files = list_pngs(dir.as_ref())?;
    let first = open(&files[0])?.to_rgb8();
    let (w, h) = (first.width() as usize, first.height() as usize);
    let mut data = Array4::<f32>::zeros((files.len(), 3, h, w));
    for (t, path) in files.iter().enumerate() {
        let img = if t == 0 { first.clone() } else { open(path)?.to_rgb8() };
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Shape(format!("{} has different dimensions", path.display())));
        }
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[t, c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
            }
        }
    }
    VideoClip::new(data)
}

pub fn save_clip_folder(dir: impl AsRef<Path>, clip: &VideoClip) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let (h, w) = (clip.height(), clip.width());
    for t in 0..clip.frames() {
        let f = clip.frame(t);
        let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (x, y) = (x as usize, y as usize);
            Rgb([quantize(f[[0, y, x]]), quantize(f[[1, y, x]]), quantize(f[[2, y, x]])])
        });
        save(&img, &dir.join(frame_file_name(t)))?;
    }
    Ok(())
}

/// Grayscale PNGs; pixels ≥ 128 are mask.
pub fn load_mask_folder(dir: impl AsRef<Path>) -> Result<MaskSequence> {
    let files = list_pngs(dir.as_ref())?;
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let img = open(path)?.to_luma8();
        frames.push(img);
    }
    let (w, h) = (frames[0].width() as usize, frames[0].height() as usize);
    let mut data = Array3::<u8>::zeros((frames.len(), h, w));
    for (t, img) in frames.iter().enumerate() {
        if (img.width() as usize, img.height() as usize) != (w, h) {
            return Err(Error::Shape(format!("{} has different dimensions", files[t].display())));
        }
        for (x, y, p) in img.enumerate_pixels() {
            data[[t, y as usize, x as usize]] = u8::from(p.0[0] >= 128);
        }
    }
    MaskSequence::new(data)
}

pub fn save_mask_folder(dir: impl AsRef<Path>, mask: &MaskSequence) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    for t in 0..mask.frames() {
        let f = mask.frame(t);
        let img = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
            Luma([f[[y as usize, x as usize]] * 255])
        });
        save(&img, &dir.join(frame_file_name(t)))?;
    }
    Ok(())
}

/// RGBA PNG; alpha ≥ 128 marks subject pixels. An image whose alpha is fully
/// opaque gets no matte.
pub fn load_reference_png(path: impl AsRef<Path>) -> Result<ReferenceImage> {
    let path = path.as_ref();
    let img = open(path)?.to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array3::<f32>::zeros((3, h, w));
    let mut alpha = Array2::<u8>::zeros((h, w));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0;
        }
        alpha[[y as usize, x as usize]] = u8::from(p.0[3] >= 128);
    }
    let alpha = if alpha.iter().all(|&a| a == 1) {
        None
    } else {
        Some(alpha)
    };
    ReferenceImage::new(data, alpha)
}

pub fn save_reference_png(path: impl AsRef<Path>, r: &ReferenceImage) -> Result<()> {
    let img = r.image();
    let alpha = r.weights();
    let out = RgbaImage::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgba([
            quantize(img[[0, y, x]]),
            quantize(img[[1, y, x]]),
            quantize(img[[2, y, x]]),
            if alpha[[y, x]] > 0.5 { 255 } else { 0 },
        ])
    });
    save(&out, path.as_ref())
}
