//! Image files and case directories.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::losses::CaseInput;
use crate::raster::Raster;
use crate::scene::CameraPose;

pub const IMAGE_FILE: &str = "image.png";
pub const MASK_FILE: &str = "mask.png";
pub const DEPTH_FILE: &str = "depth.f32";
pub const PROMPT_FILE: &str = "prompt.txt";
pub const CATEGORY_FILE: &str = "category.txt";

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an RGB or single-channel raster in `[0, 1]` as an 8-bit PNG.
pub fn write_png(path: &Path, raster: &Raster) -> Result<()> {
    let [h, w, c] = raster.shape();
    let bytes: Vec<u8> = raster.data().iter().map(|v| to_u8(*v)).collect();
    let saved = match c {
        3 => RgbImage::from_raw(w as u32, h as u32, bytes).map(|img| img.save(path)),
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w as u32, h as u32, bytes).map(|img| img.save(path)),
        _ => return Err(Error::invalid(format!("cannot write a {c}-channel raster as PNG"))),
    };
    saved
        .expect("buffer length matches raster shape")
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::invalid(format!("missing {}", path.display())));
    }
    image::open(path).map_err(|e| Error::invalid(format!("cannot decode {}: {e}", path.display())))
}

/// Reads an 8-bit PNG as RGB plus its alpha channel when it has one.
pub fn read_png_rgb(path: &Path) -> Result<(Raster, Option<Raster>)> {
    let img = open_image(path)?;
    let has_alpha = img.color().has_alpha();
    let rgba = img.to_rgba8();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let rgb = Raster::from_fn(h, w, 3, |y, x, c| rgba.get_pixel(x as u32, y as u32)[c] as f64 / 255.0);
    let alpha = has_alpha.then(|| Raster::from_fn(h, w, 1, |y, x, _| rgba.get_pixel(x as u32, y as u32)[3] as f64 / 255.0));
    Ok((rgb, alpha))
}

pub fn read_png_gray(path: &Path) -> Result<Raster> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Raster::from_fn(h, w, 1, |y, x, _| img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0))
}

/// Raw little-endian `f32`, row-major `height × width`.
pub fn read_depth(path: &Path, height: usize, width: usize) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 4 * height * width {
        return Err(Error::invalid(format!(
            "{}: expected {} bytes for {height}x{width} floats, found {}",
            path.display(),
            4 * height * width,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Raster::from_vec(height, width, 1, data)
}

pub fn write_depth(path: &Path, depth: &Raster) -> Result<()> {
    let bytes: Vec<u8> = depth.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn resize(raster: &Raster, size: usize, filter: FilterType) -> Raster {
    let [h, w, c] = raster.shape();
    if h == size && w == size {
        return raster.clone();
    }
    let channels: Vec<_> = (0..c)
        .map(|ch| {
            let plane = ImageBuffer::<Luma<f32>, _>::from_fn(w as u32, h as u32, |x, y| {
                Luma([raster.get(y as usize, x as usize, ch) as f32])
            });
            imageops::resize(&plane, size as u32, size as u32, filter)
        })
        .collect();
    Raster::from_fn(size, size, c, |y, x, ch| channels[ch].get_pixel(x as u32, y as u32)[0] as f64)
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::invalid(format!("missing {}", path.display())));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a case directory, composites the image over white using the mask
/// (or the image's own alpha) and resamples everything to `resolution`.
pub fn load_case_dir(dir: &Path, reference_pose: CameraPose, resolution: usize) -> Result<CaseInput> {
    let (rgb, alpha) = read_png_rgb(&dir.join(IMAGE_FILE))?;
    let [h, w, _] = rgb.shape();
    if h != w {
        return Err(Error::invalid(format!("{}: image must be square, got {h}x{w}", dir.join(IMAGE_FILE).display())));
    }
    let mask_path = dir.join(MASK_FILE);
    let coverage = if mask_path.is_file() {
        let m = read_png_gray(&mask_path)?;
        if m.shape() != [h, w, 1] {
            return Err(Error::invalid(format!("{}: mask size differs from image", mask_path.display())));
        }
        m
    } else {
        alpha.ok_or_else(|| Error::invalid(format!("missing {} and the image has no alpha", mask_path.display())))?
    };
    let depth_path = dir.join(DEPTH_FILE);
    let depth = if depth_path.is_file() {
        read_depth(&depth_path, h, w)?
    } else {
        Raster::zeros(h, w, 1)
    };
    let prompt = read_text(&dir.join(PROMPT_FILE))?.lines().next().unwrap_or("").trim().to_owned();
    if prompt.is_empty() {
        return Err(Error::invalid(format!("{} is empty", dir.join(PROMPT_FILE).display())));
    }
    let category_path = dir.join(CATEGORY_FILE);
    let category = if category_path.is_file() {
        Some(read_text(&category_path)?.trim().to_owned()).filter(|c| !c.is_empty())
    } else {
        None
    };

    let image = Raster::from_fn(h, w, 3, |y, x, c| {
        let a = coverage.get(y, x, 0);
        a * rgb.get(y, x, c) + (1.0 - a)
    });
    let image = resize(&image, resolution, FilterType::Triangle).map(|v| v.clamp(0.0, 1.0));
    let mask = resize(&coverage, resolution, FilterType::Nearest).map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let depth = resize(&depth, resolution, FilterType::Nearest);
    let case = CaseInput {
        image,
        mask,
        depth,
        prompt,
        reference_pose,
        category,
    };
    case.validate()?;
    Ok(case)
}

/// Writes `case` as a case directory (image, mask, depth, prompt, category).
pub fn write_case_dir(dir: &Path, case: &CaseInput) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png(&dir.join(IMAGE_FILE), &case.image)?;
    write_png(&dir.join(MASK_FILE), &case.mask)?;
    write_depth(&dir.join(DEPTH_FILE), &case.depth)?;
    let p = dir.join(PROMPT_FILE);
    fs::write(&p, format!("{}\n", case.prompt)).map_err(|e| Error::io(&p, e))?;
    if let Some(cat) = &case.category {
        let p = dir.join(CATEGORY_FILE);
        fs::write(&p, format!("{cat}\n")).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
