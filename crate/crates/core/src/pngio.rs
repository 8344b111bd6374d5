//! PNG encoding for images, class masks, instance masks and overlays.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{AnnotationMask, Grid, InstanceMask, SampleImage};

/// Palette for class masks; index = class id.
const CLASS_PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [255, 0, 0],
    [0, 255, 0],
    [0, 0, 255],
    [255, 255, 0],
    [255, 0, 255],
    [0, 255, 255],
    [255, 255, 255],
];

fn encoder_error(path: &Path, e: png::EncodingError) -> Error {
    match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn decoder_error(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    palette: Option<Vec<u8>>,
    bytes: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    if let Some(p) = palette {
        enc.set_palette(p);
    }
    let mut writer = enc.write_header().map_err(|e| encoder_error(path, e))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| encoder_error(path, e))?;
    writer.finish().map_err(|e| encoder_error(path, e))
}

struct Decoded {
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: Vec<u8>,
}

fn read_png(path: &Path) -> Result<Decoded> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decoder_error(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decoder_error(path, e))?;
    buf.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        bytes: buf,
    })
}

/// Round-to-nearest 8-bit quantization of a normalized intensity.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_gray8(path: &Path, image: &SampleImage) -> Result<()> {
    let bytes: Vec<u8> = image.as_slice().iter().map(|&v| quantize(v)).collect();
    write_png(
        path,
        image.width(),
        image.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        &bytes,
    )
}

pub fn read_gray8(path: &Path) -> Result<SampleImage> {
    let d = read_png(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit grayscale PNG",
            path.display()
        )));
    }
    let data = d.bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Grid::from_vec(d.width, d.height, data).ok_or_else(|| Error::Format("bad PNG size".into()))
}

pub fn write_class_mask(path: &Path, mask: &AnnotationMask) -> Result<()> {
    if let Some(&bad) = mask
        .as_slice()
        .iter()
        .find(|&&c| c as usize >= CLASS_PALETTE.len())
    {
        return Err(Error::Format(format!("class id {bad} outside palette")));
    }
    let palette = CLASS_PALETTE.iter().flatten().copied().collect();
    write_png(
        path,
        mask.width(),
        mask.height(),
        png::ColorType::Indexed,
        png::BitDepth::Eight,
        Some(palette),
        mask.as_slice(),
    )
}

/// Reads a class mask; accepts paletted or plain 8-bit grayscale PNGs.
pub fn read_class_mask(path: &Path) -> Result<AnnotationMask> {
    let d = read_png(path)?;
    let ok = matches!(d.color, png::ColorType::Indexed | png::ColorType::Grayscale)
        && d.depth == png::BitDepth::Eight;
    if !ok {
        return Err(Error::Format(format!(
            "{}: expected 8-bit paletted PNG",
            path.display()
        )));
    }
    Grid::from_vec(d.width, d.height, d.bytes).ok_or_else(|| Error::Format("bad PNG size".into()))
}

pub fn write_instance_mask(path: &Path, mask: &InstanceMask) -> Result<()> {
    let bytes: Vec<u8> = mask
        .as_slice()
        .iter()
        .flat_map(|v| v.to_be_bytes())
        .collect();
    write_png(
        path,
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        None,
        &bytes,
    )
}

pub fn read_instance_mask(path: &Path) -> Result<InstanceMask> {
    let d = read_png(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "{}: expected 16-bit grayscale PNG",
            path.display()
        )));
    }
    let data = d
        .bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Grid::from_vec(d.width, d.height, data).ok_or_else(|| Error::Format("bad PNG size".into()))
}

/// Binary masks are stored as 8-bit grayscale, 255 = positive.
pub fn write_binary_mask(path: &Path, mask: &Grid<bool>) -> Result<()> {
    let bytes: Vec<u8> = mask
        .as_slice()
        .iter()
        .map(|&b| if b { 255 } else { 0 })
        .collect();
    write_png(
        path,
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Eight,
        None,
        &bytes,
    )
}

pub fn read_binary_mask(path: &Path) -> Result<Grid<bool>> {
    let d = read_png(path)?;
    if d.color != png::ColorType::Grayscale || d.depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit grayscale mask",
            path.display()
        )));
    }
    let data = d.bytes.iter().map(|&b| b >= 128).collect();
    Grid::from_vec(d.width, d.height, data).ok_or_else(|| Error::Format("bad PNG size".into()))
}

pub fn write_rgb8(path: &Path, image: &Grid<[u8; 3]>) -> Result<()> {
    let bytes: Vec<u8> = image.as_slice().iter().flatten().copied().collect();
    write_png(
        path,
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        None,
        &bytes,
    )
}
