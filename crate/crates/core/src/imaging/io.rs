use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use super::{ImageBuffer, ImageError};

/// Decodes an 8-bit PNG. Alpha is dropped and grayscale is replicated to RGB.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => ImageError::NotFound(path.to_path_buf()),
        _ => ImageError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })?;
    let malformed = |detail: String| ImageError::Malformed {
        path: path.to_path_buf(),
        detail,
    };

    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| malformed(e.to_string()))?;
    let bits = reader.info().bit_depth;
    if bits == BitDepth::Sixteen {
        return Err(ImageError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits: 16,
        });
    }
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| malformed("image too large".into()))?];
    let frame = reader.next_frame(&mut buf).map_err(|e| malformed(e.to_string()))?;
    if frame.bit_depth != BitDepth::Eight {
        return Err(ImageError::UnsupportedBitDepth {
            path: path.to_path_buf(),
            bits: frame.bit_depth as u8,
        });
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    let data = &buf[..frame.buffer_size()];
    let stride = frame.line_size;
    let channels = match frame.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(malformed("palette was not expanded".into())),
    };
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in data.chunks(stride).take(h) {
        for px in row[..w * channels].chunks_exact(channels) {
            match channels {
                1 | 2 => pixels.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => pixels.extend_from_slice(&px[..3]),
            }
        }
    }
    let mut img = ImageBuffer::new(w, h, pixels).map_err(|e| malformed(e.to_string()))?;
    img.source_path = Some(path.to_path_buf());
    Ok(img)
}

/// Encodes as an 8-bit RGB PNG.
pub fn save_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let io_err = |source: std::io::Error| ImageError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    encoder.set_color(ColorType::Rgb);
    encoder.set_depth(BitDepth::Eight);
    let encode_err = |e: png::EncodingError| ImageError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(image.pixels()).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}
