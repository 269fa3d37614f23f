//! Binary PPM (P6) frames and PGM (P5) masks, 8 bits per sample.

use std::path::Path;

use super::container::{read_file, write_file};
use crate::error::{FormatError, Result};
use crate::image::Image;

/// `round(255 * clamp(v, 0, 1))`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

/// Single-channel PGM of an `h x w` plane.
pub fn encode_pgm(plane: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| quantize(v)));
    out
}

/// Header tokens: whitespace separated, `#` comments to end of line.
fn header_token(buf: &[u8], pos: &mut usize) -> Result<String, FormatError> {
    loop {
        match buf.get(*pos) {
            Some(b'#') => {
                while buf.get(*pos).is_some_and(|&c| c != b'\n') {
                    *pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => {
                return Err(FormatError::Malformed {
                    what: "PPM header",
                    detail: "unexpected end of file".into(),
                })
            }
        }
    }
    let start = *pos;
    while buf.get(*pos).is_some_and(|c| !c.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
}

fn header_number(buf: &[u8], pos: &mut usize, what: &str) -> Result<usize, FormatError> {
    let tok = header_token(buf, pos)?;
    tok.parse().map_err(|_| FormatError::Malformed {
        what: "PPM header",
        detail: format!("{what} {tok:?}"),
    })
}

pub fn decode_ppm(buf: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = header_token(buf, &mut pos)?;
    if magic != "P6" {
        return Err(FormatError::UnsupportedImage(format!("magic {magic:?}, only binary P6 is read")).into());
    }
    let width = header_number(buf, &mut pos, "width")?;
    let height = header_number(buf, &mut pos, "height")?;
    let maxval = header_number(buf, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(FormatError::UnsupportedImage(format!("maxval {maxval}, only 255 is read")).into());
    }
    if width == 0 || height == 0 {
        return Err(FormatError::Malformed {
            what: "PPM header",
            detail: format!("{width}x{height} image"),
        }
        .into());
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let expected = width * height * 3;
    let actual = buf.len().saturating_sub(pos);
    if actual != expected {
        return Err(FormatError::Truncated { expected, actual }.into());
    }
    let data = buf[pos..].iter().map(|&b| b as f64 / 255.0).collect();
    Image::from_vec(height, width, data)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&read_file(path.as_ref())?)
}

pub fn write_pgm(path: impl AsRef<Path>, plane: &[f64], height: usize, width: usize) -> Result<()> {
    write_file(path.as_ref(), &encode_pgm(plane, height, width))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn black_frame_bytes() {
        let b = encode_ppm(&Image::new(1, 2, 0.0));
        assert_eq!(b, b"P6\n2 1\n255\n\0\0\0\0\0\0");
    }

    #[test]
    fn quantization_fixed_point() {
        let img = Image::from_fn(3, 4, |y, x, c| (y * 13 + x * 7 + c) as f64 / 37.0);
        let once = decode_ppm(&encode_ppm(&img)).unwrap();
        let twice = decode_ppm(&encode_ppm(&once)).unwrap();
        assert_eq!(once, twice);
        assert_eq!(encode_ppm(&once), encode_ppm(&twice));
    }

    #[test]
    fn header_comments_are_skipped() {
        let b = b"P6 # made by hand\n1 1\n# max\n255\n\xff\x00\x80";
        let img = decode_ppm(b).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn rejects_other_variants_and_short_data() {
        let code = |r: Result<Image>| match r {
            Err(Error::Format(f)) => f.code(),
            other => panic!("{other:?}"),
        };
        assert_eq!(code(decode_ppm(b"P3\n1 1\n255\n0 0 0\n")), 15);
        assert_eq!(code(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0")), 15);
        match decode_ppm(b"P6\n2 1\n255\n\0\0\0\0") {
            Err(Error::Format(FormatError::Truncated { expected: 6, actual: 4 })) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pgm_layout() {
        assert_eq!(encode_pgm(&[0.0, 1.0], 1, 2), b"P5\n2 1\n255\n\x00\xff");
    }
}
