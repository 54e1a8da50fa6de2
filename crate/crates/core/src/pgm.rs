//! Binary PGM ("P5") codec.
//!
//! Scans are stored with maxval 65535 and big-endian samples, processed
//! images with maxval 255. The writer emits a canonical header
//! `P5\n<w> <h>\n<maxval>\n`; a scan with a known seam type carries it in
//! a `# seam_type <tag>` comment line after the magic.

use crate::error::{Error, Result};
use crate::scan::{Augmentation, Grid, ProcessedImage, RawScan, ResizeMode, ScanSource};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
    seam_type: Option<String>,
}

const SEAM_TYPE_COMMENT: &str = "# seam_type ";

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedPgm("missing P5 magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    let mut seam_type = None;
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments between tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    let start = pos;
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                    let line = String::from_utf8_lossy(&bytes[start..pos]);
                    if let Some(tag) = line.strip_prefix(SEAM_TYPE_COMMENT) {
                        seam_type.get_or_insert_with(|| tag.trim().to_string());
                    }
                }
                Some(_) => break,
                None => return Err(Error::MalformedPgm("header ended early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPgm(format!("expected integer for header field {i}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::MalformedPgm(format!("header value {text} out of range")))?;
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedPgm("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::MalformedPgm(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedPgm(format!("maxval {maxval} out of range")));
    }
    Ok(Header {
        width: width as usize,
        height: height as usize,
        maxval,
        data_offset: pos,
        seam_type: seam_type.filter(|t| !t.is_empty()),
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, bytes_per_sample: usize) -> Result<&'a [u8]> {
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(bytes_per_sample))
        .ok_or_else(|| Error::MalformedPgm("dimensions overflow".into()))?;
    let data = &bytes[header.data_offset..];
    if data.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: data.len(),
        });
    }
    if data.len() > expected {
        return Err(Error::MalformedPgm(format!(
            "{} trailing bytes after raster",
            data.len() - expected
        )));
    }
    Ok(data)
}

/// Decodes a 16-bit binary PGM into a scan with the given id.
pub fn read_scan_pgm(bytes: &[u8], id: &str) -> Result<RawScan> {
    let header = parse_header(bytes)?;
    if header.maxval != 65535 {
        return Err(Error::UnsupportedBitDepth(header.maxval));
    }
    let data = payload(bytes, &header, 2)?;
    let pixels = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    RawScan::new(
        id,
        header.width,
        header.height,
        pixels,
        header.seam_type.unwrap_or_else(|| "unknown".into()),
        ScanSource::Ingested,
    )
}

pub fn write_scan_pgm(scan: &RawScan) -> Vec<u8> {
    let tag = scan.seam_type().trim();
    let comment = if tag.is_empty() || tag == "unknown" || tag.contains(['\n', '\r']) {
        String::new()
    } else {
        format!("{SEAM_TYPE_COMMENT}{tag}\n")
    };
    let header = format!("P5\n{comment}{} {}\n65535\n", scan.width(), scan.height());
    let mut out = Vec::with_capacity(header.len() + scan.pixels().len() * 2);
    out.extend_from_slice(header.as_bytes());
    for &p in scan.pixels() {
        out.extend_from_slice(&p.to_be_bytes());
    }
    out
}

/// Decodes an 8-bit binary PGM of any size.
pub fn read_gray8_pgm(bytes: &[u8]) -> Result<Grid<u8>> {
    let header = parse_header(bytes)?;
    if header.maxval != 255 {
        return Err(Error::UnsupportedBitDepth(header.maxval));
    }
    let data = payload(bytes, &header, 1)?;
    Grid::new(header.width, header.height, data.to_vec())
}

pub fn write_gray8_pgm(grid: &Grid<u8>) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", grid.width, grid.height);
    let mut out = Vec::with_capacity(header.len() + grid.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&grid.data);
    out
}

pub fn write_image_pgm(img: &ProcessedImage) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + img.pixels().len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(img.pixels());
    out
}

/// Decodes a square 8-bit PGM written by [`write_image_pgm`]. Resize mode
/// and provenance are not part of the PGM and must be supplied.
pub fn read_image_pgm(
    bytes: &[u8],
    resize_mode: ResizeMode,
    source_scan_id: &str,
    augmentation: Augmentation,
) -> Result<ProcessedImage> {
    let grid = read_gray8_pgm(bytes)?;
    if grid.width != grid.height {
        return Err(Error::InvalidImage(format!(
            "processed image must be square, got {}x{}",
            grid.width, grid.height
        )));
    }
    ProcessedImage::with_side(grid.width, grid.data, resize_mode, source_scan_id, augmentation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::INPUT_SIDE;
    use proptest::prelude::*;

    #[test]
    fn decodes_small_scan() {
        let mut bytes = b"P5\n4 2\n65535\n".to_vec();
        let values: Vec<u16> = vec![0, 1, 256, 65535, 1000, 2000, 3000, 4000];
        for v in &values {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        let scan = read_scan_pgm(&bytes, "s").unwrap();
        assert_eq!((scan.width(), scan.height()), (4, 2));
        assert_eq!(scan.pixels(), &values[..]);
        assert_eq!(write_scan_pgm(&scan), bytes);
    }

    #[test]
    fn single_pixel_header() {
        let scan = RawScan::new("x", 1, 1, vec![65535], "t", ScanSource::Synthetic).unwrap();
        assert_eq!(write_scan_pgm(&scan), b"P5\n# seam_type t\n1 1\n65535\n\xFF\xFF".to_vec());
        assert_eq!(read_scan_pgm(&write_scan_pgm(&scan), "x").unwrap().seam_type(), "t");
        let plain = RawScan::new("x", 1, 1, vec![65535], "unknown", ScanSource::Ingested).unwrap();
        assert_eq!(write_scan_pgm(&plain), b"P5\n1 1\n65535\n\xFF\xFF".to_vec());
    }

    #[test]
    fn comments_are_skipped() {
        let mut bytes = b"P5\n# made by a sensor\n2 1 # trailing\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 5, 0, 9]);
        let scan = read_scan_pgm(&bytes, "c").unwrap();
        assert_eq!(scan.pixels(), &[5, 9]);
    }

    #[test]
    fn rejects_8bit_as_scan() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4]);
        let err = read_scan_pgm(&bytes, "x").unwrap_err();
        assert!(matches!(err, Error::UnsupportedBitDepth(255)));
        assert!(err.to_string().contains("unsupported bit depth"));
    }

    #[test]
    fn rejects_truncated_and_malformed() {
        let mut bytes = b"P5\n2 2\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 1, 0, 2, 0]);
        assert!(matches!(
            read_scan_pgm(&bytes, "x"),
            Err(Error::Truncated {
                expected: 8,
                actual: 5
            })
        ));
        assert!(matches!(read_scan_pgm(b"P2\n1 1\n65535\n", "x"), Err(Error::MalformedPgm(_))));
        assert!(matches!(read_scan_pgm(b"P5\n1\n", "x"), Err(Error::MalformedPgm(_))));
        assert!(matches!(read_scan_pgm(b"P5\nx 1 65535\n", "x"), Err(Error::MalformedPgm(_))));
    }

    #[test]
    fn rejects_all_zero_scan() {
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(read_scan_pgm(&bytes, "x"), Err(Error::AllZeroScan)));
    }

    #[test]
    fn processed_image_encoding() {
        let img = ProcessedImage::new(
            vec![0; INPUT_SIDE * INPUT_SIDE],
            ResizeMode::Shrink,
            "s",
            Augmentation::None,
        )
        .unwrap();
        let bytes = write_image_pgm(&img);
        let header = b"P5\n299 299\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len() - header.len(), 89401);
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
        let back = read_image_pgm(&bytes, ResizeMode::Shrink, "s", Augmentation::None).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn payload_differences_survive_encoding() {
        let a = RawScan::new("a", 3, 1, vec![1, 2, 3], "t", ScanSource::Synthetic).unwrap();
        let b = RawScan::new("a", 3, 1, vec![1, 2, 4], "t", ScanSource::Synthetic).unwrap();
        assert_ne!(write_scan_pgm(&a), write_scan_pgm(&b));
    }

    proptest! {
        #[test]
        fn scan_round_trip(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut state = seed | 1;
            let mut pixels: Vec<u16> = (0..w * h)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    state as u16
                })
                .collect();
            pixels[0] = pixels[0].max(1);
            let scan = RawScan::new("p", w, h, pixels, "unknown", ScanSource::Ingested).unwrap();
            let bytes = write_scan_pgm(&scan);
            let back = read_scan_pgm(&bytes, "p").unwrap();
            prop_assert_eq!(back.pixels(), scan.pixels());
            prop_assert_eq!(write_scan_pgm(&back), bytes);
        }

        #[test]
        fn gray8_round_trip(w in 1usize..32, h in 1usize..32, fill in any::<u8>()) {
            let data: Vec<u8> = (0..w * h).map(|i| (i as u8).wrapping_mul(31).wrapping_add(fill)).collect();
            let grid = Grid::new(w, h, data).unwrap();
            let back = read_gray8_pgm(&write_gray8_pgm(&grid)).unwrap();
            prop_assert_eq!(back, grid);
        }
    }
}
