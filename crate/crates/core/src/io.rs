//! Netpbm and CSV readers/writers for images, label maps, masks and ECS vectors.
//!
//! Images are binary PPM (`P6`, 8-bit); label maps are binary PGM (`P5`, gray value =
//! class index) or CSV with one row of integers per image row.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ClassId, ImageGrid, LabelMap, MixMask};

struct Netpbm {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    pixels: Vec<u8>,
}

fn parse_netpbm(bytes: &[u8]) -> Result<Netpbm> {
    if bytes.len() < 2 {
        return Err(Error::Data("truncated netpbm header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Data("malformed netpbm header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data("malformed netpbm header number".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Data("missing whitespace after netpbm header".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("unsupported maxval {maxval}; only 8-bit netpbm is supported")));
    }
    Ok(Netpbm { magic, width, height, maxval, pixels: bytes[pos..].to_vec() })
}

/// Decodes a binary PPM into a 3-channel image scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageGrid> {
    let pbm = parse_netpbm(bytes)?;
    if &pbm.magic != b"P6" {
        return Err(Error::Data("not a binary PPM (P6) file".into()));
    }
    let plane = pbm.width * pbm.height;
    if pbm.pixels.len() < 3 * plane {
        return Err(Error::Data(format!("PPM raster has {} bytes, expected {}", pbm.pixels.len(), 3 * plane)));
    }
    let mut img = ImageGrid::zeros(3, pbm.height, pbm.width);
    let scale = pbm.maxval as f64;
    for px in 0..plane {
        for ch in 0..3 {
            img.set(ch, px, f64::from(pbm.pixels[3 * px + ch]) / scale);
        }
    }
    Ok(img)
}

/// Encodes a 3-channel image as binary PPM, clamping to `[0, 1]` and rounding to 8 bits.
pub fn encode_ppm(img: &ImageGrid) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("PPM needs 3 channels, image has {}", img.channels())));
    }
    let plane = img.height() * img.width();
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.reserve(3 * plane);
    for px in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(img.get(ch, px)));
        }
    }
    Ok(out)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes a binary PGM label map. When `num_classes` is `None` it is inferred as
/// `max label + 1`.
pub fn decode_label_pgm(bytes: &[u8], num_classes: Option<usize>) -> Result<LabelMap> {
    let pbm = parse_netpbm(bytes)?;
    if &pbm.magic != b"P5" {
        return Err(Error::Data("not a binary PGM (P5) file".into()));
    }
    let plane = pbm.width * pbm.height;
    if pbm.pixels.len() < plane {
        return Err(Error::Data(format!("PGM raster has {} bytes, expected {plane}", pbm.pixels.len())));
    }
    let data: Vec<ClassId> = pbm.pixels[..plane].iter().map(|&v| ClassId::from(v)).collect();
    let c = num_classes.unwrap_or_else(|| data.iter().max().map_or(1, |&m| usize::from(m) + 1));
    LabelMap::new(pbm.height, pbm.width, c, data)
}

pub fn encode_label_pgm(labels: &LabelMap) -> Result<Vec<u8>> {
    if labels.num_classes() > 256 {
        return Err(Error::Data(format!("{} classes do not fit an 8-bit PGM", labels.num_classes())));
    }
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend(labels.data().iter().map(|&c| c as u8));
    Ok(out)
}

/// Masks are written as PGM with 0 / 255 so they are viewable.
pub fn encode_mask_pgm(mask: &MixMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.data().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn decode_mask_pgm(bytes: &[u8]) -> Result<MixMask> {
    let pbm = parse_netpbm(bytes)?;
    if &pbm.magic != b"P5" {
        return Err(Error::Data("not a binary PGM (P5) file".into()));
    }
    let plane = pbm.width * pbm.height;
    if pbm.pixels.len() < plane {
        return Err(Error::Data("truncated PGM raster".into()));
    }
    MixMask::new(pbm.height, pbm.width, pbm.pixels[..plane].iter().map(|&v| v != 0).collect())
}

/// Label map as CSV: one line per row, comma-separated class indices.
pub fn decode_label_csv(text: &str, num_classes: Option<usize>) -> Result<LabelMap> {
    let mut rows: Vec<Vec<ClassId>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<ClassId>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Data(format!("label CSV line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Data("label CSV rows have different lengths".into()));
    }
    let data: Vec<ClassId> = rows.concat();
    let c = num_classes.unwrap_or_else(|| data.iter().max().map_or(1, |&m| usize::from(m) + 1));
    LabelMap::new(height, width, c, data)
}

pub fn encode_label_csv(labels: &LabelMap) -> String {
    let mut out = String::with_capacity(labels.len() * 3);
    for row in labels.data().chunks(labels.width().max(1)) {
        let line: Vec<String> = row.iter().map(ToString::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses an ECS vector from CSV with a `class,ecs` header and one row per class.
/// Classes must be listed exactly once each, in any order, covering `0..C`.
pub fn decode_ecs_csv(text: &str) -> Result<Vec<f64>> {
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with(|c: char| c.is_ascii_alphabetic())) {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(c), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Data(format!("ECS CSV line {}: expected `class,ecs`", lineno + 1)));
        };
        let c: usize = c.parse().map_err(|e| Error::Data(format!("ECS CSV line {}: {e}", lineno + 1)))?;
        let v: f64 = v.parse().map_err(|e| Error::Data(format!("ECS CSV line {}: {e}", lineno + 1)))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Data(format!("ECS value {v} for class {c} outside [0, 1]")));
        }
        entries.push((c, v));
    }
    let n = entries.len();
    let mut ecs = vec![f64::NAN; n];
    for (c, v) in entries {
        match ecs.get_mut(c) {
            Some(slot) if slot.is_nan() => *slot = v,
            _ => return Err(Error::Data(format!("ECS CSV: class {c} duplicated or out of range 0..{n}"))),
        }
    }
    if n == 0 {
        return Err(Error::Data("ECS CSV is empty".into()));
    }
    Ok(ecs)
}

pub fn encode_ecs_csv(ecs: &[f64]) -> String {
    let mut out = String::from("class,ecs\n");
    for (c, v) in ecs.iter().enumerate() {
        out.push_str(&format!("{c},{v}\n"));
    }
    out
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_ppm(path: impl AsRef<Path>, img: &ImageGrid) -> Result<()> {
    write_bytes(path, &encode_ppm(img)?)
}

/// Reads a label map from `.csv` or PGM (anything else) by extension.
pub fn read_labels(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<LabelMap> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        decode_label_csv(&fs::read_to_string(path)?, num_classes)
    } else {
        decode_label_pgm(&fs::read(path)?, num_classes)
    }
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        write_bytes(path, encode_label_csv(labels).as_bytes())
    } else {
        write_bytes(path, &encode_label_pgm(labels)?)
    }
}

pub(crate) fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.shape(), (1, 2));
        assert_eq!(img.get(0, 0), 1.0);
        assert_eq!(img.get(2, 1), 1.0);
        assert_eq!(img.get(1, 0), 0.0);
    }

    #[test]
    fn rejects_truncated_and_wrong_magic() {
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P5\n1 1\n255\n\x00").is_err());
        assert!(decode_label_pgm(b"P5\n1 1\n65535\n\x00\x00", None).is_err());
        assert!(decode_label_pgm(b"P6\n1 1\n255\n\x00\x00\x00", None).is_err());
    }

    #[test]
    fn label_csv_parsing() {
        let labels = decode_label_csv("0,1,2\n2,1,0\n", None).unwrap();
        assert_eq!(labels.shape(), (2, 3));
        assert_eq!(labels.num_classes(), 3);
        assert_eq!(labels.get(1, 0), 2);
        assert!(decode_label_csv("0,1\n1\n", None).is_err());
        assert!(decode_label_csv("0,x\n", None).is_err());
        assert!(decode_label_csv("0,4\n", Some(3)).is_err());
    }

    #[test]
    fn ecs_csv_parsing() {
        let ecs = decode_ecs_csv("class,ecs\n1,0.2\n0,0.9\n").unwrap();
        assert_eq!(ecs, vec![0.9, 0.2]);
        assert!(decode_ecs_csv("class,ecs\n0,0.9\n0,0.2\n").is_err());
        assert!(decode_ecs_csv("class,ecs\n0,1.5\n").is_err());
        assert!(decode_ecs_csv("class,ecs\n").is_err());
    }

    #[test]
    fn mask_pgm_uses_full_scale() {
        let m = MixMask::from_rows(&[&[1, 0]]).unwrap();
        let bytes = encode_mask_pgm(&m);
        assert!(bytes.ends_with(&[255, 0]));
        assert_eq!(decode_mask_pgm(&bytes).unwrap(), m);
    }

    proptest! {
        #[test]
        fn label_maps_survive_pgm_and_csv(h in 1usize..8, w in 1usize..8, seed in prop::collection::vec(0u16..12, 64)) {
            let data: Vec<u16> = (0..h * w).map(|i| seed[i % seed.len()]).collect();
            let labels = LabelMap::new(h, w, 12, data).unwrap();
            prop_assert_eq!(decode_label_pgm(&encode_label_pgm(&labels).unwrap(), Some(12)).unwrap(), labels.clone());
            prop_assert_eq!(decode_label_csv(&encode_label_csv(&labels), Some(12)).unwrap(), labels);
        }

        #[test]
        fn ppm_is_exact_on_8bit_values(h in 1usize..6, w in 1usize..6, raw in prop::collection::vec(any::<u8>(), 108)) {
            let data: Vec<f64> = (0..3 * h * w).map(|i| f64::from(raw[i % raw.len()]) / 255.0).collect();
            let img = ImageGrid::new(3, h, w, data).unwrap();
            prop_assert_eq!(decode_ppm(&encode_ppm(&img).unwrap()).unwrap(), img);
        }
    }
}
