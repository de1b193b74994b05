//! Label and instance map decoding.
//!
//! Two container formats are accepted and sniffed by their leading bytes:
//! single-channel PNG (grayscale or palette indices, 1 to 16 bits), and a
//! raw little-endian grid:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "SEGLBL01"
//! 8       4     width      (u32 LE)
//! 12      4     height     (u32 LE)
//! 16      4     bit depth  (u32 LE: 8, 16 or 32)
//! 20      ...   width*height values, row-major, little-endian
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{InstanceEncoding, InstanceMap, LabelMap};

pub const RAW_MAGIC: &[u8; 8] = b"SEGLBL01";
pub const RAW_HEADER_LEN: usize = 20;
pub const DEFAULT_PANOPTIC_DIVISOR: u32 = 1000;
const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawLabelHeader {
    pub width: u32,
    pub height: u32,
    pub bit_depth: u32,
}

/// A decoded single-channel grid of unsigned values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    pub width: u32,
    pub height: u32,
    pub values: Vec<u32>,
}

fn decode_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_raw(width: u32, height: u32, bit_depth: u32, values: &[u32]) -> Result<Vec<u8>> {
    if (width as usize) * (height as usize) != values.len() || width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: format!("grid holds {} values", values.len()),
        });
    }
    let bytes_per = match bit_depth {
        8 | 16 | 32 => bit_depth as usize / 8,
        other => return Err(Error::InvalidArgument(format!("unsupported bit depth {other}"))),
    };
    let max = if bit_depth == 32 {
        u32::MAX
    } else {
        (1u32 << bit_depth) - 1
    };
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + values.len() * bytes_per);
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&width.to_le_bytes());
    out.extend_from_slice(&height.to_le_bytes());
    out.extend_from_slice(&bit_depth.to_le_bytes());
    for &v in values {
        if v > max {
            return Err(Error::InvalidArgument(format!(
                "value {v} exceeds {bit_depth}-bit range"
            )));
        }
        out.extend_from_slice(&v.to_le_bytes()[..bytes_per]);
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> std::result::Result<(RawLabelHeader, Vec<u32>), String> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(format!("raw header truncated ({} bytes)", bytes.len()));
    }
    if &bytes[..8] != RAW_MAGIC {
        return Err("bad raw magic".into());
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let header = RawLabelHeader {
        width: word(8),
        height: word(12),
        bit_depth: word(16),
    };
    let bytes_per = match header.bit_depth {
        8 | 16 | 32 => header.bit_depth as usize / 8,
        other => return Err(format!("unsupported bit depth {other}")),
    };
    let payload = &bytes[RAW_HEADER_LEN..];
    let expected = header.width as usize * header.height as usize * bytes_per;
    if payload.len() != expected {
        return Err(format!(
            "payload holds {} bytes, header implies {expected}",
            payload.len()
        ));
    }
    let values = payload
        .chunks_exact(bytes_per)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..bytes_per].copy_from_slice(c);
            u32::from_le_bytes(w)
        })
        .collect();
    Ok((header, values))
}

pub fn write_raw(path: &Path, width: u32, height: u32, bit_depth: u32, values: &[u32]) -> Result<()> {
    let bytes = encode_raw(width, height, bit_depth, values)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an 8- or 16-bit grayscale PNG.
pub fn write_png_gray(path: &Path, width: u32, height: u32, bit_depth: u8, values: &[u32]) -> Result<()> {
    if (width as usize) * (height as usize) != values.len() {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: format!("grid holds {} values", values.len()),
        });
    }
    let (depth, data): (png::BitDepth, Vec<u8>) = match bit_depth {
        8 => {
            let data = values
                .iter()
                .map(|&v| u8::try_from(v).map_err(|_| Error::InvalidArgument(format!("value {v} exceeds 8 bits"))))
                .collect::<Result<_>>()?;
            (png::BitDepth::Eight, data)
        }
        16 => {
            let mut data = Vec::with_capacity(values.len() * 2);
            for &v in values {
                let v = u16::try_from(v).map_err(|_| Error::InvalidArgument(format!("value {v} exceeds 16 bits")))?;
                data.extend_from_slice(&v.to_be_bytes());
            }
            (png::BitDepth::Sixteen, data)
        }
        other => return Err(Error::InvalidArgument(format!("unsupported PNG bit depth {other}"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(|e| decode_err(path, e.to_string()))?;
    writer
        .write_image_data(&data)
        .map_err(|e| decode_err(path, e.to_string()))?;
    writer.finish().map_err(|e| decode_err(path, e.to_string()))
}

fn read_png(path: &Path) -> Result<Grid> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| decode_err(path, e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if !matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed) {
        return Err(Error::MultiChannel {
            path: path.to_path_buf(),
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| decode_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| decode_err(path, e.to_string()))?;
    let (width, height) = (info.width, info.height);
    let mut values = Vec::with_capacity(width as usize * height as usize);
    for row in buf[..info.buffer_size()].chunks_exact(info.line_size) {
        match depth {
            png::BitDepth::Sixteen => values.extend(
                row.chunks_exact(2)
                    .take(width as usize)
                    .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32),
            ),
            png::BitDepth::Eight => values.extend(row[..width as usize].iter().map(|&b| b as u32)),
            sub => {
                let bits = sub as usize;
                let mask = (1u32 << bits) - 1;
                values.extend((0..width as usize).map(|x| {
                    let bit = x * bits;
                    let shift = 8 - bits - bit % 8;
                    (row[bit / 8] as u32 >> shift) & mask
                }));
            }
        }
    }
    Ok(Grid { width, height, values })
}

/// Decodes a PNG or raw grid, sniffing the format from the file contents.
pub fn read_grid(path: &Path) -> Result<Grid> {
    let head = {
        use std::io::Read;
        let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut head = [0u8; 8];
        let n = f.read(&mut head).map_err(|e| Error::io(path, e))?;
        head[..n].to_vec()
    };
    if head == PNG_SIGNATURE {
        return read_png(path);
    }
    if head == RAW_MAGIC {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (h, values) = decode_raw(&bytes).map_err(|m| decode_err(path, m))?;
        if h.width == 0 || h.height == 0 {
            return Err(decode_err(path, "zero-sized grid"));
        }
        return Ok(Grid {
            width: h.width,
            height: h.height,
            values,
        });
    }
    Err(decode_err(path, "neither a PNG nor a SEGLBL01 raw label file"))
}

/// Loads and validates a label map.
pub fn load_label_map(path: &Path, num_classes: usize, ignore_id: Option<u32>) -> Result<LabelMap> {
    let g = read_grid(path)?;
    let map = LabelMap::new(g.width, g.height, g.values, ignore_id)?;
    map.validate(num_classes, "label")?;
    Ok(map)
}

/// Splits a panoptic id into `(class, index)`; ids below the divisor carry
/// a class but no instance.
pub fn decode_panoptic_id(id: u32, divisor: u32) -> Option<(u32, u32)> {
    (divisor > 0 && id >= divisor).then(|| (id / divisor, id % divisor))
}

/// Sidecar path for an instance grid: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn parse_sidecar(text: &str) -> std::result::Result<BTreeMap<u32, u32>, String> {
    let raw: BTreeMap<String, u32> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u32>()
                .map(|id| (id, v))
                .map_err(|_| format!("sidecar key '{k}' is not an instance id"))
        })
        .collect()
}

pub fn load_instance_map(path: &Path, encoding: InstanceEncoding) -> Result<InstanceMap> {
    let g = read_grid(path)?;
    match encoding {
        InstanceEncoding::Sidecar => {
            let side = sidecar_path(path);
            let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
            let classes = parse_sidecar(&text).map_err(|m| decode_err(&side, m))?;
            InstanceMap::new(g.width, g.height, g.values, classes)
        }
        InstanceEncoding::Panoptic { divisor } => {
            let mut classes = BTreeMap::new();
            let ids = g
                .values
                .into_iter()
                .map(|id| match decode_panoptic_id(id, divisor) {
                    Some((class, _)) => {
                        classes.insert(id, class);
                        id
                    }
                    None => 0,
                })
                .collect();
            InstanceMap::new(g.width, g.height, ids, classes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_label_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png_gray(&p, 2, 2, 8, &[0, 1, 1, 0]).unwrap();
        let m = load_label_map(&p, 2, Some(255)).unwrap();
        assert_eq!(m.labels(), &[0, 1, 1, 0]);
        assert_eq!((m.width(), m.height()), (2, 2));
    }

    #[test]
    fn raw_label_map() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.lbl");
        write_raw(&p, 2, 2, 8, &[0, 1, 2, 3]).unwrap();
        let m = load_label_map(&p, 4, Some(255)).unwrap();
        assert_eq!(m.get(0, 1), 2);
        assert_eq!(m.get(1, 1), 3);
    }

    #[test]
    fn out_of_range_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png_gray(&p, 3, 1, 8, &[0, 200, 255]).unwrap();
        match load_label_map(&p, 19, Some(255)).unwrap_err() {
            Error::LabelOutOfRange { label, x, y, .. } => assert_eq!((label, x, y), (200, 1, 0)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rgb_png_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[1, 2, 3]).unwrap();
        assert!(matches!(load_label_map(&p, 4, None), Err(Error::MultiChannel { .. })));
    }

    #[test]
    fn sub_byte_and_sixteen_bit_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b2.png");
        let file = File::create(&p).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), 3, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Two);
        // 2-bit values 1, 2, 3 packed MSB first
        enc.write_header().unwrap().write_image_data(&[0b0110_1100]).unwrap();
        assert_eq!(read_grid(&p).unwrap().values, vec![1, 2, 3]);

        let p = dir.path().join("w.png");
        write_png_gray(&p, 2, 1, 16, &[26001, 7]).unwrap();
        assert_eq!(read_grid(&p).unwrap().values, vec![26001, 7]);
    }

    #[test]
    fn raw_header_errors() {
        let mut bytes = encode_raw(2, 1, 16, &[1, 2]).unwrap();
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 4);
        assert!(decode_raw(&bytes[..RAW_HEADER_LEN + 3]).is_err());
        bytes[0] = b'X';
        assert!(decode_raw(&bytes).is_err());
        assert!(encode_raw(1, 1, 8, &[256]).is_err());
        assert!(encode_raw(1, 1, 12, &[1]).is_err());
    }

    #[test]
    fn panoptic_ids() {
        assert_eq!(decode_panoptic_id(26001, 1000), Some((26, 1)));
        assert_eq!(decode_panoptic_id(26000, 1000), Some((26, 0)));
        assert_eq!(decode_panoptic_id(23, 1000), None);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pan.lbl");
        write_raw(&p, 3, 1, 32, &[26001, 23, 0]).unwrap();
        let m = load_instance_map(&p, InstanceEncoding::Panoptic { divisor: 1000 }).unwrap();
        assert_eq!(m.instance_ids(), &[26001, 0, 0]);
        assert_eq!(m.class_of(26001), Some(26));
    }

    #[test]
    fn sidecar_instances() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("inst.png");
        write_png_gray(&p, 2, 2, 16, &[0, 0, 0, 0]).unwrap();
        std::fs::write(sidecar_path(&p), "{}").unwrap();
        let m = load_instance_map(&p, InstanceEncoding::Sidecar).unwrap();
        assert!(m.instances_present().is_empty());

        write_png_gray(&p, 2, 2, 16, &[7, 3, 0, 0]).unwrap();
        std::fs::write(sidecar_path(&p), r#"{"3": 1}"#).unwrap();
        let err = load_instance_map(&p, InstanceEncoding::Sidecar).unwrap_err();
        assert!(matches!(err, Error::UnknownInstance { id: 7 }));
        assert!(err.to_string().contains('7'));
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_label_map(Path::new("/nonexistent/x.png"), 2, None).unwrap_err();
        assert!(err.is_io());
    }
}
