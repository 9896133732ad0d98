//! The on-disk raster container.
//!
//! A file is one line of JSON followed by a raw payload:
//!
//! ```text
//! {"height":64,"width":64,"bands":242,"dtype":"f32le","scale_factor":10000.0,"layout":"bsq"}\n
//! <height*width*bands little-endian values, band-sequential>
//! ```
//!
//! Cubes use `dtype = "f32le"`; label rasters (segmentations, edge maps)
//! use `dtype = "u32le"` with one band. On load, float payloads are divided
//! by `scale_factor` (1 when absent).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, SegmentationMap};
use crate::error::{Error, Result};

pub const DTYPE_F32: &str = "f32le";
pub const DTYPE_U32: &str = "u32le";
pub const LAYOUT_BSQ: &str = "bsq";

/// Scale factor conventionally declared by digital-number rasters.
pub const DN_SCALE_FACTOR: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_factor: Option<f64>,
    #[serde(default = "default_layout")]
    pub layout: String,
}

fn default_layout() -> String {
    LAYOUT_BSQ.to_string()
}

impl RasterHeader {
    fn values(&self) -> usize {
        self.height * self.width * self.bands
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 {
            return Err(Error::Header(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.height, self.width, self.bands
            )));
        }
        if self.layout != LAYOUT_BSQ {
            return Err(Error::Header(format!(
                "unsupported layout {:?}",
                self.layout
            )));
        }
        if let Some(s) = self.scale_factor {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Header(format!(
                    "scale_factor must be positive, got {s}"
                )));
            }
        }
        Ok(())
    }
}

fn split_header(bytes: &[u8]) -> Result<(RasterHeader, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("missing header line".into()))?;
    let header: RasterHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Header(e.to_string()))?;
    header.validate()?;
    Ok((header, &bytes[nl + 1..]))
}

fn check_payload(header: &RasterHeader, payload: &[u8]) -> Result<()> {
    let expected = header.values();
    if !payload.len().is_multiple_of(4) || payload.len() / 4 != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len() / 4,
        });
    }
    Ok(())
}

/// Parses a float raster from an in-memory buffer.
pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    let (header, payload) = split_header(bytes)?;
    if header.dtype != DTYPE_F32 {
        return Err(Error::Header(format!(
            "expected dtype {DTYPE_F32}, found {:?}",
            header.dtype
        )));
    }
    check_payload(&header, payload)?;
    let scale = header.scale_factor.unwrap_or(1.0);
    let mut data = Vec::with_capacity(header.values());
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: "raster payload".into(),
                index,
            });
        }
        data.push(if scale == 1.0 {
            v as f64
        } else {
            v as f64 / scale
        });
    }
    HsiCube::new(header.height, header.width, header.bands, data)
}

/// Serializes a cube as `f32le` with `scale_factor = 1`.
pub fn encode_cube(cube: &HsiCube) -> Result<Vec<u8>> {
    cube.check_finite("cube to save")?;
    let header = RasterHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.channels(),
        dtype: DTYPE_F32.into(),
        scale_factor: Some(1.0),
        layout: LAYOUT_BSQ.into(),
    };
    let mut out = header_bytes(&header);
    out.reserve(cube.len() * 4);
    for &v in cube.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

fn header_bytes(header: &RasterHeader) -> Vec<u8> {
    let mut out = serde_json::to_vec(header).expect("header serializes");
    out.push(b'\n');
    out
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes)
}

/// Writes a cube. Values are stored as 32-bit floats, so a save/load
/// roundtrip is bit-exact for any cube whose values are `f32`-representable.
pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_cube(cube)?;
    write_file(path.as_ref(), &bytes)
}

/// Writes raw digital numbers with a declared scale factor; loading divides
/// the values back down.
pub fn save_cube_scaled(cube: &HsiCube, scale_factor: f64, path: impl AsRef<Path>) -> Result<()> {
    cube.check_finite("cube to save")?;
    let header = RasterHeader {
        height: cube.height(),
        width: cube.width(),
        bands: cube.channels(),
        dtype: DTYPE_F32.into(),
        scale_factor: Some(scale_factor),
        layout: LAYOUT_BSQ.into(),
    };
    header.validate()?;
    let mut out = header_bytes(&header);
    for &v in cube.data() {
        out.extend_from_slice(&((v * scale_factor) as f32).to_le_bytes());
    }
    write_file(path.as_ref(), &out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<SegmentationMap> {
    let (header, payload) = split_header(bytes)?;
    if header.dtype != DTYPE_U32 || header.bands != 1 {
        return Err(Error::Header(format!(
            "label rasters need dtype {DTYPE_U32} and 1 band, found {:?} with {} bands",
            header.dtype, header.bands
        )));
    }
    check_payload(&header, payload)?;
    let labels = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SegmentationMap::new(header.height, header.width, labels)
}

pub fn encode_labels(height: usize, width: usize, labels: &[u32]) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::PayloadLength {
            expected: height * width,
            found: labels.len(),
        });
    }
    let header = RasterHeader {
        height,
        width,
        bands: 1,
        dtype: DTYPE_U32.into(),
        scale_factor: None,
        layout: LAYOUT_BSQ.into(),
    };
    header.validate()?;
    let mut out = header_bytes(&header);
    for &l in labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn load_segmentation(path: impl AsRef<Path>) -> Result<SegmentationMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes)
}

pub fn save_segmentation(map: &SegmentationMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_labels(map.height, map.width, &map.labels)?;
    write_file(path.as_ref(), &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn header(h: usize, w: usize, b: usize, scale: Option<f64>) -> Vec<u8> {
        header_bytes(&RasterHeader {
            height: h,
            width: w,
            bands: b,
            dtype: DTYPE_F32.into(),
            scale_factor: scale,
            layout: LAYOUT_BSQ.into(),
        })
    }

    #[test]
    fn scale_factor_divides_digital_numbers() {
        let mut bytes = header(2, 2, 3, Some(10_000.0));
        for _ in 0..12 {
            bytes.extend_from_slice(&5000f32.to_le_bytes());
        }
        let cube = decode_cube(&bytes).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.channels()), (2, 2, 3));
        assert!(cube.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn short_payload_is_rejected() {
        let mut bytes = header(4, 4, 242, None);
        for _ in 0..4 * 4 * 241 {
            bytes.extend_from_slice(&0f32.to_le_bytes());
        }
        let err = decode_cube(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = header(1, 1, 2, None);
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(
            decode_cube(&bytes),
            Err(Error::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_cube(b"no newline"), Err(Error::Header(_))));
        assert!(matches!(
            decode_cube(b"{\"height\":1}\n"),
            Err(Error::Header(_))
        ));
        let bad_layout = b"{\"height\":1,\"width\":1,\"bands\":1,\"dtype\":\"f32le\",\"layout\":\"bip\"}\n\0\0\0\0";
        assert!(matches!(decode_cube(bad_layout), Err(Error::Header(_))));
    }

    #[test]
    fn roundtrip_through_disk_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.raster");
        let mut rng = Rng::new(11);
        let cube = HsiCube::from_fn(8, 8, 16, |_, _, _| rng.uniform() as f32 as f64).unwrap();
        save_cube(&cube, &path).unwrap();
        let back = load_cube(&path).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn save_to_missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("cube.raster");
        let cube = HsiCube::zeros(2, 2, 2).unwrap();
        let err = save_cube(&cube, &path).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Io);
    }

    #[test]
    fn labels_roundtrip() {
        let map = SegmentationMap::new(2, 3, vec![0, 0, 1, 7, 7, 1]).unwrap();
        let back = decode_labels(&encode_labels(2, 3, &map.labels).unwrap()).unwrap();
        assert_eq!(back, map);
        // a float raster is not a label raster
        let cube_bytes = encode_cube(&HsiCube::zeros(2, 3, 1).unwrap()).unwrap();
        assert!(decode_labels(&cube_bytes).is_err());
    }
}
