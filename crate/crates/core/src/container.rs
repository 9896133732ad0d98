//! Binary containers for fitted models.
//!
//! Same layout idea as the raster format: one JSON header line, then a
//! payload of little-endian `f64` values. Two kinds exist:
//!
//! * `gewdiff-rwa`: regression weights per level (row-major), the top
//!   approximation (band-sequential), then per-level residuals if kept.
//! * `gewdiff-codec`: regression weights, PCA mean, loadings (`k × C`,
//!   row-major), eigenvalues, and optionally the latent cube.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::codec::LatentCodec;
use crate::cube::{Cube, LatentCube};
use crate::error::{Error, Result};
use crate::pca::PcaModel;
use crate::raster::write_file;
use crate::wavelet::{RwaEncoding, RwaModel};

const RWA_FORMAT: &str = "gewdiff-rwa";
const CODEC_FORMAT: &str = "gewdiff-codec";

#[derive(Debug, Serialize, Deserialize)]
struct RwaHeader {
    format: String,
    height: usize,
    width: usize,
    band_counts: Vec<usize>,
    has_residuals: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct CodecHeader {
    format: String,
    band_counts: Vec<usize>,
    pca_k: usize,
    /// Spatial size of the stored latent, absent when only the model is kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent_shape: Option<(usize, usize)>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn with_header<T: Serialize>(header: &T) -> Self {
        let mut out = serde_json::to_vec(header).expect("header serializes");
        out.push(b'\n');
        Writer(out)
    }

    fn values<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for v in vals {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn matrix(&mut self, m: &DMatrix<f64>) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.0.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
    }
}

struct Reader {
    vals: Vec<f64>,
    pos: usize,
}

impl Reader {
    fn new(payload: &[u8], expected: usize, context: &str) -> Result<Self> {
        if !payload.len().is_multiple_of(8) || payload.len() / 8 != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len() / 8,
            });
        }
        let vals: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(index) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: context.into(),
                index,
            });
        }
        Ok(Reader { vals, pos: 0 })
    }

    fn take(&mut self, n: usize) -> Vec<f64> {
        let out = self.vals[self.pos..self.pos + n].to_vec();
        self.pos += n;
        out
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, &self.take(rows * cols))
    }

    fn cube(&mut self, h: usize, w: usize, c: usize) -> Result<Cube> {
        Cube::new(h, w, c, self.take(h * w * c))
    }
}

fn split<'a, T: for<'de> Deserialize<'de>>(bytes: &'a [u8]) -> Result<(T, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Header("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Header(e.to_string()))?;
    Ok((header, &bytes[nl + 1..]))
}

fn check_format(found: &str, want: &str) -> Result<()> {
    if found != want {
        return Err(Error::Header(format!(
            "expected format {want:?}, found {found:?}"
        )));
    }
    Ok(())
}

fn check_trail(band_counts: &[usize]) -> Result<()> {
    if band_counts.len() < 2 || band_counts.contains(&0) {
        return Err(Error::Header(format!("bad band trail {band_counts:?}")));
    }
    for w in band_counts.windows(2) {
        if w[1] != w[0].div_ceil(2) || w[0] < 2 {
            return Err(Error::Header(format!("bad band trail {band_counts:?}")));
        }
    }
    Ok(())
}

fn beta_len(band_counts: &[usize]) -> usize {
    band_counts
        .windows(2)
        .map(|w| (w[0] / 2) * (w[1] + 1))
        .sum()
}

fn read_betas(r: &mut Reader, band_counts: &[usize]) -> Vec<DMatrix<f64>> {
    band_counts
        .windows(2)
        .map(|w| r.matrix(w[0] / 2, w[1] + 1))
        .collect()
}

pub fn encode_rwa(enc: &RwaEncoding) -> Result<Vec<u8>> {
    enc.model.validate()?;
    let top = &enc.approx_top;
    let mut w = Writer::with_header(&RwaHeader {
        format: RWA_FORMAT.into(),
        height: top.height(),
        width: top.width(),
        band_counts: enc.model.band_counts.clone(),
        has_residuals: enc.residuals.is_some(),
    });
    for b in &enc.model.betas {
        w.matrix(b);
    }
    w.values(top.data());
    if let Some(res) = &enc.residuals {
        for r in res {
            w.values(r.data());
        }
    }
    Ok(w.0)
}

pub fn decode_rwa(bytes: &[u8]) -> Result<RwaEncoding> {
    let (h, payload): (RwaHeader, _) = split(bytes)?;
    check_format(&h.format, RWA_FORMAT)?;
    check_trail(&h.band_counts)?;
    let px = h.height * h.width;
    if px == 0 {
        return Err(Error::Header("empty spatial extent".into()));
    }
    let top = *h.band_counts.last().unwrap();
    let details: usize = h.band_counts[..h.band_counts.len() - 1]
        .iter()
        .map(|b| b / 2)
        .sum();
    let expected =
        beta_len(&h.band_counts) + px * top + if h.has_residuals { px * details } else { 0 };
    let mut r = Reader::new(payload, expected, "RWA container")?;
    let betas = read_betas(&mut r, &h.band_counts);
    let approx_top = r.cube(h.height, h.width, top)?;
    let residuals = if h.has_residuals {
        let mut out = Vec::new();
        for b in &h.band_counts[..h.band_counts.len() - 1] {
            out.push(r.cube(h.height, h.width, b / 2)?);
        }
        Some(out)
    } else {
        None
    };
    let model = RwaModel {
        betas,
        band_counts: h.band_counts,
    };
    model.validate()?;
    Ok(RwaEncoding {
        approx_top,
        model,
        residuals,
    })
}

/// Serializes the codec, with the latent if given.
pub fn encode_codec(codec: &LatentCodec, latent: Option<&LatentCube>) -> Result<Vec<u8>> {
    codec.rwa.validate()?;
    codec.pca.validate()?;
    if codec.pca.channels() != codec.rwa.top_bands() {
        return Err(Error::shape(
            "PCA channels differ from the RWA approximation",
        ));
    }
    if let Some(z) = latent {
        if z.channels() != codec.latent_channels() {
            return Err(Error::shape(format!(
                "latent has {} channels, codec retains {}",
                z.channels(),
                codec.latent_channels()
            )));
        }
        z.check_finite("latent to save")?;
    }
    let mut w = Writer::with_header(&CodecHeader {
        format: CODEC_FORMAT.into(),
        band_counts: codec.rwa.band_counts.clone(),
        pca_k: codec.pca.retained(),
        latent_shape: latent.map(|z| (z.height(), z.width())),
    });
    for b in &codec.rwa.betas {
        w.matrix(b);
    }
    w.values(&codec.pca.mean);
    w.matrix(&codec.pca.loadings);
    w.values(&codec.pca.eigenvalues);
    if let Some(z) = latent {
        w.values(z.data());
    }
    Ok(w.0)
}

pub fn decode_codec(bytes: &[u8]) -> Result<(LatentCodec, Option<LatentCube>)> {
    let (h, payload): (CodecHeader, _) = split(bytes)?;
    check_format(&h.format, CODEC_FORMAT)?;
    check_trail(&h.band_counts)?;
    let c = *h.band_counts.last().unwrap();
    let k = h.pca_k;
    if k == 0 || k > c {
        return Err(Error::Header(format!("pca_k {k} outside 1..={c}")));
    }
    let latent_len = match h.latent_shape {
        Some((lh, lw)) if lh == 0 || lw == 0 => {
            return Err(Error::Header("empty latent shape".into()));
        }
        Some((lh, lw)) => lh * lw * k,
        None => 0,
    };
    let expected = beta_len(&h.band_counts) + c + k * c + k + latent_len;
    let mut r = Reader::new(payload, expected, "codec container")?;
    let betas = read_betas(&mut r, &h.band_counts);
    let pca = PcaModel {
        mean: r.take(c),
        loadings: r.matrix(k, c),
        eigenvalues: r.take(k),
    };
    let latent = match h.latent_shape {
        Some((lh, lw)) => Some(r.cube(lh, lw, k)?),
        None => None,
    };
    let rwa = RwaModel {
        betas,
        band_counts: h.band_counts,
    };
    rwa.validate()?;
    pca.validate()?;
    Ok((LatentCodec { rwa, pca }, latent))
}

pub fn save_rwa(enc: &RwaEncoding, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_rwa(enc)?)
}

pub fn load_rwa(path: impl AsRef<Path>) -> Result<RwaEncoding> {
    let path = path.as_ref();
    decode_rwa(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_codec(
    codec: &LatentCodec,
    latent: Option<&LatentCube>,
    path: impl AsRef<Path>,
) -> Result<()> {
    write_file(path.as_ref(), &encode_codec(codec, latent)?)
}

pub fn load_codec(path: impl AsRef<Path>) -> Result<(LatentCodec, Option<LatentCube>)> {
    let path = path.as_ref();
    decode_codec(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
