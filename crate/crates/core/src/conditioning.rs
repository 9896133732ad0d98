//! Conditioning inputs for the denoiser: the upsampled LR latent, the
//! vegetation-weighted segment mask and the edge map.

use std::collections::{HashMap, VecDeque};

use crate::codec::LatentCodec;
use crate::cube::{Cube, HsiCube, LatentCube, Plane, SegmentationMap};
use crate::error::{Error, Result};
use crate::schedule::{self, EdgeMap};

/// Default red band (≈660 nm) for a 242-band VNIR/SWIR profile.
pub const DEFAULT_RED_BAND: usize = 37;
/// Default near-infrared band (≈865 nm) for the same profile.
pub const DEFAULT_NIR_BAND: usize = 68;
pub const DEFAULT_SR_FACTOR: usize = 4;

/// Fallback segments smaller than this many pixels are merged away.
pub const MIN_REGION_PIXELS: usize = 8;
const NDVI_BINS: usize = 4;

/// Per-pixel mask in `[0, 1]`, constant within each segment.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl MaskMap {
    pub fn to_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            values: self.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    pub lr_latent: LatentCube,
    pub mask: MaskMap,
    pub edge: EdgeMap,
}

impl ConditionSet {
    pub fn new(lr_latent: LatentCube, mask: MaskMap, edge: EdgeMap) -> Result<Self> {
        let (h, w) = (lr_latent.height(), lr_latent.width());
        if mask.height != h || mask.width != w || edge.height != h || edge.width != w {
            return Err(Error::shape(format!(
                "conditions disagree on size: latent {h}x{w}, mask {}x{}, edges {}x{}",
                mask.height, mask.width, edge.height, edge.width
            )));
        }
        Ok(Self {
            lr_latent,
            mask,
            edge,
        })
    }

    /// A single zero latent channel, an all-zero mask and no edges; for
    /// denoisers that ignore their conditions.
    pub fn blank(height: usize, width: usize) -> Self {
        Self {
            lr_latent: Cube::zeros(height, width, 1).expect("positive size"),
            mask: MaskMap {
                height,
                width,
                values: vec![0.0; height * width],
            },
            edge: EdgeMap::empty(height, width),
        }
    }

    pub fn height(&self) -> usize {
        self.lr_latent.height()
    }

    pub fn width(&self) -> usize {
        self.lr_latent.width()
    }
}

/// Raw NDVI `(NIR − Red) / (NIR + Red)`, with `0/0` mapped to 0.
pub fn ndvi_raw(cube: &HsiCube, red_band: usize, nir_band: usize) -> Result<Plane> {
    let c = cube.channels();
    if red_band >= c || nir_band >= c || red_band == nir_band {
        return Err(Error::invalid(format!(
            "red band {red_band} / NIR band {nir_band} invalid for {c} channels"
        )));
    }
    let values = cube
        .band(red_band)
        .iter()
        .zip(cube.band(nir_band))
        .map(|(&r, &n)| {
            let s = n + r;
            if s == 0.0 {
                0.0
            } else {
                ((n - r) / s).clamp(-1.0, 1.0)
            }
        })
        .collect();
    Plane::new(cube.height(), cube.width(), values)
}

/// NDVI mapped onto `[0, 1]` as `(NDVI + 1) / 2`.
pub fn ndvi(cube: &HsiCube, red_band: usize, nir_band: usize) -> Result<Plane> {
    let mut p = ndvi_raw(cube, red_band, nir_band)?;
    p.values.iter_mut().for_each(|v| *v = (*v + 1.0) / 2.0);
    Ok(p)
}

/// `M_s = 1 − mean(NDVI_norm over region s)` for every pixel of region `s`.
pub fn mask_from_segments(ndvi_norm: &Plane, segs: &SegmentationMap) -> Result<MaskMap> {
    if ndvi_norm.height != segs.height || ndvi_norm.width != segs.width {
        return Err(Error::shape(format!(
            "NDVI is {}x{}, segmentation is {}x{}",
            ndvi_norm.height, ndvi_norm.width, segs.height, segs.width
        )));
    }
    let mut acc: HashMap<u32, (f64, usize)> = HashMap::new();
    for (&l, &v) in segs.labels.iter().zip(&ndvi_norm.values) {
        let e = acc.entry(l).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    let values = segs
        .labels
        .iter()
        .map(|l| {
            let (s, n) = acc[l];
            (1.0 - s / n as f64).clamp(0.0, 1.0)
        })
        .collect();
    Ok(MaskMap {
        height: segs.height,
        width: segs.width,
        values,
    })
}

/// Deterministic stand-in for an external segmentation model.
///
/// NDVI is averaged over `grid × grid` cells and quantized into four equal
/// bins; 4-connected cells sharing a bin form a region. Regions under
/// [`MIN_REGION_PIXELS`] pixels are merged into their largest neighbour
/// (smallest label on ties). Labels are renumbered in raster order.
pub fn fallback_segment(ndvi_norm: &Plane, grid: usize) -> Result<SegmentationMap> {
    if grid == 0 {
        return Err(Error::invalid("segmentation cell size must be at least 1"));
    }
    let (h, w) = (ndvi_norm.height, ndvi_norm.width);
    let (ch, cw) = (h.div_ceil(grid), w.div_ceil(grid));
    let ncells = ch * cw;

    let mut sum = vec![0.0; ncells];
    let mut area = vec![0usize; ncells];
    for y in 0..h {
        for x in 0..w {
            let c = (y / grid) * cw + x / grid;
            sum[c] += ndvi_norm.get(y, x);
            area[c] += 1;
        }
    }
    let bins: Vec<usize> = sum
        .iter()
        .zip(&area)
        .map(|(s, &a)| {
            let v = (s / a as f64).clamp(0.0, 1.0);
            ((v * NDVI_BINS as f64) as usize).min(NDVI_BINS - 1)
        })
        .collect();

    let neighbours = |c: usize| {
        let (y, x) = (c / cw, c % cw);
        let mut n = Vec::with_capacity(4);
        if y > 0 {
            n.push(c - cw);
        }
        if x > 0 {
            n.push(c - 1);
        }
        if x + 1 < cw {
            n.push(c + 1);
        }
        if y + 1 < ch {
            n.push(c + cw);
        }
        n
    };

    // connected components over cells
    let mut comp = vec![usize::MAX; ncells];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..ncells {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            size += area[c];
            for n in neighbours(c) {
                if comp[n] == usize::MAX && bins[n] == bins[start] {
                    comp[n] = id;
                    queue.push_back(n);
                }
            }
        }
        sizes.push(size);
    }

    // merge small regions until stable
    let mut parent: Vec<usize> = (0..sizes.len()).collect();
    fn root(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    loop {
        let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
        for c in 0..ncells {
            let a = root(&mut parent, comp[c]);
            for n in neighbours(c) {
                let b = root(&mut parent, comp[n]);
                if a != b {
                    adjacent[a].push(b);
                }
            }
        }
        let mut changed = false;
        for id in 0..sizes.len() {
            if root(&mut parent, id) != id || sizes[id] >= MIN_REGION_PIXELS {
                continue;
            }
            let mut best: Option<usize> = None;
            for &nb in &adjacent[id] {
                let r = root(&mut parent, nb);
                if r == id {
                    continue;
                }
                best = match best {
                    None => Some(r),
                    Some(b) if sizes[r] > sizes[b] || (sizes[r] == sizes[b] && r < b) => Some(r),
                    keep => keep,
                };
            }
            if let Some(target) = best {
                parent[id] = target;
                sizes[target] += sizes[id];
                let moved = std::mem::take(&mut adjacent[id]);
                adjacent[target].extend(moved);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut dense: HashMap<usize, u32> = HashMap::new();
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let c = (y / grid) * cw + x / grid;
            let r = root(&mut parent, comp[c]);
            let next = dense.len() as u32;
            labels.push(*dense.entry(r).or_insert(next));
        }
    }
    SegmentationMap::new(h, w, labels)
}

/// Source coordinate and weights for align-corners=false bilinear sampling.
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn upsample_band(band: &[f64], h: usize, w: usize, factor: usize, out: &mut Vec<f64>) {
    let rows = bilinear_taps(h * factor, h, factor);
    let cols = bilinear_taps(w * factor, w, factor);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            let top = band[y0 * w + x0] * (1.0 - fx) + band[y0 * w + x1] * fx;
            let bot = band[y1 * w + x0] * (1.0 - fx) + band[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
}

/// Bilinear upsampling per channel. Output pixel centres sit at
/// `(i + 0.5) / factor − 0.5` in input coordinates, clamped at the border.
pub fn upsample_latent(latent: &LatentCube, factor: usize) -> Result<LatentCube> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(latent.clone());
    }
    let (h, w) = (latent.height(), latent.width());
    let mut data = Vec::with_capacity(latent.len() * factor * factor);
    for band in latent.bands() {
        upsample_band(band, h, w, factor, &mut data);
    }
    Cube::new(h * factor, w * factor, latent.channels(), data)
}

pub fn upsample_plane(plane: &Plane, factor: usize) -> Result<Plane> {
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be at least 1"));
    }
    let mut values = Vec::with_capacity(plane.values.len() * factor * factor);
    upsample_band(
        &plane.values,
        plane.height,
        plane.width,
        factor,
        &mut values,
    );
    Plane::new(plane.height * factor, plane.width * factor, values)
}

/// Nearest-neighbour upsampling of a label map.
pub fn upsample_labels(segs: &SegmentationMap, factor: usize) -> Result<SegmentationMap> {
    let (h, w) = (segs.height * factor, segs.width * factor);
    let labels = (0..h * w)
        .map(|i| segs.labels[(i / w / factor) * segs.width + (i % w) / factor])
        .collect();
    SegmentationMap::new(h, w, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionOptions {
    pub factor: usize,
    pub red_band: usize,
    pub nir_band: usize,
    pub edge_percentile: f64,
    pub edge_dilate: usize,
    pub segment_grid: usize,
}

impl Default for ConditionOptions {
    fn default() -> Self {
        Self {
            factor: DEFAULT_SR_FACTOR,
            red_band: DEFAULT_RED_BAND,
            nir_band: DEFAULT_NIR_BAND,
            edge_percentile: schedule::DEFAULT_EDGE_PERCENTILE,
            edge_dilate: schedule::DEFAULT_EDGE_DILATE,
            segment_grid: 1,
        }
    }
}

/// Assembles the condition set at target resolution.
///
/// The LR cube is projected through `codec` and upsampled; NDVI is computed
/// at LR, upsampled, and averaged over the segments (given either at LR or
/// at target size; the fallback segmenter runs when absent). Edges come from
/// the upsampled latent.
pub fn build_conditions(
    lr: &HsiCube,
    segs: Option<&SegmentationMap>,
    codec: &LatentCodec,
    opts: &ConditionOptions,
) -> Result<ConditionSet> {
    let f = opts.factor;
    let latent = codec.project(lr)?;
    let lr_latent = upsample_latent(&latent, f)?;
    let (h, w) = (lr_latent.height(), lr_latent.width());

    let ndvi_hr = upsample_plane(&ndvi(lr, opts.red_band, opts.nir_band)?, f)?;
    let segs_hr = match segs {
        Some(s) if s.height == h && s.width == w => s.clone(),
        Some(s) if s.height == lr.height() && s.width == lr.width() => upsample_labels(s, f)?,
        Some(s) => {
            return Err(Error::shape(format!(
                "segmentation is {}x{}, expected {}x{} or {h}x{w}",
                s.height,
                s.width,
                lr.height(),
                lr.width()
            )))
        }
        None => fallback_segment(&ndvi_hr, opts.segment_grid)?,
    };
    let mask = mask_from_segments(&ndvi_hr, &segs_hr)?;
    let edge = schedule::extract_edges(&lr_latent, opts.edge_percentile, opts.edge_dilate)?;
    ConditionSet::new(lr_latent, mask, edge)
}
