//! Feature tensors and the FTF ("feature tensor file") container.
//!
//! A [`FeatureMap`] holds patch embeddings for one image, either as a spatial
//! grid `(h, w, c)` or as a token sequence `(l, c)`. Values are row-major
//! `f32`, channels fastest.
//!
//! FTF layout, little-endian, no padding:
//!
//! ```text
//! "ACFT"            4 bytes
//! version   u32     = 1
//! dtype     u8      1 = float32
//! layout    u8      1 = grid, 2 = sequence
//! ndim      u8      3 (h, w, c) or 2 (l, c)
//! dims      u32 * ndim
//! src_h     u32
//! src_w     u32
//! payload   f32 * prod(dims)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FTF_MAGIC: &[u8; 4] = b"ACFT";
pub const FTF_VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;
const LAYOUT_GRID: u8 = 1;
const LAYOUT_SEQUENCE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Grid { h: usize, w: usize, c: usize },
    Sequence { len: usize, c: usize },
}

impl Layout {
    pub fn channels(&self) -> usize {
        match *self {
            Layout::Grid { c, .. } | Layout::Sequence { c, .. } => c,
        }
    }

    /// Number of patch vectors.
    pub fn patches(&self) -> usize {
        match *self {
            Layout::Grid { h, w, .. } => h * w,
            Layout::Sequence { len, .. } => len,
        }
    }

    fn numel(&self) -> Option<usize> {
        match *self {
            Layout::Grid { h, w, c } => h.checked_mul(w)?.checked_mul(c),
            Layout::Sequence { len, c } => len.checked_mul(c),
        }
    }

    fn dims(&self) -> Vec<usize> {
        match *self {
            Layout::Grid { h, w, c } => vec![h, w, c],
            Layout::Sequence { len, c } => vec![len, c],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    layout: Layout,
    data: Vec<f32>,
    /// `(height_px, width_px)` of the image the features were computed from.
    source_image_size: (u32, u32),
}

impl FeatureMap {
    pub fn new(layout: Layout, data: Vec<f32>, source_image_size: (u32, u32)) -> Result<Self> {
        if layout.dims().contains(&0) {
            return Err(Error::Dimension(format!(
                "all dimensions must be >= 1, got {:?}",
                layout.dims()
            )));
        }
        let expected = layout
            .numel()
            .ok_or_else(|| Error::Dimension(format!("dimensions {:?} overflow", layout.dims())))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "payload size mismatch: layout {:?} needs {expected} values, got {}",
                layout.dims(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at index {i}")));
        }
        Ok(FeatureMap {
            layout,
            data,
            source_image_size,
        })
    }

    pub fn grid(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Layout::Grid { h, w, c }, data, (0, 0))
    }

    pub fn sequence(len: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Layout::Sequence { len, c }, data, (0, 0))
    }

    pub fn with_source_size(mut self, height_px: u32, width_px: u32) -> Self {
        self.source_image_size = (height_px, width_px);
        self
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn source_image_size(&self) -> (u32, u32) {
        self.source_image_size
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    /// Patch vector at flat index `i` (row-major over the grid).
    pub fn patch(&self, i: usize) -> &[f32] {
        let c = self.channels();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn patch_vectors(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.channels())
    }

    /// Grid dimensions `(h, w)`, if this is a grid.
    pub fn grid_dims(&self) -> Option<(usize, usize)> {
        match self.layout {
            Layout::Grid { h, w, .. } => Some((h, w)),
            Layout::Sequence { .. } => None,
        }
    }

    /// Reshapes a sequence `(h*w, c)` into a grid `(h, w, c)`.
    pub fn to_grid(&self, h: usize, w: usize) -> Result<FeatureMap> {
        let (len, c) = match self.layout {
            Layout::Sequence { len, c } => (len, c),
            Layout::Grid { .. } => {
                return Err(Error::Layout("to_grid expects a sequence layout".into()))
            }
        };
        if h.checked_mul(w) != Some(len) {
            return Err(Error::Dimension(format!(
                "cannot reshape sequence of length {len} into {h}x{w}"
            )));
        }
        FeatureMap::new(
            Layout::Grid { h, w, c },
            self.data.clone(),
            self.source_image_size,
        )
    }

    /// Flattens a grid back into a sequence; sequences are returned as-is.
    pub fn to_sequence(&self) -> FeatureMap {
        let layout = Layout::Sequence {
            len: self.layout.patches(),
            c: self.channels(),
        };
        FeatureMap {
            layout,
            data: self.data.clone(),
            source_image_size: self.source_image_size,
        }
    }

    /// Returns a grid view of this map. Sequences whose length is a perfect
    /// square are reshaped to a square grid.
    pub fn as_square_grid(&self) -> Result<FeatureMap> {
        match self.layout {
            Layout::Grid { .. } => Ok(self.clone()),
            Layout::Sequence { len, .. } => {
                let side = (len as f64).sqrt().round() as usize;
                if side * side != len {
                    return Err(Error::Layout(format!(
                        "sequence of length {len} is not a square patch grid"
                    )));
                }
                self.to_grid(side, side)
            }
        }
    }
}

/// Bilinear resize with align-corners sampling: output corners coincide with
/// input corners.
pub fn resize_bilinear(map: &FeatureMap, new_h: usize, new_w: usize) -> Result<FeatureMap> {
    let (h, w, c) = match map.layout {
        Layout::Grid { h, w, c } => (h, w, c),
        Layout::Sequence { .. } => {
            return Err(Error::Layout(
                "resize_bilinear expects a grid layout".into(),
            ))
        }
    };
    if new_h == 0 || new_w == 0 {
        return Err(Error::Dimension(
            "resize target must be at least 1x1".into(),
        ));
    }
    if (new_h, new_w) == (h, w) {
        return Ok(map.clone());
    }

    // (lower index, upper index, weight of upper)
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let pos = if n_out == 1 || n_in == 1 {
                    0.0
                } else {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(h, new_h);
    let cols = axis(w, new_w);

    let src = &map.data;
    let at = |r: usize, q: usize, ch: usize| src[(r * w + q) * c + ch] as f64;
    let mut out = Vec::with_capacity(new_h * new_w * c);
    for &(r0, r1, fy) in &rows {
        for &(q0, q1, fx) in &cols {
            for ch in 0..c {
                let top = at(r0, q0, ch) * (1.0 - fx) + at(r0, q1, ch) * fx;
                let bottom = at(r1, q0, ch) * (1.0 - fx) + at(r1, q1, ch) * fx;
                out.push((top * (1.0 - fy) + bottom * fy) as f32);
            }
        }
    }
    FeatureMap::new(
        Layout::Grid {
            h: new_h,
            w: new_w,
            c,
        },
        out,
        map.source_image_size,
    )
}

/// Concatenates two grids along the channel axis. If the spatial sizes
/// differ, the smaller grid is upsampled to the larger one first.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    let (Some((ha, wa)), Some((hb, wb))) = (a.grid_dims(), b.grid_dims()) else {
        return Err(Error::Layout("concat_channels expects grid layouts".into()));
    };
    let (h, w) = (ha.max(hb), wa.max(wb));
    let a = resize_bilinear(a, h, w)?;
    let b = resize_bilinear(b, h, w)?;
    let (ca, cb) = (a.channels(), b.channels());

    let mut out = Vec::with_capacity(h * w * (ca + cb));
    for (pa, pb) in a.patch_vectors().zip(b.patch_vectors()) {
        out.extend_from_slice(pa);
        out.extend_from_slice(pb);
    }
    // The larger source resolution wins for the combined map.
    let src = a.source_image_size.max(b.source_image_size);
    FeatureMap::new(Layout::Grid { h, w, c: ca + cb }, out, src)
}

/// Scales every patch vector to unit L2 norm. Zero vectors are left as-is.
pub fn l2_normalize(map: &FeatureMap) -> FeatureMap {
    let mut data = map.data.clone();
    for v in data.chunks_exact_mut(map.channels()) {
        let norm = v
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
    }
    FeatureMap {
        layout: map.layout,
        data,
        source_image_size: map.source_image_size,
    }
}

pub fn encode_ftf(map: &FeatureMap) -> Vec<u8> {
    let dims = map.layout.dims();
    let mut buf = Vec::with_capacity(4 + 4 + 3 + 4 * dims.len() + 8 + 4 * map.data.len());
    buf.extend_from_slice(FTF_MAGIC);
    buf.extend_from_slice(&FTF_VERSION.to_le_bytes());
    buf.push(DTYPE_F32);
    buf.push(match map.layout {
        Layout::Grid { .. } => LAYOUT_GRID,
        Layout::Sequence { .. } => LAYOUT_SEQUENCE,
    });
    buf.push(dims.len() as u8);
    for d in dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&map.source_image_size.0.to_le_bytes());
    buf.extend_from_slice(&map.source_image_size.1.to_le_bytes());
    for v in &map.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(field, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_ftf(bytes: &[u8]) -> Result<FeatureMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != FTF_MAGIC {
        return Err(Error::format("magic", "bad magic, expected \"ACFT\""));
    }
    let version = cur.u32("version")?;
    if version != FTF_VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let dtype = cur.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::format(
            "dtype",
            format!("unsupported dtype code {dtype}"),
        ));
    }
    let layout_code = cur.u8("layout")?;
    let ndim = cur.u8("ndim")?;
    let expected_ndim = match layout_code {
        LAYOUT_GRID => 3,
        LAYOUT_SEQUENCE => 2,
        other => {
            return Err(Error::format(
                "layout",
                format!("unknown layout code {other}"),
            ))
        }
    };
    if ndim != expected_ndim {
        return Err(Error::format(
            "ndim",
            format!("layout code {layout_code} requires ndim {expected_ndim}, got {ndim}"),
        ));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        let d = cur.u32("dims")? as usize;
        if d == 0 {
            return Err(Error::format("dims", "dimension of size 0"));
        }
        dims.push(d);
    }
    let src_h = cur.u32("source_height")?;
    let src_w = cur.u32("source_width")?;
    let layout = match layout_code {
        LAYOUT_GRID => Layout::Grid {
            h: dims[0],
            w: dims[1],
            c: dims[2],
        },
        _ => Layout::Sequence {
            len: dims[0],
            c: dims[1],
        },
    };
    let numel = layout
        .numel()
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| Error::format("dims", format!("dimensions {dims:?} overflow")))?;

    let payload = &bytes[cur.pos..];
    if payload.len() != numel * 4 {
        return Err(Error::format(
            "payload",
            format!(
                "payload size mismatch: dims {dims:?} need {numel} floats, found {} bytes",
                payload.len()
            ),
        ));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            "payload",
            format!("non-finite value at index {i}"),
        ));
    }
    Ok(FeatureMap {
        layout,
        data,
        source_image_size: (src_h, src_w),
    })
}

pub fn load_ftf(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ftf(&bytes)
}

pub fn save_ftf(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_ftf(map))
        .map_err(|e| Error::io(path, e))
}
