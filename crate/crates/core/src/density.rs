//! Ground-truth density maps.
//!
//! Every head deposits a truncated isotropic Gaussian that is renormalized to
//! unit mass after clipping to the grid, so the mass of a map equals the
//! number of heads rasterized into it.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{FlowDecomposition, FrameAnnotation, HeadPoint};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VICD";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapRole {
    Global,
    Shared,
    Outflow,
    Inflow,
}

impl MapRole {
    pub fn code(self) -> u8 {
        match self {
            MapRole::Global => 0,
            MapRole::Shared => 1,
            MapRole::Outflow => 2,
            MapRole::Inflow => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => MapRole::Global,
            1 => MapRole::Shared,
            2 => MapRole::Outflow,
            3 => MapRole::Inflow,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            MapRole::Global => "global",
            MapRole::Shared => "shared",
            MapRole::Outflow => "outflow",
            MapRole::Inflow => "inflow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    /// Gaussian standard deviation in input pixels.
    pub sigma: f64,
    /// Half-width of the square support in input pixels.
    pub truncation_radius: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            truncation_radius: 12.0,
        }
    }
}

impl KernelSpec {
    /// Kernel with the default 3-sigma support.
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            truncation_radius: 3.0 * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Parameter(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.truncation_radius >= 2.0 * self.sigma) {
            return Err(Error::Parameter(format!(
                "truncation radius {} must be at least 2 * sigma ({})",
                self.truncation_radius,
                2.0 * self.sigma
            )));
        }
        Ok(())
    }
}

/// Single-channel nonnegative grid. Cell `(r, c)` covers input pixels
/// `[r*s, (r+1)*s) x [c*s, (c+1)*s)` for stride `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    height: usize,
    width: usize,
    stride: u32,
    role: MapRole,
    data: Vec<f32>,
}

impl DensityMap {
    pub fn zeros(height: usize, width: usize, stride: u32, role: MapRole) -> Self {
        Self {
            height,
            width,
            stride,
            role,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, stride: u32, role: MapRole, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{} entries for a {height}x{width} map",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Input(format!("density entries must be >= 0, found {v}")));
        }
        Ok(Self {
            height,
            width,
            stride,
            role,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn role(&self) -> MapRole {
        self.role
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn with_role(mut self, role: MapRole) -> Self {
        self.role = role;
        self
    }

    /// Total mass, accumulated in `f64`.
    pub fn mass(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Elementwise sum; the role of `self` is kept.
    pub fn add(&self, other: &DensityMap) -> Result<DensityMap> {
        self.check_same_grid(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
            ..self.clone()
        })
    }

    pub fn max_abs_diff(&self, other: &DensityMap) -> Result<f64> {
        self.check_same_grid(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max))
    }

    fn check_same_grid(&self, other: &DensityMap) -> Result<()> {
        if (self.height, self.width, self.stride) != (other.height, other.width, other.stride) {
            return Err(Error::Shape(format!(
                "grid {}x{}/{} vs {}x{}/{}",
                self.height, self.width, self.stride, other.height, other.width, other.stride
            )));
        }
        Ok(())
    }

    /// Horizontal mirror.
    pub fn flipped(&self) -> DensityMap {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self { data, ..self.clone() }
    }

    /// Sub-grid starting at cell `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Result<DensityMap> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::Shape(format!(
                "window {height}x{width}@({row},{col}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            data.extend_from_slice(&self.data[r * self.width + col..r * self.width + col + width]);
        }
        Ok(Self {
            height,
            width,
            data,
            ..self.clone()
        })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&self.stride.to_le_bytes())?;
        w.write_all(&[self.role.code()])?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + 4 * self.data.len());
        self.write_to(&mut out).expect("writing to Vec");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut &[u8]| -> std::result::Result<u32, String> {
            r.read_exact(&mut word).map_err(|e| e.to_string())?;
            Ok(u32::from_le_bytes(word))
        };
        let height = next_u32(&mut r)? as usize;
        let width = next_u32(&mut r)? as usize;
        let stride = next_u32(&mut r)?;
        let mut code = [0u8; 1];
        r.read_exact(&mut code).map_err(|e| e.to_string())?;
        let role = MapRole::from_code(code[0]).ok_or_else(|| format!("bad role code {}", code[0]))?;
        if r.len() != 4 * height * width {
            return Err(format!(
                "expected {} payload bytes for {height}x{width}, found {}",
                4 * height * width,
                r.len()
            ));
        }
        let data = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            height,
            width,
            stride,
            role,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|message| Error::Format {
            path: path.to_path_buf(),
            message,
        })
    }
}

/// Grid dimensions for an image of the given size at `stride`.
pub fn grid_shape(width: u32, height: u32, stride: u32) -> (usize, usize) {
    let s = stride.max(1) as usize;
    ((height as usize).div_ceil(s), (width as usize).div_ceil(s))
}

/// Normalized 1-D weights of the grid cells near `pos`.
fn axis_weights(pos: f64, cells: usize, stride: u32, kernel: &KernelSpec) -> (usize, Vec<f64>) {
    let s = stride as f64;
    let center_of = |u: usize| u as f64 * s + (s - 1.0) / 2.0;
    let lo = ((pos - kernel.truncation_radius - (s - 1.0) / 2.0) / s).ceil().max(0.0) as usize;
    let hi_f = ((pos + kernel.truncation_radius - (s - 1.0) / 2.0) / s).floor();
    let two_var = 2.0 * kernel.sigma * kernel.sigma;
    if hi_f >= 0.0 && lo < cells {
        let hi = (hi_f as usize).min(cells - 1);
        if lo <= hi {
            let mut w: Vec<f64> = (lo..=hi)
                .map(|u| {
                    let d = center_of(u) - pos;
                    (-d * d / two_var).exp()
                })
                .collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
                return (lo, w);
            }
        }
    }
    // No cell center inside the support: all mass to the nearest cell.
    let nearest = ((pos - (s - 1.0) / 2.0) / s).round().clamp(0.0, (cells - 1) as f64) as usize;
    (nearest, vec![1.0])
}

/// Rasterizes `points` into a `ceil(H/s) x ceil(W/s)` grid.
pub fn rasterize(
    points: &[HeadPoint],
    width: u32,
    height: u32,
    kernel: &KernelSpec,
    stride: u32,
) -> Result<DensityMap> {
    kernel.validate()?;
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("frame size must be positive, got {width}x{height}")));
    }
    let (gh, gw) = grid_shape(width, height, stride);
    let mut acc = vec![0.0f64; gh * gw];
    for p in points {
        if !(p.x.is_finite() && p.y.is_finite()) {
            return Err(Error::Input(format!("non-finite head point ({}, {})", p.x, p.y)));
        }
        let (c0, wx) = axis_weights(p.x, gw, stride, kernel);
        let (r0, wy) = axis_weights(p.y, gh, stride, kernel);
        for (dr, wr) in wy.iter().enumerate() {
            let row = &mut acc[(r0 + dr) * gw + c0..(r0 + dr) * gw + c0 + wx.len()];
            for (cell, wc) in row.iter_mut().zip(&wx) {
                *cell += wr * wc;
            }
        }
    }
    Ok(DensityMap {
        height: gh,
        width: gw,
        stride,
        role: MapRole::Global,
        data: acc.into_iter().map(|v| v as f32).collect(),
    })
}

/// The six ground-truth maps of a frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GtBundle {
    pub global_a: DensityMap,
    pub global_b: DensityMap,
    pub shared_a: DensityMap,
    pub shared_b: DensityMap,
    pub outflow_a: DensityMap,
    pub inflow_b: DensityMap,
}

impl GtBundle {
    pub fn maps(&self) -> [(&'static str, &DensityMap); 6] {
        [
            ("global_a", &self.global_a),
            ("global_b", &self.global_b),
            ("shared_a", &self.shared_a),
            ("shared_b", &self.shared_b),
            ("outflow_a", &self.outflow_a),
            ("inflow_b", &self.inflow_b),
        ]
    }
}

pub fn gt_bundle(
    pair: &FlowDecomposition,
    frame_a: &FrameAnnotation,
    frame_b: &FrameAnnotation,
    kernel: &KernelSpec,
    stride: u32,
) -> Result<GtBundle> {
    if pair.shared_a.len() + pair.outflow.len() != frame_a.points.len()
        || pair.shared_b.len() + pair.inflow.len() != frame_b.points.len()
    {
        return Err(Error::Input(
            "flow decomposition does not partition the frame points".into(),
        ));
    }
    let ra = |pts: &[HeadPoint], role| {
        rasterize(pts, frame_a.width, frame_a.height, kernel, stride).map(|m| m.with_role(role))
    };
    let rb = |pts: &[HeadPoint], role| {
        rasterize(pts, frame_b.width, frame_b.height, kernel, stride).map(|m| m.with_role(role))
    };
    Ok(GtBundle {
        global_a: ra(&frame_a.points, MapRole::Global)?,
        global_b: rb(&frame_b.points, MapRole::Global)?,
        shared_a: ra(&pair.shared_a, MapRole::Shared)?,
        shared_b: rb(&pair.shared_b, MapRole::Shared)?,
        outflow_a: ra(&pair.outflow, MapRole::Outflow)?,
        inflow_b: rb(&pair.inflow, MapRole::Inflow)?,
    })
}

pub fn mass(map: &DensityMap) -> f64 {
    map.mass()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_points_give_zero_map() {
        let m = rasterize(&[], 64, 64, &KernelSpec::default(), 1).unwrap();
        assert_eq!((m.height(), m.width()), (64, 64));
        assert_eq!(m.mass(), 0.0);
    }

    #[test]
    fn single_center_point_has_unit_mass() {
        let m = rasterize(&[HeadPoint::new(32.0, 32.0)], 64, 64, &KernelSpec::default(), 1).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-6);
        // peak at the head location
        assert_eq!(m.max(), m.get(32, 32));
    }

    #[test]
    fn corner_point_keeps_unit_mass() {
        let m = rasterize(&[HeadPoint::new(0.0, 63.0)], 64, 64, &KernelSpec::default(), 1).unwrap();
        assert!((m.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_sigma_is_parameter_error() {
        let k = KernelSpec {
            sigma: 0.0,
            truncation_radius: 1.0,
        };
        assert!(matches!(rasterize(&[], 8, 8, &k, 1), Err(Error::Parameter(_))));
        let k = KernelSpec {
            sigma: 4.0,
            truncation_radius: 5.0,
        };
        assert!(matches!(k.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn strided_grid_shape_uses_ceiling() {
        let m = rasterize(&[HeadPoint::new(5.0, 5.0)], 65, 63, &KernelSpec::default(), 4).unwrap();
        assert_eq!((m.height(), m.width()), (16, 17));
        assert!((m.mass() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_kernel_with_coarse_stride_falls_back_to_nearest_cell() {
        let k = KernelSpec {
            sigma: 0.1,
            truncation_radius: 0.2,
        };
        let m = rasterize(&[HeadPoint::new(0.0, 0.0)], 16, 16, &k, 8).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
    }

    #[test]
    fn mass_of_zero_map_and_sum() {
        let z = DensityMap::zeros(8, 8, 1, MapRole::Global);
        assert_eq!(mass(&z), 0.0);
        let a = rasterize(&[HeadPoint::new(2.0, 2.0)], 8, 8, &KernelSpec::with_sigma(1.0), 1).unwrap();
        let b = rasterize(&[HeadPoint::new(5.0, 6.0)], 8, 8, &KernelSpec::with_sigma(1.0), 1).unwrap();
        let s = a.add(&b).unwrap();
        assert!((s.mass() - (a.mass() + b.mass())).abs() < 1e-6);
    }

    #[test]
    fn binary_container_round_trip_and_layout() {
        let m = rasterize(&[HeadPoint::new(3.0, 1.0)], 7, 5, &KernelSpec::with_sigma(1.0), 1)
            .unwrap()
            .with_role(MapRole::Inflow);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"VICD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(bytes[16], 3);
        assert_eq!(bytes.len(), 17 + 4 * 35);
        assert_eq!(DensityMap::from_bytes(&bytes).unwrap(), m);
        assert!(DensityMap::from_bytes(&bytes[..20]).is_err());
    }
}
