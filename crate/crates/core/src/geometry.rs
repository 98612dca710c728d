//! Coordinate systems shared by the small (cell) and large (tissue) fields of view.
//!
//! The cell patch covers `1 / fov_ratio` of the tissue patch side. The tissue
//! patch is stored downsampled by `tissue_store_downsample`, so in stored
//! tissue pixels the cell patch occupies a square window of side
//! `store_side / fov_ratio`. Its centre sits at `(c_x, c_y)`, expressed as a
//! fraction of the tissue extent.
//!
//! Window offsets round half up: `top = floor(c_y * store_side - side / 2 + 0.5)`.
//! Bilinear resampling uses the pixel-centre convention
//! (`src = (i + 0.5) / f - 0.5`), nearest uses `floor(i / f)`.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::field::ScalarField;

/// Physical layout of one cell/tissue patch pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGeometry {
    /// Microns per pixel of the cell patch.
    pub mpp_cell: f64,
    pub cell_side_px: usize,
    /// Tissue field of view side divided by the cell field of view side.
    pub fov_ratio: usize,
    pub tissue_store_downsample: usize,
    pub c_x: f64,
    pub c_y: f64,
}

impl Default for PatchGeometry {
    /// 1024 px cell patches at 0.2 µm/px inside a 4x larger tissue patch
    /// stored at 4x downsampling, centred.
    fn default() -> Self {
        Self {
            mpp_cell: 0.2,
            cell_side_px: 1024,
            fov_ratio: 4,
            tissue_store_downsample: 4,
            c_x: 0.5,
            c_y: 0.5,
        }
    }
}

impl PatchGeometry {
    pub fn new(
        mpp_cell: f64,
        cell_side_px: usize,
        fov_ratio: usize,
        tissue_store_downsample: usize,
        c_x: f64,
        c_y: f64,
    ) -> Result<Self, GeometryError> {
        let g = Self {
            mpp_cell,
            cell_side_px,
            fov_ratio,
            tissue_store_downsample,
            c_x,
            c_y,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_center(self, c_x: f64, c_y: f64) -> Self {
        Self { c_x, c_y, ..self }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.mpp_cell.is_finite() && self.mpp_cell > 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "mpp_cell must be positive, got {}",
                self.mpp_cell
            )));
        }
        if self.cell_side_px == 0 {
            return Err(GeometryError::InvalidParameter(
                "cell_side_px must be positive".into(),
            ));
        }
        if self.fov_ratio == 0 || self.tissue_store_downsample == 0 {
            return Err(GeometryError::InvalidParameter(
                "fov_ratio and tissue_store_downsample must be >= 1".into(),
            ));
        }
        if !self.contains_cell_patch() {
            return Err(GeometryError::CellOutsideTissue {
                c_x: self.c_x,
                c_y: self.c_y,
            });
        }
        Ok(())
    }

    /// Containment: the centre keeps half a cell patch of margin on each side.
    pub fn contains_cell_patch(&self) -> bool {
        if self.fov_ratio == 0 {
            return false;
        }
        let margin = 1.0 / (2.0 * self.fov_ratio as f64);
        let ok = |c: f64| c.is_finite() && c >= margin - 1e-12 && c <= 1.0 - margin + 1e-12;
        ok(self.c_x) && ok(self.c_y)
    }

    /// Side of the stored tissue patch implied by the geometry.
    pub fn tissue_store_side_px(&self) -> Result<usize, GeometryError> {
        let raw = self.cell_side_px * self.fov_ratio;
        if raw % self.tissue_store_downsample != 0 {
            return Err(GeometryError::Incompatible(format!(
                "tissue side {raw} not divisible by downsample {}",
                self.tissue_store_downsample
            )));
        }
        Ok(raw / self.tissue_store_downsample)
    }

    /// Physical side of the cell patch in microns.
    pub fn cell_fov_um(&self) -> f64 {
        self.cell_side_px as f64 * self.mpp_cell
    }
}

/// The cell patch footprint inside the stored tissue grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowRect {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

impl WindowRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.side && x >= self.left && x < self.left + self.side
    }
}

#[inline]
fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Locates the cell patch inside a stored tissue grid of side `tissue_store_side_px`.
pub fn crop_window(
    geom: &PatchGeometry,
    tissue_store_side_px: usize,
) -> Result<WindowRect, GeometryError> {
    if tissue_store_side_px == 0 {
        return Err(GeometryError::InvalidParameter(
            "tissue side must be positive".into(),
        ));
    }
    if geom.fov_ratio == 0 || tissue_store_side_px % geom.fov_ratio != 0 {
        return Err(GeometryError::Incompatible(format!(
            "tissue side {tissue_store_side_px} not divisible by fov ratio {}",
            geom.fov_ratio
        )));
    }
    if !geom.contains_cell_patch() {
        return Err(GeometryError::CellOutsideTissue {
            c_x: geom.c_x,
            c_y: geom.c_y,
        });
    }
    let side = tissue_store_side_px / geom.fov_ratio;
    let s = tissue_store_side_px as f64;
    let half = side as f64 / 2.0;
    let max_off = (tissue_store_side_px - side) as f64;
    // Containment guarantees the offsets are within [0, max_off] up to
    // floating-point slop, which the clamp absorbs.
    let top = round_half_up(geom.c_y * s - half).clamp(0.0, max_off) as usize;
    let left = round_half_up(geom.c_x * s - half).clamp(0.0, max_off) as usize;
    Ok(WindowRect { top, left, side })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Nearest,
    #[default]
    Bilinear,
}

/// Whether a field holds continuous values or one-hot class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Continuous,
    Labels,
}

/// Interpolation taps for one output coordinate along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Tap {
    idx: [usize; 2],
    w: [f64; 2],
}

fn axis_taps(offset: usize, window: usize, factor: usize, mode: ResampleMode) -> Vec<Tap> {
    (0..window * factor)
        .map(|i| match mode {
            ResampleMode::Nearest => Tap {
                idx: [offset + i / factor, offset + i / factor],
                w: [1.0, 0.0],
            },
            ResampleMode::Bilinear => {
                let s = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (window - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(window - 1);
                let t = s - i0 as f64;
                Tap {
                    idx: [offset + i0, offset + i1],
                    w: [1.0 - t, t],
                }
            }
        })
        .collect()
}

/// A precomputed separable crop-then-upsample operator.
///
/// Linear in the input, so it also provides its adjoint for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplePlan {
    rows: Vec<Tap>,
    cols: Vec<Tap>,
    in_side: usize,
    out_side: usize,
}

impl ResamplePlan {
    pub fn new(
        window: WindowRect,
        in_side: usize,
        factor: usize,
        mode: ResampleMode,
    ) -> Result<Self, GeometryError> {
        if factor == 0 || window.side == 0 {
            return Err(GeometryError::InvalidParameter(
                "factor and window side must be positive".into(),
            ));
        }
        if window.top + window.side > in_side || window.left + window.side > in_side {
            return Err(GeometryError::Incompatible(format!(
                "window {window:?} exceeds grid side {in_side}"
            )));
        }
        Ok(Self {
            rows: axis_taps(window.top, window.side, factor, mode),
            cols: axis_taps(window.left, window.side, factor, mode),
            in_side,
            out_side: window.side * factor,
        })
    }

    pub fn in_side(&self) -> usize {
        self.in_side
    }

    pub fn out_side(&self) -> usize {
        self.out_side
    }

    pub fn apply(&self, input: &ScalarField) -> ScalarField {
        assert_eq!((input.height(), input.width()), (self.in_side, self.in_side));
        let n = self.out_side;
        let mut out = ScalarField::zeros(input.channels(), n, n);
        for c in 0..input.channels() {
            let src = input.plane(c);
            let dst = out.plane_mut(c);
            for (y, rt) in self.rows.iter().enumerate() {
                let r0 = &src[rt.idx[0] * self.in_side..][..self.in_side];
                let r1 = &src[rt.idx[1] * self.in_side..][..self.in_side];
                let row = &mut dst[y * n..(y + 1) * n];
                for (o, ct) in row.iter_mut().zip(&self.cols) {
                    let a = r0[ct.idx[0]] * ct.w[0] + r0[ct.idx[1]] * ct.w[1];
                    let b = r1[ct.idx[0]] * ct.w[0] + r1[ct.idx[1]] * ct.w[1];
                    *o = rt.w[0] * a + rt.w[1] * b;
                }
            }
        }
        out
    }

    /// Transpose of [`apply`](Self::apply): scatters output gradients back onto the source grid.
    pub fn apply_adjoint(&self, grad_out: &ScalarField) -> ScalarField {
        let n = self.out_side;
        assert_eq!((grad_out.height(), grad_out.width()), (n, n));
        let mut out = ScalarField::zeros(grad_out.channels(), self.in_side, self.in_side);
        for c in 0..grad_out.channels() {
            let g = grad_out.plane(c);
            let dst = out.plane_mut(c);
            for (y, rt) in self.rows.iter().enumerate() {
                for (x, ct) in self.cols.iter().enumerate() {
                    let v = g[y * n + x];
                    if v == 0.0 {
                        continue;
                    }
                    for a in 0..2 {
                        for b in 0..2 {
                            let w = rt.w[a] * ct.w[b];
                            if w != 0.0 {
                                dst[rt.idx[a] * self.in_side + ct.idx[b]] += w * v;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Mean-pools a cell-grid field by an integer factor and zero-pads it into the tissue grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolPadPlan {
    window: WindowRect,
    factor: usize,
    out_side: usize,
}

impl PoolPadPlan {
    pub fn new(window: WindowRect, factor: usize, out_side: usize) -> Result<Self, GeometryError> {
        if factor == 0 {
            return Err(GeometryError::InvalidParameter("factor must be positive".into()));
        }
        if window.top + window.side > out_side || window.left + window.side > out_side {
            return Err(GeometryError::Incompatible(format!(
                "window {window:?} exceeds grid side {out_side}"
            )));
        }
        Ok(Self {
            window,
            factor,
            out_side,
        })
    }

    pub fn in_side(&self) -> usize {
        self.window.side * self.factor
    }

    pub fn out_side(&self) -> usize {
        self.out_side
    }

    pub fn window(&self) -> WindowRect {
        self.window
    }

    pub fn apply(&self, input: &ScalarField) -> ScalarField {
        let f = self.factor;
        let in_side = self.in_side();
        assert_eq!((input.height(), input.width()), (in_side, in_side));
        let scale = 1.0 / (f * f) as f64;
        let mut out = ScalarField::zeros(input.channels(), self.out_side, self.out_side);
        for c in 0..input.channels() {
            let src = input.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..in_side {
                let oy = self.window.top + y / f;
                let row = &src[y * in_side..(y + 1) * in_side];
                for (x, &v) in row.iter().enumerate() {
                    dst[oy * self.out_side + self.window.left + x / f] += v * scale;
                }
            }
        }
        out
    }

    pub fn apply_adjoint(&self, grad_out: &ScalarField) -> ScalarField {
        let f = self.factor;
        let in_side = self.in_side();
        let scale = 1.0 / (f * f) as f64;
        let mut out = ScalarField::zeros(grad_out.channels(), in_side, in_side);
        for c in 0..grad_out.channels() {
            let g = grad_out.plane(c);
            let dst = out.plane_mut(c);
            for y in 0..in_side {
                let oy = self.window.top + y / f;
                for x in 0..in_side {
                    dst[y * in_side + x] = g[oy * self.out_side + self.window.left + x / f] * scale;
                }
            }
        }
        out
    }
}

fn square_side(map: &ScalarField) -> Option<usize> {
    map.side()
}

fn integer_factor(num: usize, den: usize, what: &str) -> Result<usize, GeometryError> {
    if den == 0 || num % den != 0 {
        return Err(GeometryError::Incompatible(format!(
            "{what}: {num} is not an integer multiple of {den}"
        )));
    }
    Ok(num / den)
}

/// Builds the crop-and-upsample operator for a tissue grid of side `tissue_side`.
pub fn crop_and_upsample_plan(
    geom: &PatchGeometry,
    tissue_side: usize,
    mode: ResampleMode,
) -> Result<ResamplePlan, GeometryError> {
    let window = crop_window(geom, tissue_side)?;
    let factor = integer_factor(geom.cell_side_px, window.side, "upsample factor")?;
    ResamplePlan::new(window, tissue_side, factor, mode)
}

/// Crops the cell-patch region out of a tissue-grid field and upsamples it to the cell grid.
pub fn crop_and_upsample(
    map: &ScalarField,
    kind: FieldKind,
    geom: &PatchGeometry,
    mode: ResampleMode,
) -> Result<ScalarField, GeometryError> {
    if kind == FieldKind::Labels && mode != ResampleMode::Nearest {
        return Err(GeometryError::LabelsRequireNearest);
    }
    let side = square_side(map).ok_or(GeometryError::FieldSize {
        expected: map.height(),
        actual: map.shape(),
    })?;
    Ok(crop_and_upsample_plan(geom, side, mode)?.apply(map))
}

pub fn downsample_and_pad_plan(
    geom: &PatchGeometry,
    tissue_side: usize,
) -> Result<PoolPadPlan, GeometryError> {
    let window = crop_window(geom, tissue_side)?;
    let factor = integer_factor(geom.cell_side_px, window.side, "pooling factor")?;
    PoolPadPlan::new(window, factor, tissue_side)
}

/// Mean-pools a cell-grid field into the cell window of the tissue grid; zero elsewhere.
pub fn downsample_and_pad(
    cell_map: &ScalarField,
    geom: &PatchGeometry,
    tissue_store_side_px: usize,
) -> Result<ScalarField, GeometryError> {
    if cell_map.side() != Some(geom.cell_side_px) {
        return Err(GeometryError::FieldSize {
            expected: geom.cell_side_px,
            actual: cell_map.shape(),
        });
    }
    Ok(downsample_and_pad_plan(geom, tissue_store_side_px)?.apply(cell_map))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn inside(p: Point, side: usize) -> bool {
    p.x >= 0.0 && p.y >= 0.0 && p.x < side as f64 && p.y < side as f64
}

/// Maps a cell-grid point into stored tissue pixels: `t = window_origin + p / factor`.
pub fn cell_to_tissue_point(
    p: Point,
    geom: &PatchGeometry,
    tissue_store_side_px: usize,
) -> Result<Point, GeometryError> {
    if !inside(p, geom.cell_side_px) {
        return Err(GeometryError::PointOutside {
            x: p.x,
            y: p.y,
            grid: "cell",
        });
    }
    let w = crop_window(geom, tissue_store_side_px)?;
    let scale = w.side as f64 / geom.cell_side_px as f64;
    let t = Point::new(w.left as f64 + p.x * scale, w.top as f64 + p.y * scale);
    if !inside(t, tissue_store_side_px) {
        return Err(GeometryError::PointOutside {
            x: t.x,
            y: t.y,
            grid: "tissue",
        });
    }
    Ok(t)
}

/// Inverse of [`cell_to_tissue_point`]. Tissue points off the cell patch are flagged.
pub fn tissue_to_cell_point(
    t: Point,
    geom: &PatchGeometry,
    tissue_store_side_px: usize,
) -> Result<Point, GeometryError> {
    if !inside(t, tissue_store_side_px) {
        return Err(GeometryError::PointOutside {
            x: t.x,
            y: t.y,
            grid: "tissue",
        });
    }
    let w = crop_window(geom, tissue_store_side_px)?;
    let scale = geom.cell_side_px as f64 / w.side as f64;
    let p = Point::new(
        (t.x - w.left as f64) * scale,
        (t.y - w.top as f64) * scale,
    );
    if !inside(p, geom.cell_side_px) {
        return Err(GeometryError::PointOutside {
            x: p.x,
            y: p.y,
            grid: "cell",
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered() -> PatchGeometry {
        PatchGeometry::default()
    }

    #[test]
    fn default_geometry_window() {
        let w = crop_window(&centered(), 1024).unwrap();
        assert_eq!(w, WindowRect { top: 384, left: 384, side: 256 });
        assert_eq!(centered().tissue_store_side_px().unwrap(), 1024);
    }

    #[test]
    fn boundary_windows() {
        let g = centered().with_center(0.125, 0.125);
        assert_eq!(crop_window(&g, 1024).unwrap(), WindowRect { top: 0, left: 0, side: 256 });
        let g = centered().with_center(0.875, 0.5);
        assert_eq!(crop_window(&g, 1024).unwrap(), WindowRect { top: 384, left: 768, side: 256 });
    }

    #[test]
    fn rejects_non_divisible_side() {
        let err = crop_window(&centered(), 1023).unwrap_err();
        assert!(matches!(err, GeometryError::Incompatible(_)));
        assert!(err.to_string().contains("incompatible geometry"));
    }

    #[test]
    fn rejects_cell_outside_tissue() {
        let g = centered().with_center(0.05, 0.5);
        let err = crop_window(&g, 1024).unwrap_err();
        assert!(err.to_string().contains("cell patch outside tissue patch"));
        assert!(PatchGeometry::new(0.2, 1024, 4, 4, 0.9, 0.5).is_err());
    }

    #[test]
    fn rejects_zero_parameters() {
        assert!(PatchGeometry::new(0.2, 0, 4, 4, 0.5, 0.5).is_err());
        assert!(PatchGeometry::new(0.2, 1024, 0, 4, 0.5, 0.5).is_err());
        assert!(PatchGeometry::new(-1.0, 1024, 4, 4, 0.5, 0.5).is_err());
    }

    #[test]
    fn nearest_block_replication() {
        // Tissue side 8, fov ratio 4 -> window 2; cell side 8 -> factor 4.
        let g = PatchGeometry::new(0.2, 8, 4, 4, 0.5, 0.5).unwrap();
        let mut map = ScalarField::zeros(1, 8, 8);
        let w = crop_window(&g, 8).unwrap();
        assert_eq!(w, WindowRect { top: 3, left: 3, side: 2 });
        map.set(0, 3, 3, 1.0);
        map.set(0, 3, 4, 2.0);
        map.set(0, 4, 3, 3.0);
        map.set(0, 4, 4, 4.0);
        let up = crop_and_upsample(&map, FieldKind::Continuous, &g, ResampleMode::Nearest).unwrap();
        assert_eq!(up.shape(), (1, 8, 8));
        for y in 0..8 {
            for x in 0..8 {
                let expect = 1.0 + (y / 4 * 2 + x / 4) as f64;
                assert_eq!(up.get(0, y, x), expect);
            }
        }
    }

    #[test]
    fn constant_field_stays_constant() {
        let g = PatchGeometry::new(0.2, 64, 4, 4, 0.375, 0.625).unwrap();
        let map = ScalarField::filled(2, 64, 64, 0.7);
        for mode in [ResampleMode::Nearest, ResampleMode::Bilinear] {
            let up = crop_and_upsample(&map, FieldKind::Continuous, &g, mode).unwrap();
            assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
            assert_eq!(up.channels(), 2);
        }
    }

    #[test]
    fn labels_require_nearest() {
        let g = PatchGeometry::new(0.2, 64, 4, 4, 0.5, 0.5).unwrap();
        let map = ScalarField::zeros(3, 64, 64);
        let err = crop_and_upsample(&map, FieldKind::Labels, &g, ResampleMode::Bilinear).unwrap_err();
        assert_eq!(err, GeometryError::LabelsRequireNearest);
        assert!(crop_and_upsample(&map, FieldKind::Labels, &g, ResampleMode::Nearest).is_ok());
    }

    #[test]
    fn downsample_and_pad_ones() {
        let g = PatchGeometry::new(0.2, 64, 4, 4, 0.5, 0.5).unwrap();
        let out = downsample_and_pad(&ScalarField::filled(1, 64, 64, 1.0), &g, 64).unwrap();
        let w = crop_window(&g, 64).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let expect = if w.contains(y, x) { 1.0 } else { 0.0 };
                assert_eq!(out.get(0, y, x), expect);
            }
        }
    }

    #[test]
    fn pooled_block_mean() {
        // Cell side 4, tissue side 8, fov ratio 4 -> window 2, factor 2.
        let g = PatchGeometry::new(0.2, 4, 4, 2, 0.5, 0.5).unwrap();
        let mut m = ScalarField::zeros(1, 4, 4);
        m.set(0, 1, 1, 4.0);
        let out = downsample_and_pad(&m, &g, 8).unwrap();
        let w = crop_window(&g, 8).unwrap();
        assert_eq!(out.get(0, w.top, w.left), 1.0);
        assert_eq!(out.sum(), 1.0);
    }

    #[test]
    fn downsample_rejects_wrong_cell_side() {
        let g = PatchGeometry::new(0.2, 64, 4, 4, 0.5, 0.5).unwrap();
        assert!(downsample_and_pad(&ScalarField::zeros(1, 32, 32), &g, 64).is_err());
        // 60 px tissue side: window 15 does not divide 64.
        assert!(downsample_and_pad(&ScalarField::zeros(1, 64, 64), &g, 60).is_err());
    }

    #[test]
    fn point_examples() {
        let g = centered();
        let t = cell_to_tissue_point(Point::new(512.0, 512.0), &g, 1024).unwrap();
        assert_eq!(t, Point::new(512.0, 512.0));
        let t = cell_to_tissue_point(Point::new(0.0, 0.0), &g, 1024).unwrap();
        assert_eq!(t, Point::new(384.0, 384.0));
        let back = tissue_to_cell_point(Point::new(384.0, 384.0), &g, 1024).unwrap();
        assert_eq!(back, Point::new(0.0, 0.0));
    }

    #[test]
    fn points_outside_are_flagged() {
        let g = centered();
        assert!(cell_to_tissue_point(Point::new(-1.0, 3.0), &g, 1024).is_err());
        assert!(cell_to_tissue_point(Point::new(1024.0, 3.0), &g, 1024).is_err());
        let err = tissue_to_cell_point(Point::new(10.0, 10.0), &g, 1024).unwrap_err();
        assert!(matches!(err, GeometryError::PointOutside { grid: "cell", .. }));
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let g = PatchGeometry::new(0.2, 16, 4, 4, 0.375, 0.625).unwrap();
        let plan = crop_and_upsample_plan(&g, 16, ResampleMode::Bilinear).unwrap();
        let x = ScalarField::from_fn(2, 16, 16, |c, y, x| ((c * 7 + y * 3 + x) % 11) as f64 - 5.0);
        let u = ScalarField::from_fn(2, 16, 16, |c, y, x| ((c + y * 5 + x * 2) % 7) as f64 * 0.3);
        let ax = plan.apply(&x);
        let atu = plan.apply_adjoint(&u);
        let lhs: f64 = ax.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(atu.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);

        let pp = downsample_and_pad_plan(&g, 16).unwrap();
        let y = pp.apply(&u);
        let v = ScalarField::from_fn(2, 16, 16, |c, yy, xx| (c + yy + xx) as f64);
        let lhs: f64 = y.data().iter().zip(v.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.data().iter().zip(pp.apply_adjoint(&v).data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
