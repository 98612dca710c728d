//! Point annotations: disk rasterization into segmentation targets, CSV I/O,
//! and the two-annotator consensus merge.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::LabelError;
use crate::field::ScalarField;
use crate::geometry::Point;

/// Tumor cell.
pub const TC: u8 = 1;
/// Background cell.
pub const BC: u8 = 2;
/// Number of cell classes in the default class set ({TC, BC}).
pub const NUM_CELL_CLASSES: usize = 2;

/// One annotated or detected cell in cell-grid pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellPoint {
    pub x: f64,
    pub y: f64,
    pub class_id: u8,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl CellPoint {
    pub fn new(x: f64, y: f64, class_id: u8) -> Self {
        Self {
            x,
            y,
            class_id,
            confidence: 1.0,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = confidence;
        self
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Disk radius in whole pixels: `round(radius_um / mpp)`.
pub fn radius_px(radius_um: f64, mpp: f64) -> usize {
    (radius_um / mpp).round() as usize
}

/// One-hot cell segmentation target: channel 0 is background, channel `k` is class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLabelMap {
    field: ScalarField,
}

impl CellLabelMap {
    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn into_field(self) -> ScalarField {
        self.field
    }

    pub fn side(&self) -> usize {
        self.field.height()
    }

    /// Class index per pixel (0 = background), row-major.
    pub fn class_plane(&self) -> Vec<usize> {
        let (h, w) = (self.field.height(), self.field.width());
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                out.push(self.field.argmax_at(y, x));
            }
        }
        out
    }

    pub fn count(&self, class: usize) -> usize {
        self.field.plane(class).iter().filter(|&&v| v == 1.0).count()
    }
}

/// Draws a disk of radius `round(radius_um / mpp)` around every point.
///
/// A pixel `(col, row)` is inside a disk when its integer centre lies within
/// the radius. Overlaps go to the nearest centre, ties to the lower point index.
pub fn rasterize_points(
    points: &[CellPoint],
    side_px: usize,
    num_classes: usize,
    radius_um: f64,
    mpp: f64,
) -> Result<CellLabelMap, LabelError> {
    if !(radius_um > 0.0 && radius_um.is_finite()) {
        return Err(LabelError::InvalidRadius(radius_um));
    }
    if !(mpp > 0.0 && mpp.is_finite()) {
        return Err(LabelError::InvalidRadius(mpp));
    }
    rasterize_points_px(points, side_px, num_classes, radius_px(radius_um, mpp))
}

/// Same as [`rasterize_points`] with the radius already in pixels.
pub fn rasterize_points_px(
    points: &[CellPoint],
    side_px: usize,
    num_classes: usize,
    radius: usize,
) -> Result<CellLabelMap, LabelError> {
    for (index, p) in points.iter().enumerate() {
        let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < side_px as f64 && p.y < side_px as f64;
        if !inside || !p.x.is_finite() || !p.y.is_finite() {
            return Err(LabelError::PointOutsideGrid {
                index,
                x: p.x,
                y: p.y,
                side: side_px,
            });
        }
        if p.class_id == 0 || p.class_id as usize > num_classes {
            return Err(LabelError::UnknownClass {
                index,
                class_id: p.class_id,
                num_classes,
            });
        }
    }

    let n = side_px * side_px;
    let mut owner_d2 = vec![f64::INFINITY; n];
    let mut owner_class = vec![0usize; n];
    let r = radius as f64;
    let r2 = r * r;
    for p in points {
        let y0 = (p.y - r).ceil().max(0.0) as usize;
        let y1 = ((p.y + r).floor() as usize).min(side_px - 1);
        let x0 = (p.x - r).ceil().max(0.0) as usize;
        let x1 = ((p.x + r).floor() as usize).min(side_px - 1);
        for y in y0..=y1 {
            let dy = y as f64 - p.y;
            for x in x0..=x1 {
                let dx = x as f64 - p.x;
                let d2 = dx * dx + dy * dy;
                let i = y * side_px + x;
                // Strict comparison keeps the earlier point on exact ties.
                if d2 <= r2 && d2 < owner_d2[i] {
                    owner_d2[i] = d2;
                    owner_class[i] = p.class_id as usize;
                }
            }
        }
    }
    let field = ScalarField::one_hot(&owner_class, side_px, side_px, num_classes + 1)
        .expect("class ids validated above");
    Ok(CellLabelMap { field })
}

/// Outcome of merging two independent annotations of the same patch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    /// Same-class matches, placed at the midpoint of the two annotations.
    pub agreed: Vec<CellPoint>,
    pub class_conflicts: Vec<ClassConflict>,
    pub only_a: Vec<CellPoint>,
    pub only_b: Vec<CellPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConflict {
    pub a: CellPoint,
    pub b: CellPoint,
}

/// Greedy nearest-pair matching within `match_radius_px`; each point is used at most once.
///
/// Pairs are taken in ascending distance, ties by index in `set_a` then `set_b`.
pub fn merge_annotations(
    set_a: &[CellPoint],
    set_b: &[CellPoint],
    match_radius_px: f64,
) -> ConsensusReport {
    let mut pairs = Vec::new();
    for (i, a) in set_a.iter().enumerate() {
        for (j, b) in set_b.iter().enumerate() {
            let d = a.point().distance(&b.point());
            if d <= match_radius_px {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));

    let mut used_a = vec![false; set_a.len()];
    let mut used_b = vec![false; set_b.len()];
    let mut report = ConsensusReport::default();
    for (_, i, j) in pairs {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        let (a, b) = (set_a[i], set_b[j]);
        if a.class_id == b.class_id {
            report.agreed.push(CellPoint {
                x: 0.5 * (a.x + b.x),
                y: 0.5 * (a.y + b.y),
                class_id: a.class_id,
                confidence: 1.0,
            });
        } else {
            report.class_conflicts.push(ClassConflict { a, b });
        }
    }
    report.only_a = set_a
        .iter()
        .zip(&used_a)
        .filter(|(_, &u)| !u)
        .map(|(p, _)| *p)
        .collect();
    report.only_b = set_b
        .iter()
        .zip(&used_b)
        .filter(|(_, &u)| !u)
        .map(|(p, _)| *p)
        .collect();
    report
}

#[derive(Debug, Deserialize)]
struct PointRow {
    x: f64,
    y: f64,
    class: u8,
    confidence: Option<f64>,
}

/// Reads `x,y,class` (optionally `,confidence`) rows.
pub fn read_points_csv<R: Read>(reader: R) -> Result<Vec<CellPoint>, LabelError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.deserialize::<PointRow>().enumerate() {
        let rec = rec?;
        if !rec.x.is_finite() || !rec.y.is_finite() {
            return Err(LabelError::BadRow {
                row,
                reason: "non-finite coordinate".into(),
            });
        }
        let confidence = rec.confidence.unwrap_or(1.0);
        if !(0.0..=1.0).contains(&confidence) {
            return Err(LabelError::BadRow {
                row,
                reason: format!("confidence {confidence} outside [0, 1]"),
            });
        }
        out.push(CellPoint {
            x: rec.x,
            y: rec.y,
            class_id: rec.class,
            confidence,
        });
    }
    Ok(out)
}

pub fn read_points_file(path: &Path) -> Result<Vec<CellPoint>, LabelError> {
    read_points_csv(std::fs::File::open(path)?)
}

/// Writes annotations as `x,y,class`.
pub fn write_points_csv<W: Write>(writer: W, points: &[CellPoint]) -> Result<(), LabelError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "class"])?;
    for p in points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.class_id.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes detections as `x,y,class,confidence`.
pub fn write_detections_csv<W: Write>(writer: W, points: &[CellPoint]) -> Result<(), LabelError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "y", "class", "confidence"])?;
    for p in points {
        w.write_record([
            p.x.to_string(),
            p.y.to_string(),
            p.class_id.to_string(),
            p.confidence.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
