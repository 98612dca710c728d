//! Dataset manifests, validation, WSI-level splitting and TIGER-style pairing.
//!
//! A dataset root holds `manifest.json` plus the files it references by
//! relative path:
//!
//! ```json
//! { "version": 1,
//!   "records": [{
//!     "pair_id": "p001", "wsi_id": "w01", "organ": "kidney", "subset": "train",
//!     "geometry": { "mpp_cell": 0.2, "cell_side_px": 1024, "fov_ratio": 4,
//!                   "tissue_store_downsample": 4, "c_x": 0.41, "c_y": 0.63 },
//!     "cell_image": "cell/p001.png", "tissue_image": "tissue/p001.png",
//!     "cell_annotations": "annotations/p001.csv", "tissue_mask": "masks/p001.png" }] }
//! ```
//!
//! Images are 8-bit RGB PNGs; masks are 8-bit single-channel PNGs with codes
//! BG=1, CA=2, UNK=255; annotations are `x,y,class` CSV files.

pub mod images;
pub mod split;
pub mod tiger;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::geometry::PatchGeometry;
use crate::labels::{self, CellPoint, NUM_CELL_CLASSES};
use crate::tissue::TissueMask;

pub use split::{apply_split, split_wsis, SplitAssignment};
pub use tiger::{pair_overlapping, pair_roi_in_region, ClassRemap, PairPlacement, Rect, RoiSpec};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Val, Subset::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Subset::Train),
            "val" => Ok(Subset::Val),
            "test" => Ok(Subset::Test),
            other => Err(format!("unknown subset {other:?}")),
        }
    }
}

/// One manifest entry as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub pair_id: String,
    pub wsi_id: String,
    pub organ: String,
    pub subset: Subset,
    pub geometry: PatchGeometry,
    pub cell_image: PathBuf,
    pub tissue_image: PathBuf,
    pub cell_annotations: PathBuf,
    pub tissue_mask: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub records: Vec<ManifestEntry>,
}

/// A validated dataset sample with its cell annotations loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPairRecord {
    pub pair_id: String,
    pub wsi_id: String,
    pub organ: String,
    pub subset: Subset,
    pub geometry: PatchGeometry,
    pub cell_image_path: PathBuf,
    pub tissue_image_path: PathBuf,
    pub cell_annotations_path: PathBuf,
    pub tissue_mask_path: PathBuf,
    pub cell_points: Vec<CellPoint>,
}

impl PatchPairRecord {
    fn entry(&self) -> ManifestEntry {
        ManifestEntry {
            pair_id: self.pair_id.clone(),
            wsi_id: self.wsi_id.clone(),
            organ: self.organ.clone(),
            subset: self.subset,
            geometry: self.geometry,
            cell_image: self.cell_image_path.clone(),
            tissue_image: self.tissue_image_path.clone(),
            cell_annotations: self.cell_annotations_path.clone(),
            tissue_mask: self.tissue_mask_path.clone(),
        }
    }
}

/// Cell points and tissue mask of one pair, ready for statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAnnotation {
    pub pair_id: String,
    pub organ: String,
    pub geometry: PatchGeometry,
    pub cell_points: Vec<CellPoint>,
    pub tissue_mask: TissueMask,
}

pub fn read_manifest(root: &Path) -> Result<Manifest, DataError> {
    let text = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
    Ok(serde_json::from_str(&text)?)
}

/// Parses and fully validates a dataset; every violation is reported at once.
pub fn load_dataset(root: &Path) -> Result<Vec<PatchPairRecord>, DataError> {
    let manifest = read_manifest(root)?;
    let mut problems = Vec::new();
    if manifest.version != MANIFEST_VERSION {
        problems.push(format!("unsupported manifest version {}", manifest.version));
    }

    let mut seen = HashSet::new();
    let mut wsi_subset: HashMap<&str, Subset> = HashMap::new();
    let mut records = Vec::new();
    for e in &manifest.records {
        let id = &e.pair_id;
        if !seen.insert(id.as_str()) {
            problems.push(format!("{id}: duplicate pair_id"));
        }
        match wsi_subset.get(e.wsi_id.as_str()) {
            Some(&s) if s != e.subset => problems.push(format!(
                "{id}: wsi {} appears in both {s} and {}",
                e.wsi_id, e.subset
            )),
            _ => {
                wsi_subset.insert(&e.wsi_id, e.subset);
            }
        }

        if let Err(err) = e.geometry.validate() {
            problems.push(format!("{id}: {err}"));
        }
        let store_side = match e.geometry.tissue_store_side_px() {
            Ok(s) => Some(s),
            Err(err) => {
                problems.push(format!("{id}: {err}"));
                None
            }
        };

        let check_image = |rel: &Path, expected: Option<usize>, what: &str, problems: &mut Vec<String>| {
            let path = root.join(rel);
            if !path.is_file() {
                problems.push(format!("{id}: missing {what} {}", rel.display()));
                return;
            }
            match (images::dimensions(&path), expected) {
                (Ok((w, h)), Some(side)) if w != side || h != side => problems.push(format!(
                    "{id}: {what} is {w}x{h}, expected {side}x{side}"
                )),
                (Err(err), _) => problems.push(format!("{id}: unreadable {what}: {err}")),
                _ => {}
            }
        };
        check_image(&e.cell_image, Some(e.geometry.cell_side_px), "cell image", &mut problems);
        check_image(&e.tissue_image, store_side, "tissue image", &mut problems);
        check_image(&e.tissue_mask, store_side, "tissue mask", &mut problems);

        let ann = root.join(&e.cell_annotations);
        let points = if ann.is_file() {
            match labels::read_points_file(&ann) {
                Ok(points) => points,
                Err(err) => {
                    problems.push(format!("{id}: bad annotations: {err}"));
                    Vec::new()
                }
            }
        } else {
            problems.push(format!("{id}: missing cell annotations {}", e.cell_annotations.display()));
            Vec::new()
        };
        let side = e.geometry.cell_side_px as f64;
        for (i, p) in points.iter().enumerate() {
            if !(p.x >= 0.0 && p.y >= 0.0 && p.x < side && p.y < side) {
                problems.push(format!("{id}: point {i} at ({}, {}) outside cell patch", p.x, p.y));
            }
            if p.class_id == 0 || p.class_id as usize > NUM_CELL_CLASSES {
                problems.push(format!("{id}: point {i} has unknown class {}", p.class_id));
            }
        }

        records.push(PatchPairRecord {
            pair_id: e.pair_id.clone(),
            wsi_id: e.wsi_id.clone(),
            organ: e.organ.clone(),
            subset: e.subset,
            geometry: e.geometry,
            cell_image_path: e.cell_image.clone(),
            tissue_image_path: e.tissue_image.clone(),
            cell_annotations_path: e.cell_annotations.clone(),
            tissue_mask_path: e.tissue_mask.clone(),
            cell_points: points,
        });
    }
    if problems.is_empty() {
        Ok(records)
    } else {
        Err(DataError::Validation(problems))
    }
}

/// Writes the manifest and every record's annotation CSV. Images and masks
/// are expected to already exist at their recorded paths.
pub fn save_dataset(root: &Path, records: &[PatchPairRecord]) -> Result<(), DataError> {
    std::fs::create_dir_all(root)?;
    for r in records {
        let path = root.join(&r.cell_annotations_path);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        labels::write_points_csv(std::fs::File::create(path)?, &r.cell_points)?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        records: records.iter().map(PatchPairRecord::entry).collect(),
    };
    std::fs::write(root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_annotation(root: &Path, record: &PatchPairRecord) -> Result<PairAnnotation, DataError> {
    Ok(PairAnnotation {
        pair_id: record.pair_id.clone(),
        organ: record.organ.clone(),
        geometry: record.geometry,
        cell_points: record.cell_points.clone(),
        tissue_mask: images::read_tissue_mask(&root.join(&record.tissue_mask_path))?,
    })
}

/// Number of WSIs and pairs per organ and subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub organs: BTreeMap<String, BTreeMap<Subset, SubsetCount>>,
    pub totals: BTreeMap<Subset, SubsetCount>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetCount {
    pub wsis: usize,
    pub pairs: usize,
}

pub fn dataset_summary(records: &[PatchPairRecord]) -> DatasetSummary {
    let mut wsis: BTreeMap<(String, Subset), HashSet<&str>> = BTreeMap::new();
    let mut pairs: BTreeMap<(String, Subset), usize> = BTreeMap::new();
    let mut total_wsis: BTreeMap<Subset, HashSet<&str>> = BTreeMap::new();
    for r in records {
        let key = (r.organ.clone(), r.subset);
        wsis.entry(key.clone()).or_default().insert(&r.wsi_id);
        *pairs.entry(key).or_default() += 1;
        total_wsis.entry(r.subset).or_default().insert(&r.wsi_id);
    }
    let mut s = DatasetSummary::default();
    for subset in Subset::ALL {
        s.totals.insert(subset, SubsetCount::default());
    }
    for ((organ, subset), n) in pairs {
        let count = SubsetCount {
            wsis: wsis[&(organ.clone(), subset)].len(),
            pairs: n,
        };
        s.organs.entry(organ).or_default().insert(subset, count);
        s.totals.get_mut(&subset).expect("all subsets present").pairs += n;
    }
    for (subset, set) in total_wsis {
        s.totals.get_mut(&subset).expect("all subsets present").wsis = set.len();
    }
    s
}
