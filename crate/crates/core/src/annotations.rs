//! Per-frame head annotations and ground-truth flow decomposition.
//!
//! Annotation files are CSV lines `frame,id,x,y,w,h[,flags]` where `(x, y)` is
//! the top-left corner of a head box and `id = -1` marks an unidentified
//! (weakly labelled) head. The head point is the box center.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Every head carries a track identity.
    Full,
    /// Heads carry only inflow/outflow flags.
    Weak,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FlowFlags {
    /// Head is absent from the previous frame of its pair.
    pub inflow: bool,
    /// Head is absent from the next frame of its pair.
    pub outflow: bool,
}

impl FlowFlags {
    pub const NONE: FlowFlags = FlowFlags {
        inflow: false,
        outflow: false,
    };

    fn to_column(self) -> &'static str {
        match (self.inflow, self.outflow) {
            (false, false) => "",
            (true, false) => "in",
            (false, true) => "out",
            (true, true) => "inout",
        }
    }

    fn from_column(s: &str) -> Option<Self> {
        Some(match s.trim() {
            "" => FlowFlags::NONE,
            "in" => FlowFlags {
                inflow: true,
                outflow: false,
            },
            "out" => FlowFlags {
                inflow: false,
                outflow: true,
            },
            "inout" => FlowFlags {
                inflow: true,
                outflow: true,
            },
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadPoint {
    pub x: f64,
    pub y: f64,
    pub track_id: Option<u64>,
    pub flags: FlowFlags,
}

impl HeadPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self {
            x,
            y,
            track_id: None,
            flags: FlowFlags::NONE,
        }
    }

    pub fn with_id(x: f64, y: f64, id: u64) -> Self {
        Self {
            track_id: Some(id),
            ..Self::new(x, y)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAnnotation {
    pub frame_index: usize,
    pub points: Vec<HeadPoint>,
    pub width: u32,
    pub height: u32,
}

impl FrameAnnotation {
    pub fn new(frame_index: usize, width: u32, height: u32, points: Vec<HeadPoint>) -> Self {
        Self {
            frame_index,
            points,
            width,
            height,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = Option<u64>> + '_ {
        self.points.iter().map(|p| p.track_id)
    }

    /// Checks bounds and per-frame id uniqueness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.points {
            if !(0.0..self.width as f64).contains(&p.x) || !(0.0..self.height as f64).contains(&p.y) {
                return Err(Error::Validation(format!(
                    "frame {}: point ({}, {}) outside {}x{}",
                    self.frame_index, p.x, p.y, self.width, self.height
                )));
            }
            if let Some(id) = p.track_id {
                if !seen.insert(id) {
                    return Err(Error::Validation(format!(
                        "frame {}: duplicate track id {id}",
                        self.frame_index
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipAnnotation {
    pub clip_id: String,
    pub frames: Vec<FrameAnnotation>,
    pub fps: f64,
    pub supervision: Supervision,
}

impl ClipAnnotation {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.width)
    }

    pub fn height(&self) -> u32 {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Validation(format!("clip {}: zero frames", self.clip_id)));
        }
        for w in self.frames.windows(2) {
            if w[1].frame_index <= w[0].frame_index {
                return Err(Error::Validation(format!(
                    "clip {}: frame indices not strictly increasing ({} then {})",
                    self.clip_id, w[0].frame_index, w[1].frame_index
                )));
            }
        }
        for f in &self.frames {
            f.validate()?;
            if self.supervision == Supervision::Full && f.points.iter().any(|p| p.track_id.is_none()) {
                return Err(Error::Validation(format!(
                    "clip {}: frame {} has unidentified heads in a FULL clip",
                    self.clip_id, f.frame_index
                )));
            }
        }
        Ok(())
    }

    /// Number of distinct identities across the whole clip.
    pub fn distinct_ids(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| f.ids().flatten())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Result of parsing an annotation file.
#[derive(Debug, Clone)]
pub struct ParsedAnnotation {
    pub clip: ClipAnnotation,
    /// Heads whose centers fell outside the frame and were clamped inside.
    pub clamped: usize,
}

/// Point supports of the shared, outflow and inflow maps for a frame pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowDecomposition {
    pub shared_a: Vec<HeadPoint>,
    pub shared_b: Vec<HeadPoint>,
    pub outflow: Vec<HeadPoint>,
    pub inflow: Vec<HeadPoint>,
}

impl FlowDecomposition {
    pub fn is_balanced(&self) -> bool {
        self.shared_a.len() == self.shared_b.len()
    }

    /// Role swap used when the pair order is reversed.
    pub fn swapped(&self) -> Self {
        Self {
            shared_a: self.shared_b.clone(),
            shared_b: self.shared_a.clone(),
            outflow: self.inflow.clone(),
            inflow: self.outflow.clone(),
        }
    }

    /// Coordinates of each component sorted lexicographically, ignoring ids
    /// and flags. Two decompositions of the same pair obtained from different
    /// label sources compare equal through this view.
    pub fn canonical(&self) -> [Vec<(f64, f64)>; 4] {
        let coords = |pts: &[HeadPoint]| {
            let mut v: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
            v
        };
        [
            coords(&self.shared_a),
            coords(&self.shared_b),
            coords(&self.outflow),
            coords(&self.inflow),
        ]
    }
}

pub fn parse_annotation_file(
    path: impl AsRef<Path>,
    width: u32,
    height: u32,
    fps: f64,
) -> Result<ParsedAnnotation> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotation_str(&text, &clip_id, width, height, fps)
}

pub fn parse_annotation_str(
    text: &str,
    clip_id: &str,
    width: u32,
    height: u32,
    fps: f64,
) -> Result<ParsedAnnotation> {
    if width == 0 || height == 0 {
        return Err(Error::Parameter(format!("frame size must be positive, got {width}x{height}")));
    }
    if !(fps > 0.0) {
        return Err(Error::Parameter(format!("fps must be positive, got {fps}")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut by_frame: BTreeMap<usize, Vec<HeadPoint>> = BTreeMap::new();
    let mut seen: HashSet<(usize, u64)> = HashSet::new();
    let mut clamped = 0;
    let mut weak = false;

    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 6 && record.len() != 7 {
            return Err(Error::Parse {
                line,
                message: format!("expected 6 or 7 fields, found {}", record.len()),
            });
        }
        let field = |k: usize, name: &str| -> Result<f64> {
            record[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("bad {name} {:?}", &record[k]),
                })
        };
        let frame: usize = record[0].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad frame {:?}", &record[0]),
        })?;
        let id: i64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad id {:?}", &record[1]),
        })?;
        let (bx, by, bw, bh) = (field(2, "x")?, field(3, "y")?, field(4, "w")?, field(5, "h")?);
        let flags = match record.get(6) {
            Some(s) => FlowFlags::from_column(s).ok_or_else(|| Error::Parse {
                line,
                message: format!("bad flags {s:?} (expected \"\", \"in\", \"out\" or \"inout\")"),
            })?,
            None => FlowFlags::NONE,
        };
        let track_id = match id {
            -1 => {
                weak = true;
                None
            }
            id if id >= 0 => Some(id as u64),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("id must be >= 0 or -1, got {id}"),
                })
            }
        };
        if let Some(id) = track_id {
            if !seen.insert((frame, id)) {
                return Err(Error::Validation(format!(
                    "line {line}: duplicate (frame {frame}, id {id})"
                )));
            }
        }
        let (cx, cy) = (bx + bw / 2.0, by + bh / 2.0);
        let x = clamp_coord(cx, width);
        let y = clamp_coord(cy, height);
        if x != cx || y != cy {
            clamped += 1;
        }
        by_frame.entry(frame).or_default().push(HeadPoint {
            x,
            y,
            track_id,
            flags,
        });
    }

    let Some((&last, _)) = by_frame.iter().next_back() else {
        return Err(Error::Validation(format!("clip {clip_id}: zero frames")));
    };
    // Frames without boxes are still frames; fill the index range densely.
    let frames = (0..=last)
        .map(|idx| FrameAnnotation::new(idx, width, height, by_frame.remove(&idx).unwrap_or_default()))
        .collect();
    let clip = ClipAnnotation {
        clip_id: clip_id.to_string(),
        frames,
        fps,
        supervision: if weak { Supervision::Weak } else { Supervision::Full },
    };
    Ok(ParsedAnnotation { clip, clamped })
}

fn clamp_coord(v: f64, extent: u32) -> f64 {
    if v < 0.0 {
        0.0
    } else if v >= extent as f64 {
        (extent - 1) as f64
    } else {
        v
    }
}

/// Serializes a clip to the CSV format. Boxes are written as `box_size`
/// squares centered on the head point; `box_size = 0` reproduces points
/// exactly on re-parse.
pub fn write_annotation_csv(clip: &ClipAnnotation, box_size: f64) -> String {
    let with_flags = clip.supervision == Supervision::Weak
        || clip
            .frames
            .iter()
            .any(|f| f.points.iter().any(|p| p.flags != FlowFlags::NONE));
    let half = box_size / 2.0;
    let mut out = String::new();
    for f in &clip.frames {
        for p in &f.points {
            let id = p.track_id.map_or(-1, |id| id as i64);
            write!(
                out,
                "{},{},{},{},{},{}",
                f.frame_index,
                id,
                p.x - half,
                p.y - half,
                box_size,
                box_size
            )
            .unwrap();
            if with_flags {
                write!(out, ",{}", p.flags.to_column()).unwrap();
            }
            out.push('\n');
        }
    }
    out
}

/// Ground-truth decomposition from track identities.
pub fn derive_flow(frame_a: &FrameAnnotation, frame_b: &FrameAnnotation) -> Result<FlowDecomposition> {
    let index = |f: &FrameAnnotation| -> Result<BTreeMap<u64, HeadPoint>> {
        f.points
            .iter()
            .map(|p| {
                p.track_id.map(|id| (id, p.clone())).ok_or_else(|| {
                    Error::Supervision(format!(
                        "frame {} has a head without track id; use derive_flow_weak for weak labels",
                        f.frame_index
                    ))
                })
            })
            .collect()
    };
    let a = index(frame_a)?;
    let b = index(frame_b)?;
    let mut flow = FlowDecomposition::default();
    for (id, p) in &a {
        match b.get(id) {
            Some(q) => {
                flow.shared_a.push(p.clone());
                flow.shared_b.push(q.clone());
            }
            None => flow.outflow.push(p.clone()),
        }
    }
    flow.inflow = b
        .iter()
        .filter(|(id, _)| !a.contains_key(id))
        .map(|(_, q)| q.clone())
        .collect();
    Ok(flow)
}

/// Decomposition from inflow/outflow flags alone.
pub fn derive_flow_weak(frame_a: &FrameAnnotation, frame_b: &FrameAnnotation) -> FlowDecomposition {
    let (outflow, shared_a): (Vec<_>, Vec<_>) =
        frame_a.points.iter().cloned().partition(|p| p.flags.outflow);
    let (inflow, shared_b): (Vec<_>, Vec<_>) =
        frame_b.points.iter().cloned().partition(|p| p.flags.inflow);
    let flow = FlowDecomposition {
        shared_a,
        shared_b,
        outflow,
        inflow,
    };
    if !flow.is_balanced() {
        log::warn!(
            "weak labels inconsistent for frames {} -> {}: {} shared heads vs {}",
            frame_a.frame_index,
            frame_b.frame_index,
            flow.shared_a.len(),
            flow.shared_b.len()
        );
    }
    flow
}

/// Decomposition using whichever label source the clip provides.
pub fn derive_flow_for(
    supervision: Supervision,
    frame_a: &FrameAnnotation,
    frame_b: &FrameAnnotation,
) -> Result<FlowDecomposition> {
    match supervision {
        Supervision::Full => derive_flow(frame_a, frame_b),
        Supervision::Weak => Ok(derive_flow_weak(frame_a, frame_b)),
    }
}

/// Exact unique count: heads in frame 0 plus inflow over every complete
/// stride `(k-1)δ -> kδ`. A track that leaves the sampled view and returns is
/// counted again, matching the inflow accumulation used at inference.
pub fn count_unique(clip: &ClipAnnotation, stride: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if clip.supervision != Supervision::Full {
        return Err(Error::Supervision(format!(
            "count_unique needs track ids; clip {} is weakly labelled",
            clip.clip_id
        )));
    }
    let first = clip
        .frames
        .first()
        .ok_or_else(|| Error::Validation(format!("clip {}: zero frames", clip.clip_id)))?;
    let mut total = first.points.len();
    for k in 1..=(clip.frames.len() - 1) / stride {
        let flow = derive_flow(&clip.frames[(k - 1) * stride], &clip.frames[k * stride])?;
        total += flow.inflow.len();
    }
    Ok(total)
}

/// Dataset manifest describing one clip on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// Directory of frame images, relative to the manifest when not absolute.
    pub frames_dir: PathBuf,
    pub annotation_csv: PathBuf,
    /// Total number of frames; trailing frames without heads are otherwise
    /// invisible in the CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_frames: Option<usize>,
}

impl ClipManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: ClipManifest = serde_json::from_str(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Parses the referenced CSV and pads the clip to `n_frames` if given.
    pub fn load_annotation(&self, base: &Path) -> Result<ParsedAnnotation> {
        let csv = Self::resolve(base, &self.annotation_csv);
        let mut parsed = parse_annotation_file(&csv, self.width, self.height, self.fps)?;
        parsed.clip.clip_id = self.clip_id.clone();
        if let Some(n) = self.n_frames {
            let frames = &mut parsed.clip.frames;
            if frames.len() > n {
                return Err(Error::Validation(format!(
                    "clip {}: annotations reference frame {} but manifest declares {n} frames",
                    self.clip_id,
                    frames.len() - 1
                )));
            }
            while frames.len() < n {
                frames.push(FrameAnnotation::new(frames.len(), self.width, self.height, Vec::new()));
            }
        }
        Ok(parsed)
    }
}

/// Marks every head with inflow/outflow flags relative to the frames
/// `stride` before and after it, then erases identities.
pub(crate) fn flags_from_ids(clip: &ClipAnnotation, stride: usize) -> Result<Vec<Vec<FlowFlags>>> {
    let n = clip.frames.len();
    let id_sets: Vec<HashMap<u64, usize>> = clip
        .frames
        .iter()
        .map(|f| {
            f.points
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    p.track_id.map(|id| (id, i)).ok_or_else(|| {
                        Error::Supervision(format!("frame {} lacks track ids", f.frame_index))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|j| {
            clip.frames[j]
                .points
                .iter()
                .map(|p| {
                    let id = p.track_id.expect("checked above");
                    FlowFlags {
                        inflow: j >= stride && !id_sets[j - stride].contains_key(&id),
                        outflow: j + stride < n && !id_sets[j + stride].contains_key(&id),
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(idx: usize, ids: &[u64]) -> FrameAnnotation {
        FrameAnnotation::new(
            idx,
            100,
            100,
            ids.iter().map(|&id| HeadPoint::with_id(id as f64, 2.0 * id as f64, id)).collect(),
        )
    }

    #[test]
    fn parse_centers_boxes() {
        let parsed = parse_annotation_str("0,1,10,10,4,4\n0,2,20,20,4,4\n", "c", 100, 100, 25.0).unwrap();
        let clip = &parsed.clip;
        assert_eq!(clip.frames.len(), 1);
        assert_eq!(clip.supervision, Supervision::Full);
        let pts: Vec<_> = clip.frames[0].points.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(pts, vec![(12.0, 12.0), (22.0, 22.0)]);
        assert_eq!(parsed.clamped, 0);
    }

    #[test]
    fn parse_empty_is_validation_error() {
        let err = parse_annotation_str("", "c", 100, 100, 25.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn parse_clamps_out_of_frame_centers() {
        let parsed = parse_annotation_str("0,1,-6,10,4,4\n", "c", 100, 100, 25.0).unwrap();
        let p = &parsed.clip.frames[0].points[0];
        assert_eq!((p.x, p.y), (0.0, 12.0));
        assert_eq!(parsed.clamped, 1);

        let parsed = parse_annotation_str("0,1,98,200,4,4\n", "c", 100, 100, 25.0).unwrap();
        let p = &parsed.clip.frames[0].points[0];
        assert_eq!((p.x, p.y), (99.0, 99.0));
    }

    #[test]
    fn parse_reports_malformed_line_number() {
        let err = parse_annotation_str("0,1,1,1,1,1\n0,2,abc,1,1,1\n", "c", 10, 10, 1.0).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        let err = parse_annotation_str("0,1,1,1\n", "c", 10, 10, 1.0).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn parse_rejects_duplicate_frame_id() {
        let err = parse_annotation_str("0,1,1,1,1,1\n0,1,5,5,1,1\n", "c", 10, 10, 1.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn parse_weak_ids_and_flags() {
        let text = "0,-1,1,1,2,2,out\n0,-1,5,5,2,2,\n1,-1,3,3,2,2,in\n";
        let clip = parse_annotation_str(text, "w", 10, 10, 1.0).unwrap().clip;
        assert_eq!(clip.supervision, Supervision::Weak);
        assert!(clip.frames[0].points[0].flags.outflow);
        assert!(clip.frames[1].points[0].flags.inflow);
        assert_eq!(clip.frames[0].points[1].track_id, None);
    }

    #[test]
    fn parse_fills_frame_gaps() {
        let clip = parse_annotation_str("0,1,1,1,0,0\n3,1,2,2,0,0\n", "g", 10, 10, 1.0)
            .unwrap()
            .clip;
        assert_eq!(clip.frames.len(), 4);
        assert!(clip.frames[1].points.is_empty());
        assert_eq!(clip.frames[3].frame_index, 3);
    }

    #[test]
    fn derive_flow_identical_and_disjoint() {
        let flow = derive_flow(&frame(0, &[1, 2, 3]), &frame(1, &[1, 2, 3])).unwrap();
        assert!(flow.outflow.is_empty() && flow.inflow.is_empty());
        assert_eq!(flow.shared_a.len(), 3);

        let flow = derive_flow(&frame(0, &[1, 2]), &frame(1, &[3, 4, 5])).unwrap();
        let ids = |v: &[HeadPoint]| v.iter().map(|p| p.track_id.unwrap()).collect::<Vec<_>>();
        assert_eq!(ids(&flow.outflow), vec![1, 2]);
        assert_eq!(ids(&flow.inflow), vec![3, 4, 5]);
        assert!(flow.shared_a.is_empty() && flow.shared_b.is_empty());
    }

    #[test]
    fn derive_flow_needs_ids() {
        let mut f = frame(0, &[1]);
        f.points[0].track_id = None;
        let err = derive_flow(&f, &frame(1, &[1])).unwrap_err();
        assert!(err.to_string().contains("derive_flow_weak"));
    }

    #[test]
    fn derive_flow_is_antisymmetric() {
        let a = frame(0, &[1, 2, 5, 9]);
        let b = frame(1, &[2, 3, 9, 11]);
        assert_eq!(derive_flow(&a, &b).unwrap().swapped(), derive_flow(&b, &a).unwrap());
    }

    #[test]
    fn weak_flow_flag_cases() {
        let mut a = frame(0, &[1, 2]);
        let mut b = frame(1, &[3]);
        let flow = derive_flow_weak(&a, &b);
        assert!(flow.outflow.is_empty() && flow.inflow.is_empty());
        assert_eq!((flow.shared_a.len(), flow.shared_b.len()), (2, 1));
        assert!(!flow.is_balanced());

        a.points.iter_mut().for_each(|p| p.flags.outflow = true);
        b.points.iter_mut().for_each(|p| p.flags.inflow = true);
        let flow = derive_flow_weak(&a, &b);
        assert!(flow.shared_a.is_empty() && flow.shared_b.is_empty());
        assert_eq!((flow.outflow.len(), flow.inflow.len()), (2, 1));
    }

    #[test]
    fn count_unique_examples() {
        let single = ClipAnnotation {
            clip_id: "s".into(),
            frames: vec![frame(0, &[1, 2, 3, 4, 5, 6, 7])],
            fps: 1.0,
            supervision: Supervision::Full,
        };
        assert_eq!(count_unique(&single, 1).unwrap(), 7);

        let clip = ClipAnnotation {
            clip_id: "c".into(),
            frames: vec![frame(0, &[1, 2]), frame(1, &[2, 3]), frame(2, &[3, 4])],
            fps: 1.0,
            supervision: Supervision::Full,
        };
        assert_eq!(count_unique(&clip, 1).unwrap(), 4);
        // stride beyond the clip leaves only the first frame
        assert_eq!(count_unique(&clip, 3).unwrap(), 2);
        assert_eq!(count_unique(&clip, 2).unwrap(), 2 + 2);
    }

    #[test]
    fn count_unique_counts_reentry_again() {
        let clip = ClipAnnotation {
            clip_id: "r".into(),
            frames: vec![frame(0, &[1]), frame(1, &[]), frame(2, &[1])],
            fps: 1.0,
            supervision: Supervision::Full,
        };
        assert_eq!(count_unique(&clip, 1).unwrap(), 2);
        assert_eq!(clip.distinct_ids(), 1);
    }

    #[test]
    fn csv_round_trip_with_zero_boxes() {
        let text = "0,1,10.25,10,4,4\n0,2,20,20.125,4,4\n1,2,21,20,4,4\n";
        let clip = parse_annotation_str(text, "rt", 100, 100, 25.0).unwrap().clip;
        let again = parse_annotation_str(&write_annotation_csv(&clip, 0.0), "rt", 100, 100, 25.0)
            .unwrap()
            .clip;
        assert_eq!(clip, again);
    }
}
