//! Whole-video counting: first-frame count plus accumulated inflow mass.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{derive_flow_for, ClipAnnotation};
use crate::density::{gt_bundle, rasterize, KernelSpec};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{Model, ModelOutputs};

/// Longest and shortest side limits applied before inference.
pub const DEFAULT_CAP: (usize, usize) = (1920, 1080);

/// Frame rate at which [`DEFAULT_STRIDE`] applies.
pub const REFERENCE_FPS: f64 = 3.0;

/// Midpoint of the training interval range.
pub const DEFAULT_STRIDE: usize = 5;

/// Test stride for a clip recorded at `fps`, scaled from the reference rate.
pub fn default_stride(fps: f64) -> usize {
    if !(fps.is_finite() && fps > 0.0) {
        return DEFAULT_STRIDE;
    }
    ((DEFAULT_STRIDE as f64 * fps / REFERENCE_FPS).round() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountOptions {
    pub stride: usize,
    /// `(long, short)` side limits.
    pub cap: (usize, usize),
    /// Also evaluate a final shorter pair when `stride` does not divide `n - 1`.
    pub tail_pair: bool,
}

impl Default for CountOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            cap: DEFAULT_CAP,
            tail_pair: false,
        }
    }
}

impl CountOptions {
    pub fn with_stride(stride: usize) -> Self {
        Self {
            stride,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub a: usize,
    pub b: usize,
    pub inflow: f64,
    pub outflow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCountResult {
    pub clip_id: String,
    pub total: f64,
    pub first_frame_count: f64,
    pub stride: usize,
    pub pairs: Vec<PairCount>,
}

impl VideoCountResult {
    /// First-frame count plus inflow masses summed in pair order.
    pub fn recomputed_total(&self) -> f64 {
        self.pairs.iter().fold(self.first_frame_count, |acc, p| acc + p.inflow)
    }

    /// Same pairs with a different first-frame count (e.g. the annotated one).
    pub fn with_first_frame_count(mut self, count: f64) -> Self {
        self.first_frame_count = count;
        self.total = self.recomputed_total();
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}

/// Frame pairs `((k-1)δ, kδ)` for `k = 1..=(n-1)/δ`, plus the tail pair if asked.
pub fn pair_indices(n_frames: usize, stride: usize, tail_pair: bool) -> Result<Vec<(usize, usize)>> {
    if stride == 0 {
        return Err(Error::Parameter("stride must be >= 1".into()));
    }
    if n_frames == 0 {
        return Ok(Vec::new());
    }
    let full = (n_frames - 1) / stride;
    let mut pairs: Vec<(usize, usize)> = (1..=full).map(|k| ((k - 1) * stride, k * stride)).collect();
    let last = full * stride;
    if tail_pair && last < n_frames - 1 {
        pairs.push((last, n_frames - 1));
    }
    Ok(pairs)
}

/// Where per-frame counts and per-pair flows come from.
pub trait FlowSource {
    fn n_frames(&self) -> usize;
    fn frame_count(&self, frame: usize) -> Result<f64>;
    /// `(inflow into b, outflow from a)`.
    fn pair_flow(&mut self, a: usize, b: usize) -> Result<(f64, f64)>;
}

/// Accumulates inflow over the stride pairs of any source.
pub fn count_with(source: &mut dyn FlowSource, clip_id: &str, options: &CountOptions) -> Result<VideoCountResult> {
    let n = source.n_frames();
    if n == 0 {
        return Err(Error::Input(format!("clip {clip_id}: no frames to count")));
    }
    let indices = pair_indices(n, options.stride, options.tail_pair)?;
    let first_frame_count = source.frame_count(0)?;
    let mut pairs = Vec::with_capacity(indices.len());
    for (a, b) in indices {
        let (inflow, outflow) = source.pair_flow(a, b)?;
        log::debug!("{clip_id}: pair ({a}, {b}) inflow {inflow:.3} outflow {outflow:.3}");
        pairs.push(PairCount { a, b, inflow, outflow });
    }
    let mut result = VideoCountResult {
        clip_id: clip_id.to_string(),
        total: 0.0,
        first_frame_count,
        stride: options.stride,
        pairs,
    };
    result.total = result.recomputed_total();
    Ok(result)
}

/// Masses and maps of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub inflow_mass: f64,
    pub outflow_mass: f64,
    /// Maps at the resolution of the (capped) input.
    pub outputs: ModelOutputs,
}

pub fn predict_pair(model: &Model, image_a: &Image, image_b: &Image, cap: (usize, usize)) -> Result<PairPrediction> {
    if (image_a.width(), image_a.height()) != (image_b.width(), image_b.height()) {
        return Err(Error::Input(format!(
            "pair frames differ in size: {}x{} vs {}x{}",
            image_a.width(),
            image_a.height(),
            image_b.width(),
            image_b.height()
        )));
    }
    let (a, _) = image_a.capped(cap.0, cap.1);
    let (b, _) = image_b.capped(cap.0, cap.1);
    let outputs = model.forward(&a, &b)?;
    Ok(PairPrediction {
        inflow_mass: outputs.inflow_mass(),
        outflow_mass: outputs.outflow_mass(),
        outputs,
    })
}

/// Predictions of a trained model.
pub struct ModelSource<'a> {
    pub model: &'a Model,
    pub frames: &'a [Image],
    pub cap: (usize, usize),
}

impl FlowSource for ModelSource<'_> {
    fn n_frames(&self) -> usize {
        self.frames.len()
    }

    fn frame_count(&self, frame: usize) -> Result<f64> {
        let (img, _) = self.frames[frame].capped(self.cap.0, self.cap.1);
        Ok(self.model.global_map(&img)?.sum())
    }

    fn pair_flow(&mut self, a: usize, b: usize) -> Result<(f64, f64)> {
        let p = predict_pair(self.model, &self.frames[a], &self.frames[b], self.cap)?;
        Ok((p.inflow_mass, p.outflow_mass))
    }
}

/// Ground-truth maps rasterized from annotations in place of predictions.
pub struct OracleSource<'a> {
    pub clip: &'a ClipAnnotation,
    pub kernel: KernelSpec,
}

impl FlowSource for OracleSource<'_> {
    fn n_frames(&self) -> usize {
        self.clip.len()
    }

    fn frame_count(&self, frame: usize) -> Result<f64> {
        let f = &self.clip.frames[frame];
        Ok(rasterize(&f.points, f.width, f.height, &self.kernel, 1)?.mass())
    }

    fn pair_flow(&mut self, a: usize, b: usize) -> Result<(f64, f64)> {
        let (fa, fb) = (&self.clip.frames[a], &self.clip.frames[b]);
        let flow = derive_flow_for(self.clip.supervision, fa, fb)?;
        let gt = gt_bundle(&flow, fa, fb, &self.kernel, 1)?;
        Ok((gt.inflow_b.mass(), gt.outflow_a.mass()))
    }
}

pub fn count_video(clip_id: &str, frames: &[Image], model: &Model, options: &CountOptions) -> Result<VideoCountResult> {
    let mut source = ModelSource {
        model,
        frames,
        cap: options.cap,
    };
    count_with(&mut source, clip_id, options)
}

/// Counting with ground-truth maps; equals the exact unique count up to
/// rasterization tolerance.
pub fn count_oracle(clip: &ClipAnnotation, kernel: KernelSpec, options: &CountOptions) -> Result<VideoCountResult> {
    let mut source = OracleSource { clip, kernel };
    count_with(&mut source, &clip.clip_id, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::count_unique;
    use crate::model::ModelConfig;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn stride_pairs() {
        assert_eq!(pair_indices(7, 2, false).unwrap(), vec![(0, 2), (2, 4), (4, 6)]);
        assert_eq!(pair_indices(8, 3, false).unwrap(), vec![(0, 3), (3, 6)]);
        assert_eq!(pair_indices(8, 3, true).unwrap(), vec![(0, 3), (3, 6), (6, 7)]);
        assert_eq!(pair_indices(7, 3, true).unwrap(), vec![(0, 3), (3, 6)]);
        assert!(pair_indices(1, 4, true).unwrap().is_empty());
        assert!(pair_indices(5, 0, false).is_err());
    }

    #[test]
    fn default_stride_scales_with_fps() {
        assert_eq!(default_stride(REFERENCE_FPS), 5);
        assert_eq!(default_stride(6.0), 10);
        assert_eq!(default_stride(1.0), 2);
        assert_eq!(default_stride(0.1), 1);
    }

    #[test]
    fn oracle_matches_exact_count() {
        let s = generate(&SynthConfig::default()).unwrap();
        for stride in [1, 2, 5] {
            let r = count_oracle(&s.clip, KernelSpec::with_sigma(2.0), &CountOptions::with_stride(stride)).unwrap();
            let exact = count_unique(&s.clip, stride).unwrap() as f64;
            assert!((r.total - exact).abs() < 1e-2, "stride {stride}: {} vs {exact}", r.total);
            assert_eq!(r.total, r.recomputed_total());
        }
    }

    #[test]
    fn single_frame_counts_global_map() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let frame = Image::filled(16, 16, [0.3, 0.5, 0.2]);
        let r = count_video("one", std::slice::from_ref(&frame), &model, &CountOptions::default()).unwrap();
        assert!(r.pairs.is_empty());
        assert_eq!(r.total, model.global_map(&frame).unwrap().sum());
    }

    #[test]
    fn empty_video_is_an_input_error() {
        let model = Model::new(ModelConfig::tiny()).unwrap();
        let err = count_video("none", &[], &model, &CountOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn result_json_round_trips() {
        let r = VideoCountResult {
            clip_id: "c".into(),
            total: 3.5,
            first_frame_count: 2.0,
            stride: 2,
            pairs: vec![PairCount { a: 0, b: 2, inflow: 1.5, outflow: 0.25 }],
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["pairs"][0]["inflow"], 1.5);
        assert_eq!(serde_json::from_value::<VideoCountResult>(v).unwrap(), r);
        assert_eq!(r.clone().with_first_frame_count(5.0).total, 6.5);
    }
}
