//! Python bindings: synthesis, ground-truth flows, models, training and counting.
//!
//! Images cross the boundary as `(width, height, data)` with `data` a flat
//! row-major RGB list in `[0, 1]`; maps come back as lists of rows.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vic_core::annotations::{self, FrameAnnotation, HeadPoint};
use vic_core::autograd::Array;
use vic_core::dataset::{self, ClipData};
use vic_core::density::{self, KernelSpec};
use vic_core::image::Image;
use vic_core::inference::{self, CountOptions, VideoCountResult};
use vic_core::metrics::{EvalReport, VideoEvalRecord};
use vic_core::model::{ModelConfig, Variant};
use vic_core::synth::{self, SynthConfig};
use vic_core::training::{self, TrainConfig};
use vic_core::{Error, ErrorKind};

fn err(e: Error) -> PyErr {
    match (&e, e.kind()) {
        (Error::Io { .. }, _) => PyIOError::new_err(e.to_string()),
        (_, ErrorKind::Runtime) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn image(width: usize, height: usize, data: Vec<f32>) -> PyResult<Image> {
    Image::new(width, height, data).map_err(err)
}

fn rows(a: &Array) -> Vec<Vec<f64>> {
    let w = a.dim(1);
    a.data().chunks(w).map(<[f64]>::to_vec).collect()
}

fn parse_variant(s: &str) -> PyResult<Variant> {
    match s.to_ascii_uppercase().as_str() {
        "DCFA" => Ok(Variant::Dcfa),
        "SCFA" => Ok(Variant::Scfa),
        "DIRECT" => Ok(Variant::Direct),
        _ => Err(PyValueError::new_err(format!("unknown variant {s:?}"))),
    }
}

fn preset(name: &str) -> PyResult<ModelConfig> {
    match name {
        "tiny" => Ok(ModelConfig::tiny()),
        "desk" => Ok(ModelConfig::desk()),
        "full" => Ok(ModelConfig::full()),
        _ => Err(PyValueError::new_err(format!("unknown preset {name:?}"))),
    }
}

/// Density model with global, shared and inflow/outflow heads.
#[pyclass(name = "Model", module = "vic")]
struct PyModel {
    inner: vic_core::model::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset_name = "desk", variant = "DCFA", seed = 0, config_json = None))]
    fn new(preset_name: &str, variant: &str, seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let mut config = match config_json {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => preset(preset_name)?,
        };
        config.dcfa.variant = parse_variant(variant)?;
        config.seed = seed;
        Ok(Self {
            inner: vic_core::model::Model::new(config).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: vic_core::model::Model::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn config_json(&self) -> String {
        serde_json::to_string(self.inner.config()).expect("config serializes")
    }

    /// The six maps of a frame pair, keyed by name (shared maps are absent
    /// for the direct variant).
    fn forward(
        &self,
        width: usize,
        height: usize,
        image_a: Vec<f32>,
        image_b: Vec<f32>,
    ) -> PyResult<BTreeMap<&'static str, Vec<Vec<f64>>>> {
        let out = self
            .inner
            .forward(&image(width, height, image_a)?, &image(width, height, image_b)?)
            .map_err(err)?;
        Ok(out.maps().into_iter().map(|(name, m)| (name, rows(m))).collect())
    }

    /// `(inflow_mass, outflow_mass)` of a frame pair.
    fn predict_pair(&self, width: usize, height: usize, image_a: Vec<f32>, image_b: Vec<f32>) -> PyResult<(f64, f64)> {
        let p = inference::predict_pair(
            &self.inner,
            &image(width, height, image_a)?,
            &image(width, height, image_b)?,
            inference::DEFAULT_CAP,
        )
        .map_err(err)?;
        Ok((p.inflow_mass, p.outflow_mass))
    }

    /// Unique count of a clip on disk.
    #[pyo3(signature = (manifest, stride = None, tail_pair = false))]
    fn count(&self, manifest: PathBuf, stride: Option<usize>, tail_pair: bool) -> PyResult<CountResult> {
        let clip = dataset::load_clip(manifest).map_err(err)?;
        let options = CountOptions {
            stride: stride.unwrap_or_else(|| inference::default_stride(clip.annotation.fps)),
            tail_pair,
            ..CountOptions::default()
        };
        let r = inference::count_video(&clip.annotation.clip_id, &clip.frames, &self.inner, &options).map_err(err)?;
        Ok(CountResult { inner: r })
    }

    /// Trains in place; returns the per-step total losses and the final
    /// validation MIAE.
    #[pyo3(signature = (data_dir, out_dir = None, config_json = None))]
    fn train(
        &mut self,
        py: Python<'_>,
        data_dir: PathBuf,
        out_dir: Option<PathBuf>,
        config_json: Option<&str>,
    ) -> PyResult<(Vec<f64>, Option<f64>)> {
        let config: TrainConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => TrainConfig::default(),
        };
        let clips = dataset::load_dataset(data_dir).map_err(err)?;
        let model = &mut self.inner;
        let outcome = py
            .detach(|| training::train(model, &clips, &[], &config, out_dir.as_deref()))
            .map_err(err)?;
        Ok((
            outcome.log.iter().map(|l| l.total).collect(),
            outcome.final_val.map(|v| v.miae),
        ))
    }
}

/// Result of counting one clip.
#[pyclass(name = "CountResult", module = "vic")]
struct CountResult {
    inner: VideoCountResult,
}

#[pymethods]
impl CountResult {
    #[getter]
    fn clip_id(&self) -> &str {
        &self.inner.clip_id
    }

    #[getter]
    fn total(&self) -> f64 {
        self.inner.total
    }

    #[getter]
    fn first_frame_count(&self) -> f64 {
        self.inner.first_frame_count
    }

    #[getter]
    fn stride(&self) -> usize {
        self.inner.stride
    }

    /// `(a, b, inflow, outflow)` per evaluated pair.
    #[getter]
    fn pairs(&self) -> Vec<(usize, usize, f64, f64)> {
        self.inner.pairs.iter().map(|p| (p.a, p.b, p.inflow, p.outflow)).collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "CountResult(clip_id={:?}, total={:.3}, pairs={})",
            self.inner.clip_id,
            self.inner.total,
            self.inner.pairs.len()
        )
    }
}

/// Writes a synthetic clip to `out_dir`; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 0, n_frames = None, n_persons = None, config_json = None))]
fn synthesize(
    out_dir: PathBuf,
    seed: u64,
    n_frames: Option<usize>,
    n_persons: Option<usize>,
    config_json: Option<&str>,
) -> PyResult<PathBuf> {
    let mut config: SynthConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => SynthConfig::default(),
    };
    config.seed = seed;
    if let Some(n) = n_frames {
        config.n_frames = n;
    }
    if let Some(n) = n_persons {
        config.n_persons = n;
    }
    let clip = synth::generate(&config).map_err(err)?;
    let data = ClipData::new(clip.clip, clip.frames).map_err(err)?;
    dataset::write_clip(out_dir, &data).map_err(err)
}

type Points = Vec<(f64, f64)>;

/// Splits two frames of `(x, y, track_id)` heads into
/// `(shared_a, shared_b, outflow, inflow)` point lists.
#[pyfunction]
fn derive_flow(
    points_a: Vec<(f64, f64, u64)>,
    points_b: Vec<(f64, f64, u64)>,
    width: u32,
    height: u32,
) -> PyResult<(Points, Points, Points, Points)> {
    let frame = |i: usize, pts: &[(f64, f64, u64)]| {
        FrameAnnotation::new(
            i,
            width,
            height,
            pts.iter().map(|&(x, y, id)| HeadPoint::with_id(x, y, id)).collect(),
        )
    };
    let flow = annotations::derive_flow(&frame(0, &points_a), &frame(1, &points_b)).map_err(err)?;
    let xy = |v: &[HeadPoint]| v.iter().map(|p| (p.x, p.y)).collect::<Points>();
    Ok((xy(&flow.shared_a), xy(&flow.shared_b), xy(&flow.outflow), xy(&flow.inflow)))
}

/// Unit-mass Gaussian density map of `points` (one cell per pixel).
#[pyfunction]
#[pyo3(signature = (points, width, height, sigma = 4.0))]
fn rasterize(points: Points, width: u32, height: u32, sigma: f64) -> PyResult<Vec<Vec<f32>>> {
    let pts: Vec<HeadPoint> = points.into_iter().map(|(x, y)| HeadPoint::new(x, y)).collect();
    let map = density::rasterize(&pts, width, height, &KernelSpec::with_sigma(sigma), 1).map_err(err)?;
    Ok(map.data().chunks(map.width()).map(<[f32]>::to_vec).collect())
}

/// Exact unique count of an annotated clip at `stride`.
#[pyfunction]
#[pyo3(signature = (manifest, stride = 1))]
fn count_unique(manifest: PathBuf, stride: usize) -> PyResult<usize> {
    let clip = dataset::load_annotation(manifest).map_err(err)?;
    annotations::count_unique(&clip, stride).map_err(err)
}

/// MAE, RMSE and WRAE of `(clip_id, y_true, y_pred, n_frames)` records.
#[pyfunction]
fn video_metrics(records: Vec<(String, u64, f64, usize)>) -> PyResult<BTreeMap<&'static str, f64>> {
    let records = records
        .into_iter()
        .map(|(id, t, p, n)| VideoEvalRecord::new(id, t, p, n))
        .collect();
    let report = EvalReport::from_records(records).map_err(err)?;
    Ok(BTreeMap::from([
        ("MAE", report.MAE),
        ("RMSE", report.RMSE),
        ("WRAE", report.WRAE),
    ]))
}

#[pymodule]
fn vic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<CountResult>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(derive_flow, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(count_unique, m)?)?;
    m.add_function(wrap_pyfunction!(video_metrics, m)?)?;
    Ok(())
}
