//! Video-level counting errors and per-pair flow errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predicted and true flow masses for one evaluated frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFlow {
    pub inflow_pred: f64,
    pub inflow_true: f64,
    pub outflow_pred: f64,
    pub outflow_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEvalRecord {
    pub clip_id: String,
    pub y_true: u64,
    pub y_pred: f64,
    /// Frame count of the full clip; weights the video in WRAE.
    pub n_frames: usize,
    #[serde(default)]
    pub pair_flows: Vec<PairFlow>,
}

impl VideoEvalRecord {
    pub fn new(clip_id: impl Into<String>, y_true: u64, y_pred: f64, n_frames: usize) -> Self {
        Self {
            clip_id: clip_id.into(),
            y_true,
            y_pred,
            n_frames,
            pair_flows: Vec::new(),
        }
    }
}

fn check_records(records: &[VideoEvalRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Metric("no records".into()));
    }
    if let Some(r) = records.iter().find(|r| r.n_frames == 0) {
        return Err(Error::Metric(format!("{}: n_frames must be >= 1", r.clip_id)));
    }
    Ok(())
}

pub fn mae_rmse(records: &[VideoEvalRecord]) -> Result<(f64, f64)> {
    check_records(records)?;
    let n = records.len() as f64;
    let (abs, sq) = records.iter().fold((0.0, 0.0), |(a, s), r| {
        let e = r.y_pred - r.y_true as f64;
        (a + e.abs(), s + e * e)
    });
    Ok((abs / n, (sq / n).sqrt()))
}

/// Frame-count-weighted relative absolute error, in percent. Videos with
/// `y_true == 0` are skipped with a warning and the weights renormalized.
pub fn wrae(records: &[VideoEvalRecord]) -> Result<f64> {
    check_records(records)?;
    let kept: Vec<&VideoEvalRecord> = records
        .iter()
        .filter(|r| {
            if r.y_true == 0 {
                log::warn!("{}: y_true = 0, excluded from WRAE", r.clip_id);
            }
            r.y_true > 0
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::Metric("WRAE needs at least one video with y_true > 0".into()));
    }
    let total: f64 = kept.iter().map(|r| r.n_frames as f64).sum();
    Ok(kept
        .iter()
        .map(|r| {
            let y = r.y_true as f64;
            r.n_frames as f64 / total * (r.y_pred - y).abs() / y
        })
        .sum::<f64>()
        * 100.0)
}

/// Mean absolute inflow and outflow error over every pair of every video.
pub fn miae_moae(records: &[VideoEvalRecord]) -> Result<(f64, f64)> {
    let flows: Vec<&PairFlow> = records.iter().flat_map(|r| &r.pair_flows).collect();
    if flows.is_empty() {
        return Err(Error::Metric("no pair flows".into()));
    }
    let n = flows.len() as f64;
    let miae = flows.iter().map(|f| (f.inflow_pred - f.inflow_true).abs()).sum::<f64>() / n;
    let moae = flows.iter().map(|f| (f.outflow_pred - f.outflow_true).abs()).sum::<f64>() / n;
    Ok((miae, moae))
}

/// Alias kept for the alternative name of the outflow metric.
pub fn miae_mioe(records: &[VideoEvalRecord]) -> Result<(f64, f64)> {
    miae_moae(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct EvalReport {
    pub MAE: f64,
    pub RMSE: f64,
    pub WRAE: f64,
    /// Absent when no pair flows were recorded.
    pub MIAE: Option<f64>,
    pub MOAE: Option<f64>,
    pub per_video: Vec<VideoEvalRecord>,
}

impl EvalReport {
    pub fn from_records(records: Vec<VideoEvalRecord>) -> Result<Self> {
        let (mae, rmse) = mae_rmse(&records)?;
        let wrae = wrae(&records)?;
        let flows = miae_moae(&records).ok();
        Ok(Self {
            MAE: mae,
            RMSE: rmse,
            WRAE: wrae,
            MIAE: flows.map(|f| f.0),
            MOAE: flows.map(|f| f.1),
            per_video: records,
        })
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// One row per video followed by an `ALL` summary row.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = String::from("clip_id,y_true,y_pred,n_frames,abs_err,MIAE,MOAE\n");
        for r in &self.per_video {
            let flows = miae_moae(std::slice::from_ref(r)).ok();
            out.push_str(&format!(
                "{},{},{:.6},{},{:.6},{},{}\n",
                r.clip_id,
                r.y_true,
                r.y_pred,
                r.n_frames,
                (r.y_pred - r.y_true as f64).abs(),
                fmt(flows.map(|f| f.0)),
                fmt(flows.map(|f| f.1)),
            ));
        }
        out.push_str(&format!(
            "ALL,,,,{:.6},{},{}\n# MAE={:.6} RMSE={:.6} WRAE={:.6}\n",
            self.MAE,
            fmt(self.MIAE),
            fmt(self.MOAE),
            self.MAE,
            self.RMSE,
            self.WRAE
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: u64, p: f64, t: usize) -> VideoEvalRecord {
        VideoEvalRecord::new("v", y, p, t)
    }

    fn flow(i_pred: f64, i_true: f64) -> PairFlow {
        PairFlow {
            inflow_pred: i_pred,
            inflow_true: i_true,
            outflow_pred: 0.0,
            outflow_true: 0.0,
        }
    }

    #[test]
    fn mae_rmse_examples() {
        assert_eq!(mae_rmse(&[rec(5, 5.0, 1), rec(7, 7.0, 1)]).unwrap(), (0.0, 0.0));
        assert_eq!(mae_rmse(&[rec(100, 141.0, 1)]).unwrap(), (41.0, 41.0));
        let (mae, rmse) = mae_rmse(&[rec(10, 13.0, 1), rec(10, 6.0, 1)]).unwrap();
        assert_eq!(mae, 3.5);
        assert_eq!(rmse, 12.5f64.sqrt());
        assert!(mae_rmse(&[]).is_err());
    }

    #[test]
    fn wrae_examples() {
        assert_eq!(wrae(&[rec(10, 10.0, 3)]).unwrap(), 0.0);
        assert!((wrae(&[rec(10, 12.0, 1)]).unwrap() - 20.0).abs() < 1e-12);
        let w = wrae(&[rec(10, 11.0, 10), rec(20, 20.0, 30)]).unwrap();
        assert!((w - 2.5).abs() < 1e-12);
        // zero-count videos drop out
        assert!((wrae(&[rec(10, 12.0, 1), rec(0, 3.0, 5)]).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn miae_examples() {
        let mut r = rec(1, 1.0, 2);
        r.pair_flows = vec![flow(1.0, 0.0), flow(0.0, 3.0)];
        assert_eq!(miae_moae(&[r]).unwrap(), (2.0, 0.0));
        assert!(miae_moae(&[rec(1, 1.0, 1)]).is_err());
    }

    #[test]
    fn report_round_trips_json() {
        let mut r = rec(10, 12.0, 4);
        r.pair_flows = vec![flow(1.5, 1.0)];
        let report = EvalReport::from_records(vec![r]).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"MIAE\":0.5"));
        let back: EvalReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert!(report.to_csv().starts_with("clip_id,"));
    }
}
