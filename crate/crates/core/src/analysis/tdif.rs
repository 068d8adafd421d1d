//! Trigger-minus-photon delay statistics and the collapse-time bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Detector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTdif {
    pub detector: Detector,
    /// e.g. `T3A-T1A`.
    pub label: String,
    /// One value per run in which the channel was present, ns.
    pub per_run_ns: Vec<f64>,
    pub mean_ns: f64,
    /// Standard deviation of the per-run values.
    pub sd_ns: f64,
    /// Standard error of the grand mean.
    pub sem_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdifStats {
    pub channels: Vec<ChannelTdif>,
    /// Detectors that had no value in any run.
    pub absent: Vec<Detector>,
    pub runs: usize,
}

impl TdifStats {
    pub fn channel(&self, detector: Detector) -> Option<&ChannelTdif> {
        self.channels.iter().find(|c| c.detector == detector)
    }

    /// Grand means indexed by [`Detector::index`].
    pub fn means(&self) -> [Option<f64>; 4] {
        Detector::ALL.map(|d| self.channel(d).map(|c| c.mean_ns))
    }
}

/// Grand mean and dispersion of per-run T_dif values.
///
/// `per_run[r][d]` is run `r`'s value for detector index `d`, `None` when the
/// channel was absent in that run.
pub fn tdif_statistics(per_run: &[[Option<f64>; 4]]) -> Result<TdifStats> {
    if per_run.is_empty() {
        return Err(Error::InsufficientData("T_dif statistics need at least one run".into()));
    }
    let mut channels = Vec::new();
    let mut absent = Vec::new();
    for det in Detector::ALL {
        let values: Vec<f64> = per_run.iter().filter_map(|r| r[det.index()]).collect();
        if values.is_empty() {
            absent.push(det);
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        channels.push(ChannelTdif {
            detector: det,
            label: det.tdif_label(),
            per_run_ns: values,
            mean_ns: mean,
            sd_ns: sd,
            sem_ns: sd / n.sqrt(),
        });
    }
    Ok(TdifStats {
        channels,
        absent,
        runs: per_run.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseBound {
    pub bound_ns: f64,
    /// Channel giving the smallest mean (the most favourable value).
    pub detector: Detector,
    /// The raw difference was negative and the bound was clamped to zero.
    pub clamped: bool,
}

/// `nominal − min mean`: the collapse time cannot exceed how much earlier
/// than nominal the earliest channel registers photons.
pub fn collapse_time_bound(stats: &TdifStats, nominal_tdif_ns: f64) -> Result<CollapseBound> {
    let best = stats
        .channels
        .iter()
        .min_by(|a, b| a.mean_ns.total_cmp(&b.mean_ns))
        .ok_or_else(|| Error::InsufficientData("no T_dif channel present".into()))?;
    let raw = nominal_tdif_ns - best.mean_ns;
    Ok(CollapseBound {
        bound_ns: raw.max(0.0),
        detector: best.detector,
        clamped: raw < 0.0,
    })
}
