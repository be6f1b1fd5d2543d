use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::traffic::CvId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyProfile {
    /// Sampled network delays and a modelled processing time.
    Calibrated,
    /// Sampled network delays; processing time measured on the host.
    Wallclock,
    /// Everything instantaneous.
    Zero,
}

impl FromStr for LatencyProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "calibrated" => Ok(LatencyProfile::Calibrated),
            "wallclock" => Ok(LatencyProfile::Wallclock),
            "zero" => Ok(LatencyProfile::Zero),
            _ => Err(format!("unknown latency profile `{s}` (calibrated, wallclock, zero)")),
        }
    }
}

impl fmt::Display for LatencyProfile {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str(match self {
            LatencyProfile::Calibrated => "calibrated",
            LatencyProfile::Wallclock => "wallclock",
            LatencyProfile::Zero => "zero",
        })
    }
}

/// Compute cost of the advisory functions under the calibrated profile, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeCost {
    pub assigner_base_ms: f64,
    pub assigner_per_cv_ms: f64,
    pub optimizer_base_ms: f64,
    pub optimizer_per_iteration_ms: f64,
}

impl Default for ComputeCost {
    fn default() -> Self {
        ComputeCost {
            assigner_base_ms: 1.0,
            assigner_per_cv_ms: 0.03,
            optimizer_base_ms: 1.5,
            optimizer_per_iteration_ms: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub profile: LatencyProfile,
    pub upload_mean_ms: f64,
    /// Standard deviation of the log of the upload delay.
    pub upload_sigma: f64,
    pub download_mean_ms: f64,
    pub download_sigma: f64,
    /// Function invocation and store round trips not covered by compute, ms.
    pub overhead_ms: f64,
    pub compute: ComputeCost,
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            profile: LatencyProfile::Calibrated,
            upload_mean_ms: 75.0,
            upload_sigma: 0.25,
            download_mean_ms: 78.0,
            download_sigma: 0.25,
            overhead_ms: 295.0,
            compute: ComputeCost::default(),
            seed: 0,
        }
    }
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("upload_mean", self.upload_mean_ms),
            ("download_mean", self.download_mean_ms),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("latency {name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("upload_sigma", self.upload_sigma),
            ("download_sigma", self.download_sigma),
            ("overhead", self.overhead_ms),
            ("assigner_base", self.compute.assigner_base_ms),
            ("assigner_per_cv", self.compute.assigner_per_cv_ms),
            ("optimizer_base", self.compute.optimizer_base_ms),
            ("optimizer_per_iteration", self.compute.optimizer_per_iteration_ms),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("latency {name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> LatencySampler {
        let dist = |mean: f64, sigma: f64| LogNormal::new(mean.ln() - 0.5 * sigma * sigma, sigma).expect("valid lognormal");
        LatencySampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            upload: dist(self.upload_mean_ms, self.upload_sigma),
            download: dist(self.download_mean_ms, self.download_sigma),
            zero: self.profile == LatencyProfile::Zero,
        }
    }

    pub fn overhead(&self) -> f64 {
        if self.profile == LatencyProfile::Zero {
            0.0
        } else {
            self.overhead_ms
        }
    }
}

/// Seeded source of network delays, ms.
#[derive(Debug, Clone)]
pub struct LatencySampler {
    rng: ChaCha8Rng,
    upload: LogNormal<f64>,
    download: LogNormal<f64>,
    zero: bool,
}

impl LatencySampler {
    pub fn upload(&mut self) -> f64 {
        if self.zero {
            0.0
        } else {
            self.upload.sample(&mut self.rng)
        }
    }

    pub fn download(&mut self) -> f64 {
        if self.zero {
            0.0
        } else {
            self.download.sample(&mut self.rng)
        }
    }
}

/// Timing of one advisory delivery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    /// Sample time of the BSM the advisory was computed from, s.
    pub t: f64,
    pub cv_id: CvId,
    pub upload_ms: f64,
    pub processing_ms: f64,
    pub download_ms: f64,
    pub end_to_end_ms: f64,
    /// Delivery time minus generation time, ms.
    pub staleness_ms: f64,
}

impl LatencyRecord {
    pub fn new(t: f64, cv_id: CvId, upload_ms: f64, processing_ms: f64, download_ms: f64, staleness_ms: f64) -> Self {
        LatencyRecord {
            t,
            cv_id,
            upload_ms,
            processing_ms,
            download_ms,
            end_to_end_ms: upload_ms + processing_ms + download_ms,
            staleness_ms,
        }
    }
}

pub fn end_to_end(rec: &LatencyRecord) -> f64 {
    rec.upload_ms + rec.processing_ms + rec.download_ms
}
