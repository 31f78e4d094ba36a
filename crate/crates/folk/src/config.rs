//! Resolved run configuration: every tunable of the pipeline in one
//! place, with defaults, JSON file loading and validation.

use folk_core::mask_complete::CompletionParams;
use folk_core::student::DistillConfig;
use folk_core::teacher::TeacherParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k_pre: usize,
    pub theta_th_deg: f64,
    pub frame_stride: usize,
    pub r: usize,
    pub k_s: usize,
    /// Density kernel width; `None` means `k_s / 3`.
    pub sigma: Option<f64>,
    pub rho_th: f64,
    #[serde(rename = "S")]
    pub s: usize,
    pub iterations: usize,
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub depth_tolerance: f64,
    pub nms_iou: f64,
    pub ignore_classes: Vec<usize>,
    /// Named class subsets for per-subset AP.
    pub subsets: BTreeMap<String, Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TeacherParams::default();
        let d = DistillConfig::default();
        Self {
            k_pre: t.k_pre,
            theta_th_deg: t.theta_th_deg,
            frame_stride: t.frame_stride,
            r: t.completion.window_radius,
            k_s: t.completion.kernel_size,
            sigma: None,
            rho_th: t.completion.density_threshold,
            s: t.completion.top_directions,
            iterations: t.completion.iterations,
            tau: d.tau,
            alpha: d.alpha,
            beta: d.beta,
            lr: d.learning_rate,
            steps: d.steps,
            seed: d.seed,
            depth_tolerance: t.depth_tolerance,
            nms_iou: 0.9,
            ignore_classes: Vec::new(),
            subsets: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or(self.k_s as f64 / 3.0)
    }

    pub fn teacher_params(&self) -> TeacherParams {
        TeacherParams {
            k_pre: self.k_pre,
            theta_th_deg: self.theta_th_deg,
            frame_stride: self.frame_stride,
            depth_tolerance: self.depth_tolerance,
            completion: CompletionParams {
                window_radius: self.r,
                kernel_size: self.k_s,
                sigma: self.sigma(),
                density_threshold: self.rho_th,
                top_directions: self.s,
                iterations: self.iterations,
            },
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            tau: self.tau,
            alpha: self.alpha,
            beta: self.beta,
            learning_rate: self.lr,
            steps: self.steps,
            seed: self.seed,
        }
    }

    /// Checks every key against its module's constraints.
    pub fn validate(&self) -> Result<(), String> {
        self.teacher_params().validate().map_err(|e| e.to_string())?;
        self.distill_config().validate().map_err(|e| e.to_string())?;
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(format!("invalid parameter nms_iou: must be in (0, 1], got {}", self.nms_iou));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.sigma(), 10.0 / 3.0);
        let back: RunConfig = serde_json::from_value(c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_fill_defaults_and_unknown_keys_fail() {
        let c: RunConfig = serde_json::from_str(r#"{"tau": 0.05, "S": 2}"#).unwrap();
        assert_eq!((c.tau, c.s, c.k_pre), (0.05, 2, 6));
        assert!(serde_json::from_str::<RunConfig>(r#"{"tua": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_reported() {
        for bad in [
            RunConfig { tau: 0.0, ..Default::default() },
            RunConfig { alpha: 0.0, beta: 0.0, ..Default::default() },
            RunConfig { s: 9, ..Default::default() },
            RunConfig { rho_th: 1.5, ..Default::default() },
            RunConfig { nms_iou: 0.0, ..Default::default() },
            RunConfig { k_pre: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
