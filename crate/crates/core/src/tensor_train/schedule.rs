//! Per-dimension polynomial degrees for tensor-train collocation.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrogateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    Iso,
    Aniso,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSchedule {
    /// `ν_k` for `k = 1..=d_in`.
    pub nu: Vec<usize>,
    pub mode: ScheduleMode,
    pub nu_max: usize,
}

impl DegreeSchedule {
    /// Effective input dimension.
    pub fn d_in(&self) -> usize {
        self.nu.len()
    }

    /// Mode sizes `ν_k + 1`.
    pub fn mode_sizes(&self) -> Vec<usize> {
        self.nu.iter().map(|v| v + 1).collect()
    }
}

/// Isotropic `ν_k = ν_max`, or anisotropic `ν_k = ⌈ν_max / log₂(k+1)⌉ − 1`
/// truncated after the last `k` with `ν_k > 0`.
pub fn degree_schedule(nu_max: usize, mode: ScheduleMode, d: usize) -> Result<DegreeSchedule> {
    if d == 0 {
        return Err(SurrogateError::InvalidArgument("schedule dimension must be positive".into()));
    }
    let nu = match mode {
        ScheduleMode::Iso => vec![nu_max; d],
        ScheduleMode::Aniso => {
            if nu_max < 2 {
                return Err(SurrogateError::InvalidArgument(format!(
                    "anisotropic schedule needs nu_max >= 2, got {nu_max}"
                )));
            }
            let mut nu: Vec<usize> =
                (1..=d).map(|k| (nu_max as f64 / ((k + 1) as f64).log2()).ceil() as usize - 1).collect();
            let last = nu.iter().rposition(|&v| v > 0).map_or(1, |p| p + 1);
            nu.truncate(last);
            nu
        }
    };
    Ok(DegreeSchedule { nu, mode, nu_max })
}
