//! Cosine-annealing learning-rate schedule with warm restarts.
//!
//! Cycle lengths grow geometrically: T0, T0*m, T0*m^2, ... Within a
//! cycle, eta = eta_min + (base - eta_min) * (1 + cos(pi t/T_i)) / 2; at
//! every restart boundary the rate returns to the group's base value.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

fn default_t0() -> f64 { 10.0 }
fn default_t_mult() -> f64 { 2.0 }
fn default_eta_min() -> f64 { 1e-5 }

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub t0: f64,
    pub t_mult: f64,
    pub eta_min: f64,
    /// Per-group floors overriding `eta_min` (see the startup warning on
    /// a floor exceeding a group's base rate).
    pub eta_min_backbone: Option<f64>,
    pub eta_min_head: Option<f64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            t0: default_t0(),
            t_mult: default_t_mult(),
            eta_min: default_eta_min(),
            eta_min_backbone: None,
            eta_min_head: None,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) {
            return Err(Error::Config(format!("schedule t0 = {} must be positive", self.t0)));
        }
        if !(self.t_mult >= 1.0) {
            return Err(Error::Config(format!(
                "schedule t_mult = {} must be >= 1",
                self.t_mult
            )));
        }
        for (name, v) in [
            ("eta_min", Some(self.eta_min)),
            ("eta_min_backbone", self.eta_min_backbone),
            ("eta_min_head", self.eta_min_head),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::Config(format!("schedule {name} = {v} must be positive")));
                }
            }
        }
        Ok(())
    }
}

/// Learning rate at a (real-valued) epoch for one parameter group.
pub fn lr_at(step_epoch: f64, group_base: f64, sched: &ScheduleConfig) -> f64 {
    lr_at_with_floor(step_epoch, group_base, sched, sched.eta_min)
}

/// Same cosine-restart curve with an explicit per-group floor.
pub fn lr_at_with_floor(step_epoch: f64, group_base: f64, sched: &ScheduleConfig, eta_min: f64) -> f64 {
    debug_assert!(step_epoch >= 0.0);
    let (mut start, mut t_i) = (0.0f64, sched.t0);
    if (sched.t_mult - 1.0).abs() < 1e-12 {
        let i = (step_epoch / sched.t0).floor();
        start = i * sched.t0;
    } else {
        while step_epoch >= start + t_i {
            start += t_i;
            t_i *= sched.t_mult;
        }
    }
    let t_cur = step_epoch - start;
    eta_min + (group_base - eta_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos()) / 2.0
}
