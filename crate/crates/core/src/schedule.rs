//! Mean-teacher self-training schedules.
//!
//! After a burn-in period, the learning rate and the two loss-branch weights
//! follow cosine curves from their start to their end values over the rest of
//! training. The teacher's parameters track the student's through an
//! exponential moving average.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub total_iters: u64,
    pub burn_in_iters: u64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub label_weight_start: f64,
    pub label_weight_end: f64,
    pub teacher_weight_start: f64,
    pub teacher_weight_end: f64,
    pub ema_momentum: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_iters: 40_000,
            burn_in_iters: 4_000,
            lr_start: 0.01,
            lr_end: 0.0,
            label_weight_start: 1.0,
            label_weight_end: 0.0,
            teacher_weight_start: 2.0,
            teacher_weight_end: 3.0,
            ema_momentum: 0.9996,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in_iters >= self.total_iters {
            return Err(Error::InvalidConfig(format!(
                "burn-in ({}) must be shorter than training ({})",
                self.burn_in_iters, self.total_iters
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_momentum) {
            return Err(Error::InvalidConfig(format!(
                "ema momentum {} outside [0, 1]",
                self.ema_momentum
            )));
        }
        Ok(())
    }

    fn check_iter(&self, iter: u64) -> Result<()> {
        if iter > self.total_iters {
            return Err(Error::IterOutOfRange {
                iter,
                total: self.total_iters,
            });
        }
        Ok(())
    }

    pub fn in_burn_in(&self, iter: u64) -> bool {
        iter < self.burn_in_iters
    }
}

/// Fraction of the post-burn-in span completed at `iter`; 0 during burn-in.
pub fn progress(iter: u64, cfg: &ScheduleConfig) -> Result<f64> {
    cfg.check_iter(iter)?;
    if iter <= cfg.burn_in_iters {
        return Ok(0.0);
    }
    let span = (cfg.total_iters - cfg.burn_in_iters) as f64;
    Ok(((iter - cfg.burn_in_iters) as f64 / span).clamp(0.0, 1.0))
}

/// Cosine interpolation from `start` (p = 0) to `end` (p = 1).
pub fn cosine_interp(start: f64, end: f64, p: f64) -> f64 {
    end + (start - end) * (1.0 + (PI * p).cos()) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub label: f64,
    /// Zero while the teacher branch is inactive.
    pub teacher: f64,
}

pub fn loss_weights(iter: u64, cfg: &ScheduleConfig) -> Result<LossWeights> {
    let p = progress(iter, cfg)?;
    if cfg.in_burn_in(iter) {
        return Ok(LossWeights {
            label: cfg.label_weight_start,
            teacher: 0.0,
        });
    }
    Ok(LossWeights {
        label: cosine_interp(cfg.label_weight_start, cfg.label_weight_end, p),
        teacher: cosine_interp(cfg.teacher_weight_start, cfg.teacher_weight_end, p),
    })
}

/// Constant during burn-in, cosine-decayed afterwards.
pub fn learning_rate(iter: u64, cfg: &ScheduleConfig) -> Result<f64> {
    let p = progress(iter, cfg)?;
    Ok(cosine_interp(cfg.lr_start, cfg.lr_end, p))
}

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { index });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// `momentum * teacher + (1 - momentum) * student`, elementwise.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, momentum: f64) -> Result<ParamVector> {
    if teacher.len() != student.len() {
        return Err(Error::LengthMismatch {
            left: teacher.len(),
            right: student.len(),
        });
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::InvalidConfig(format!("ema momentum {momentum} outside [0, 1]")));
    }
    Ok(ParamVector(
        teacher
            .0
            .iter()
            .zip(&student.0)
            .map(|(t, s)| momentum * t + (1.0 - momentum) * s)
            .collect(),
    ))
}

/// Teacher bookkeeping across training iterations.
///
/// No teacher exists during burn-in. The first step at or after burn-in copies
/// the student; later steps apply the moving average.
#[derive(Debug, Clone)]
pub struct MeanTeacher {
    cfg: ScheduleConfig,
    teacher: Option<ParamVector>,
}

impl MeanTeacher {
    pub fn new(cfg: ScheduleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, teacher: None })
    }

    pub fn teacher(&self) -> Option<&ParamVector> {
        self.teacher.as_ref()
    }

    pub fn step(&mut self, iter: u64, student: &ParamVector) -> Result<Option<&ParamVector>> {
        self.cfg.check_iter(iter)?;
        if self.cfg.in_burn_in(iter) {
            return Ok(None);
        }
        let next = match &self.teacher {
            None => student.clone(),
            Some(t) => ema_update(t, student, self.cfg.ema_momentum)?,
        };
        self.teacher = Some(next);
        Ok(self.teacher.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub iter: u64,
    pub lr: f64,
    pub alpha_label: f64,
    pub alpha_teacher: f64,
}

/// One row per iteration, `0..=total_iters`.
pub fn schedule_rows(cfg: &ScheduleConfig) -> Result<Vec<ScheduleRow>> {
    cfg.validate()?;
    (0..=cfg.total_iters)
        .map(|iter| {
            let w = loss_weights(iter, cfg)?;
            Ok(ScheduleRow {
                iter,
                lr: learning_rate(iter, cfg)?,
                alpha_label: w.label,
                alpha_teacher: w.teacher,
            })
        })
        .collect()
}

/// Writes `iter,lr,alpha_label,alpha_teacher` CSV.
pub fn write_schedule_csv<W: Write>(cfg: &ScheduleConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in schedule_rows(cfg)? {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
