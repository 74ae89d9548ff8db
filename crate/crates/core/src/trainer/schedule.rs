use std::f64::consts::PI;

use super::config::{Milestone, TrainConfig};

/// `base + sum of delta over milestones with percent <= p`.
pub fn depth_at(base: usize, milestones: &[Milestone], p: f64) -> usize {
    base + milestones
        .iter()
        .filter(|m| p >= m.percent)
        .map(|m| m.delta)
        .sum::<usize>()
}

pub fn get_target_h(p: f64, h0: usize, cfg: &TrainConfig) -> usize {
    depth_at(h0, &cfg.h_milestones, p)
}

pub fn get_target_l(p: f64, l0: usize, cfg: &TrainConfig) -> usize {
    depth_at(l0, &cfg.l_milestones, p)
}

/// Training progress of `step` in percent of `total_steps`.
pub fn progress_percent(step: u64, total_steps: u64) -> f64 {
    if total_steps == 0 {
        100.0
    } else {
        100.0 * step as f64 / total_steps as f64
    }
}

/// Linear ramp from 0 at step 0 to `lr_max` at `warmup_steps`, then cosine
/// decay to `lr_min` at `total_steps`. Optimizer update `s` (0-based) uses
/// `lr_at(s + 1)`, so the first update already has a non-zero rate.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps;
    if step < w {
        return cfg.lr_max * step as f64 / w as f64;
    }
    let span = cfg.total_steps.saturating_sub(w);
    if span == 0 {
        return cfg.lr_max;
    }
    let progress = ((step - w) as f64 / span as f64).min(1.0);
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * 0.5 * (1.0 + (PI * progress).cos())
}

/// Depths in force and the most recent change of either.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CurriculumState {
    pub active_h: usize,
    pub active_l: usize,
    pub last_transition_step: Option<u64>,
}

impl CurriculumState {
    pub fn initial(h0: usize, l0: usize, cfg: &TrainConfig) -> Self {
        let p = progress_percent(0, cfg.total_steps);
        CurriculumState {
            active_h: get_target_h(p, h0, cfg),
            active_l: get_target_l(p, l0, cfg),
            last_transition_step: None,
        }
    }

    /// Resolves the depths for `step`; returns true when they changed, in
    /// which case `step` becomes the last transition. Simultaneous H and L
    /// changes are a single transition.
    pub fn advance(&mut self, step: u64, h0: usize, l0: usize, cfg: &TrainConfig) -> bool {
        let p = progress_percent(step, cfg.total_steps);
        let h = get_target_h(p, h0, cfg);
        let l = get_target_l(p, l0, cfg);
        if (h, l) == (self.active_h, self.active_l) {
            return false;
        }
        self.active_h = h;
        self.active_l = l;
        self.last_transition_step = Some(step);
        true
    }
}

/// Multiplier on the scheduled rate: 0 at a transition step, rising
/// linearly to 1 over `transition_lr_warmup_steps`.
pub fn lr_transition_mult(step: u64, state: &CurriculumState, cfg: &TrainConfig) -> f64 {
    match state.last_transition_step {
        None => 1.0,
        Some(_) if cfg.transition_lr_warmup_steps == 0 => 1.0,
        Some(t) => ((step.saturating_sub(t)) as f64 / cfg.transition_lr_warmup_steps as f64).min(1.0),
    }
}
