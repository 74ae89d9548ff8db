//! Schedule and optimizer bookkeeping against hand-computed values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsm_core::model::{BlockVariant, Weights};
use rsm_core::trainer::{
    clip_gradients, ema_update, get_target_h, get_target_l, lr_at, lr_transition_mult, AdamParams, CurriculumState,
    Milestones, OptimizerState, TrainConfig,
};

use super::model_checks::tiny_config;
use super::primitives::Outcome;

pub const TOL: f64 = 1e-6;

struct Tally {
    checks: usize,
    failures: Vec<String>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            checks: 0,
            failures: Vec::new(),
        }
    }

    fn close(&mut self, what: &str, got: f64, want: f64) {
        self.checks += 1;
        if (got - want).abs() > TOL {
            self.failures.push(format!("{what}: got {got}, want {want}"));
        }
    }

    fn outcome(self, label: &str) -> Outcome {
        if self.failures.is_empty() {
            (true, format!("{} {label} values within {TOL:.0e}", self.checks))
        } else {
            (false, self.failures.join("; "))
        }
    }
}

fn curriculum_config() -> TrainConfig {
    TrainConfig {
        total_steps: 200,
        warmup_steps: 20,
        lr_max: 1e-3,
        lr_min: 1e-4,
        h_milestones: "25:+2,50:+4,75:+8".parse::<Milestones>().unwrap().0,
        l_milestones: "50:+1".parse::<Milestones>().unwrap().0,
        transition_lr_warmup_steps: 4,
        ..TrainConfig::default()
    }
}

pub fn depth_targets() -> Outcome {
    let cfg = curriculum_config();
    let mut t = Tally::new();
    let table_h = [
        (0.0, 2),
        (24.99, 2),
        (25.0, 4),
        (49.0, 4),
        (50.0, 8),
        (74.9, 8),
        (75.0, 16),
        (100.0, 16),
    ];
    for (p, want) in table_h {
        t.close(&format!("H at {p}%"), get_target_h(p, 2, &cfg) as f64, want as f64);
    }
    let table_l = [(0.0, 4), (49.99, 4), (50.0, 5), (100.0, 5)];
    for (p, want) in table_l {
        t.close(&format!("L at {p}%"), get_target_l(p, 4, &cfg) as f64, want as f64);
    }
    t.outcome("depth targets")
}

pub fn lr_schedule() -> Outcome {
    let cfg = curriculum_config();
    let mut t = Tally::new();
    let table = [
        (0, 0.0),
        (10, 5e-4),
        (20, 1e-3),
        // halfway through the cosine: lr_min + (lr_max - lr_min) / 2
        (110, 5.5e-4),
        (200, 1e-4),
        (500, 1e-4),
    ];
    for (step, want) in table {
        t.close(&format!("lr({step})"), lr_at(step, &cfg), want);
    }
    t.outcome("learning-rate")
}

pub fn transition_ramp() -> Outcome {
    let cfg = curriculum_config();
    let mut t = Tally::new();
    let mut state = CurriculumState::initial(2, 4, &cfg);
    t.close("mult before any transition", lr_transition_mult(0, &state, &cfg), 1.0);
    let mut events = Vec::new();
    for step in 0..cfg.total_steps {
        if state.advance(step, 2, 4, &cfg) {
            events.push(step);
        }
    }
    // 25%, 50% (H and L together), 75% of 200 steps
    t.close("transition count", events.len() as f64, 3.0);
    for (i, want) in [50.0, 100.0, 150.0].into_iter().enumerate() {
        t.close(
            &format!("transition {i}"),
            events.get(i).copied().unwrap_or(0) as f64,
            want,
        );
    }
    let at = CurriculumState {
        active_h: 4,
        active_l: 4,
        last_transition_step: Some(50),
    };
    for (step, want) in [(50, 0.0), (51, 0.25), (52, 0.5), (54, 1.0), (90, 1.0)] {
        t.close(&format!("mult({step})"), lr_transition_mult(step, &at, &cfg), want);
    }
    t.outcome("curriculum/ramp")
}

fn random_grads(rng: &mut ChaCha8Rng, sizes: &[usize], scale: f32) -> Vec<Option<Vec<f32>>> {
    sizes
        .iter()
        .map(|&n| Some((0..n).map(|_| rng.random_range(-scale..scale)).collect()))
        .collect()
}

fn norm(grads: &[Option<Vec<f32>>]) -> f64 {
    grads
        .iter()
        .flatten()
        .flatten()
        .map(|&x| x as f64 * x as f64)
        .sum::<f64>()
        .sqrt()
}

pub fn clip_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut t = Tally::new();
    for trial in 0..20 {
        let mut grads = random_grads(&mut rng, &[7, 33, 128], 3.0);
        let before = norm(&grads);
        let original = grads.clone();
        let reported = clip_gradients(&mut grads, 1.0);
        t.close(&format!("trial {trial} reported norm"), reported, before);
        t.close(&format!("trial {trial} clipped norm"), norm(&grads), 1.0);
        let mut small = random_grads(&mut rng, &[5], 0.01);
        let kept = small.clone();
        clip_gradients(&mut small, 1.0);
        t.close(&format!("trial {trial} untouched"), norm(&small), norm(&kept));
        let ratio = grads[2].as_ref().unwrap()[0] as f64 / original[2].as_ref().unwrap()[0] as f64;
        t.close(&format!("trial {trial} direction"), ratio, 1.0 / before);
    }
    t.outcome("clip")
}

pub fn ema_closed_form() -> Outcome {
    let cfg = tiny_config(BlockVariant::MlpT);
    let mut t = Tally::new();
    let start: Weights<f32> = Weights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(71));
    let target: Weights<f32> = Weights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(72));
    let decay = 0.9_f64;
    let steps = 25;
    let mut ema = start.clone();
    for _ in 0..steps {
        ema_update(&mut ema, &target, decay);
    }
    let k = decay.powi(steps);
    let mut worst = 0.0_f64;
    for ((e, s), w) in ema.params.iter().zip(&start.params).zip(&target.params) {
        for ((&e, &s), &w) in e.data.iter().zip(s.data.iter()).zip(w.data.iter()) {
            let want = w as f64 + k * (s as f64 - w as f64);
            worst = worst.max((e as f64 - want).abs());
        }
    }
    t.close("max |ema - closed form|", worst, 0.0);
    t.outcome("EMA")
}

pub fn moment_rescale() -> Outcome {
    let cfg = tiny_config(BlockVariant::MlpT);
    let weights: Weights<f32> = Weights::init(&cfg, &mut ChaCha8Rng::seed_from_u64(81));
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    let mut t = Tally::new();
    let mut opt = OptimizerState::new(&weights, AdamParams::default());
    for buf in opt.m.iter_mut().chain(opt.v.iter_mut()) {
        for x in buf.iter_mut() {
            *x = rng.random_range(0.0..2.0);
        }
    }
    opt.t = 17;
    let before = opt.clone();
    opt.on_depth_transition(0.25);
    let pairs = before.m.iter().chain(&before.v).zip(opt.m.iter().chain(&opt.v));
    let mut worst = 0.0_f64;
    for (a, b) in pairs {
        for (&x, &y) in a.iter().zip(b) {
            worst = worst.max((0.25 * x as f64 - y as f64).abs());
        }
    }
    t.close("max |scaled - 0.25 x|", worst, 0.0);
    t.close("step count kept", opt.t as f64, 17.0);
    opt.on_depth_transition(0.0);
    let total: f64 = opt.m.iter().chain(&opt.v).flatten().map(|&x| (x as f64).abs()).sum();
    t.close("moments after reset", total, 0.0);
    t.close("step count after reset", opt.t as f64, 0.0);
    t.outcome("moment")
}

pub const ALL: &[(&str, fn() -> Outcome)] = &[
    ("depth_targets", depth_targets),
    ("lr_schedule", lr_schedule),
    ("transition_ramp", transition_ramp),
    ("clip_bound", clip_bound),
    ("ema_closed_form", ema_closed_form),
    ("moment_rescale", moment_rescale),
];
