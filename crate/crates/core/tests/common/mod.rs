#![allow(dead_code)]

pub mod gradcheck;
pub mod model_checks;
pub mod primitives;
pub mod puzzle_checks;
pub mod schedule_checks;
