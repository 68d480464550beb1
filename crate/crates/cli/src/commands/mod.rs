pub mod cam;
pub mod classify;
pub mod report;
pub mod segment_apply;
pub mod segment_train;
pub mod synth;
