pub mod ablation;
pub mod cli;
pub mod efficiency;
pub mod task;
pub mod train;
