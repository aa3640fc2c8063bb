//! Run configuration, dataset chunking and the training and evaluation
//! loops behind the command-line tool.

mod config;
pub mod dataset;
mod train;

pub use config::{DataConfig, OptimConfig, RunConfig};
pub use dataset::{chunk_dataset, chunk_index, load_clip, load_clips, write_scene, ChunkMode, ChunkRef, Clip, Example};
pub use train::{
    checkpoint_path, copy_matching, evaluate_clips, evaluate_run, model_input, predict_clips, train, train_on,
    EpochRecord, RunReport, Trainer,
};
