//! Synthetic reference-confusion benchmark and a trainable attention head.

pub mod bench;
pub mod gradcheck;
pub mod layer;
pub mod task;

pub use bench::{run_bench, BenchConfig, BenchReport, TrainParams};
pub use gradcheck::{grad_check_draw, GradCheckDraw};
pub use layer::{layer_backward, layer_forward, train_binding, ForwardCache, Gradients, ToyAttnLayer, TrainReport};
pub use task::{gen_confusion_task, run_retrieval, RetrievalResult, SynthTask, TaskParams};
