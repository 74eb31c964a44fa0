pub mod audio_io;
pub mod bench;
pub mod cli;
pub mod corpus;
pub mod dsp;
pub mod embedder;
pub mod eval;
pub mod pretrain;
pub mod probe;
pub mod rng;
pub mod synthetic;
