pub mod augmentation;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod seq2seq;
pub mod synth;
pub mod tensor;
pub mod trainer;
