//! Liquid perception pipeline: a 2D free-surface lattice-Boltzmann pouring
//! simulator, a renderer that hides liquid behind refraction cues while
//! emitting pixel-exact multi-label ground truth, fully-convolutional
//! single-frame / multi-frame / convolutional-LSTM networks trained with a
//! small reverse-mode autodiff engine, and slack-tolerant pixel
//! precision/recall evaluation.

pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod pnm;
pub mod render;
pub mod sim;
pub mod tensor;
pub mod train;
