//! Handwritten character recognition from gradient-change zoning features.
//!
//! A glyph image goes through
//! [`binarize`](imagecore::binarize) → [`bounding_box`](imagecore::bounding_box)
//! → [`crop`](imagecore::crop) → [`scale_to`](imagecore::scale_to) (100×100)
//! → [`thin`](thinning::thin) → [`extract_features`](features::extract_features)
//! → [`normalize`](features::normalize), and the resulting vectors train a
//! one-hidden-layer perceptron ([`neuralnet`]) with full-batch nonlinear
//! conjugate gradient ([`cgtrain`]). [`harness`] ties the stages together,
//! generates synthetic handwriting and runs accuracy sweeps.

pub mod cgtrain;
pub mod features;
pub mod harness;
pub mod imagecore;
pub mod neuralnet;
pub mod thinning;
