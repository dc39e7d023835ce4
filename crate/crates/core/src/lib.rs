//! Cross-attention explanations for a multi-camera set-prediction detector.
//!
//! The crate covers the full loop: synthetic panoramic scenes
//! ([`scenegen`]), a small decoder-only detector with recorded attention
//! ([`detector`]), reverse-mode gradients of detection outputs with respect
//! to attention probabilities ([`autograd`]), saliency generators
//! ([`saliency`]) and perturbation-based evaluation ([`evalharness`]).
//!
//! ```no_run
//! use xattn::detector::{random_init, ModelConfig};
//! use xattn::saliency::{explain, ExplainOptions, Method};
//! use xattn::scenegen::{generate_scene, ScenegenParams};
//!
//! let scene = generate_scene(7, &ScenegenParams::default())?;
//! let weights = random_init(0, &ModelConfig::default())?;
//! let map = explain(&weights, &scene, Method::RawMax, &ExplainOptions::default())?;
//! println!("{} cameras", map.per_camera.len());
//! # Ok::<(), xattn::Error>(())
//! ```

pub mod atns;
pub mod autograd;
pub mod detector;
pub mod error;
pub mod evalharness;
pub mod saliency;
pub mod scenegen;
pub mod tensor;

pub use error::{Error, Result};
