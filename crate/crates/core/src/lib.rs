//! Adversarial texture attacks on 3D objects, measured across renderers.
//!
//! The pipeline: procedural meshes and textures ([`mesh`], [`texture`]),
//! a multi-view camera rig ([`scene`]), a differentiable diffuse renderer
//! ([`render`]) and a non-differentiable shaded/gamma renderer ([`target`]),
//! a small CNN classifier ([`classifier`]), the EOT-PGD texture attack
//! ([`attack`]) with optional saliency masking ([`saliency`]), and
//! transferability metrics plus reporting ([`metrics`], [`report`]).

pub mod attack;
pub mod classifier;
pub mod cli;
pub mod manifest;
pub mod mesh;
pub mod metrics;
pub mod obj;
pub mod raster;
pub mod render;
pub mod report;
pub mod saliency;
pub mod scene;
pub mod target;
pub mod texture;
