//! Parametric biped character model.
//!
//! A character is produced by three composed stages: a linear shape space
//! over a fixed mesh topology ([`shape`]), a skeletal linear-blend-skinning
//! pose stage ([`pose`]) and a linear UV texture space ([`texture`]).
//! [`fit`] recovers shape and pose parameters from geometric targets, and
//! [`synth`] generates a procedural character family with known ground
//! truth for every stage.

pub mod api;
pub mod body;
pub mod bundle;
pub mod error;
pub mod eye;
pub mod fit;
pub mod mesh;
pub mod metrics;
pub mod pca;
pub mod pose;
pub mod rig;
pub mod rng;
pub mod shape;
pub mod synth;
pub mod texture;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Mat4 = nalgebra::Matrix4<f64>;
