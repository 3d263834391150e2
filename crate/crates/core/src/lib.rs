//! Turns primitive-style figure sketches into posed 3D mannequins.
//!
//! The crate covers the whole loop: a fixed-shape skeleton and primitive
//! mannequin ([`body_model`]), clean vector sketch rendering with
//! ray-cast occlusion ([`render`]), part-aware sketch augmentation
//! ([`augment`]), a geometric sketch interpreter ([`interpret`]), 3D pose
//! lifting by damped least squares ([`lift`]), FK/IK refinement
//! ([`kinematics`]), evaluation metrics ([`metrics`]), batch dataset
//! tooling ([`pipeline`]) and an HTTP session API ([`service`]).

// `!(x > 0.0)` also rejects NaN, which is the point.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod body_model;
pub mod camera;
pub mod render;
pub mod augment;
pub mod metrics;
pub mod kinematics;
pub mod lift;
pub mod interpret;
pub mod pipeline;
pub mod service;
