//! Mesh-based classification of CAE parts.
//!
//! A part arrives as an FEA shell mesh (GRID / CQUAD4 / CTRIA3 cards). It is
//! turned into a self-looped undirected graph with per-part scaled xyz node
//! features and classified by one of three networks: a graph convolutional
//! network, a fully connected network over the zero-padded flattened
//! coordinates, or a PointNet-style point-set network. Around that sit a
//! small reverse-mode autodiff engine, a parametric plate generator that
//! stands in for a real part catalog, the geometric variant transforms used
//! for robustness testing, and the training / evaluation / reporting loop.

pub mod augment;
pub mod graph_build;
pub mod mesh_io;
pub mod models;
pub mod ndcore;
pub mod synthgen;
pub mod train_eval;

pub use graph_build::{mesh_to_graph, norm_coeffs, scale_features, Graph, NodeFeatures, NormCoeff};
pub use mesh_io::{parse_mesh, validate, write_mesh, Element, ElementKind, Mesh, Node};
