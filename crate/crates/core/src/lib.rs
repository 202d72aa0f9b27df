#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Masked and mixed-view pre-training objectives under one interface, with
//! a brute-force mutual-information oracle for small discrete models.

pub mod autograd;
pub mod error;
pub mod harness;
pub mod heads;
pub mod image_ops;
pub mod m3i;
pub mod methods;
pub mod model;
pub mod nn;
pub mod oracle;
pub mod pipeline;
pub mod rng;
pub mod transforms;

pub use error::{Error, Result};
pub use heads::{boltzmann_nll, gaussian_nll, HeadFamily, Mechanism, PredictionHead, RegularizerSpec};
pub use methods::{all_variants, get_method, validate_method, CATALOG, MethodConfig};
pub use model::{Image, Representation, Sample, TransformDescriptor, TransformKind, ViewRecord};
pub use pipeline::Model;
pub use transforms::{AugmentSpec, MaskPattern};
