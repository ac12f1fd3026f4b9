//! Seismic facies from texture attributes: GLCM attributes, RBF gap filling,
//! a generative topographic map trained by EM, k-means labeling and slice
//! rendering, with a PCA baseline and a synthetic volume generator.

pub mod attributes;
pub mod config;
pub mod facies;
pub mod glcm;
pub mod gtm;
pub mod pca;
pub mod pipeline;
pub mod rbf;
pub mod render;
pub mod synth;
pub mod volume;

pub use attributes::{AttributeTable, TextureVector, ATTRIBUTE_NAMES};
pub use config::PipelineConfig;
pub use facies::{adjusted_rand_index, assemble_map, cluster_latent, ClusterModel, FaciesMap};
pub use glcm::{compute_attribute_table, GlcMatrix, TextureSettings};
pub use gtm::{train, GtmModel, GtmSettings, TrainOutcome};
pub use pca::linear_baseline;
pub use pipeline::{PipelineError, Stage};
pub use rbf::{fill_missing, RbfSettings};
pub use synth::{generate_synthetic, SyntheticLayout};
pub use volume::{load_volume, save_volume, Orientation, SeismicVolume, VolumeHeader};
