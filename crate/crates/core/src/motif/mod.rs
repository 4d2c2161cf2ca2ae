//! Causal network motif counting and representation vectors.

mod counts;
mod representation;
mod schema;

pub use counts::{count_causal_motifs, MotifCounts, MotifStructure, SamplingConfig};
pub use representation::{
    build_representation_matrix, reference_representations, reference_uniforms, ReferenceRepresentations,
    RepresentationBuilder, RepresentationMatrix, UniformSource,
};
pub use schema::{Dim, DimRole, MotifSchema, Shape, DEFAULT_ATTR};
