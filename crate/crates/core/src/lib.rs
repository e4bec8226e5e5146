//! Cone photoreceptor mosaic analysis.
//!
//! Converts cone-centre annotations into Voronoi regions or circles, scores
//! instance segmentations, measures cone density and mean cone area against
//! retinal eccentricity, and fits an asymmetric power law to the resulting
//! density profile. A synthetic mosaic generator provides ground truth for
//! all of it.

pub mod geometry;
pub mod maskops;
pub mod metrics;
pub mod density;
pub mod fit;
pub mod synth;
