pub mod advgen;
pub mod annotation;
pub mod anyres;
pub mod eval;
pub mod geometry;
pub mod grouping;
pub mod io;
pub mod llm;
pub mod mixstats;
pub mod pipeline;
pub mod scalar;
pub mod seeds;
pub mod som;
pub mod task;
pub mod taskgen;

pub use geometry::{NormBBox, Rect};

/// Pixel box in `f64`, the default throughout the toolkit.
pub type BBox = Rect<f64>;
pub type BBoxF32 = Rect<f32>;
/// Box with exact rational coordinates.
pub type ExactBBox = Rect<num_rational::Ratio<i64>>;
pub type TileTransform = anyres::Tile<f64>;
