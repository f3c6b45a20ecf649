//! Image and annotation types, dataset I/O, and the phantom generator.

mod annotation;
pub mod io;
pub mod phantom;
mod raster;

pub use annotation::{mm_to_pixels, rasterize_polygon, MammogramCase, MassAnnotation};
pub use io::{load_case, save_case};
pub use phantom::{generate_phantom, standard_suite, standard_suite_specs, PhantomSpec};
pub use raster::{dice, BinaryMask, GrayImage16, Region};
