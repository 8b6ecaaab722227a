//! Weak-perspective projection, rasterization and synthetic imagery.

pub mod camera;
pub mod image;
pub mod raster;

pub use camera::{ndc_to_pixel, pixel_to_ndc, project_tape, WeakPerspectiveCamera};
pub use image::{noise_background, part_palette, render_sample_image, shading_jitter, Image};
pub use raster::{face_part_labels, project_to_pixels, rasterize, RasterOutput};
