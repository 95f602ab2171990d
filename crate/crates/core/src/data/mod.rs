//! Image ingestion, colour handling, augmentation, patch extraction and
//! curriculum construction.

pub mod augment;
pub mod color;
pub mod curriculum;
pub mod io;
pub mod patches;
pub mod synthetic;

pub use augment::{augment, rotate180, rotate45, rotate90, Channel, PlaneImage};
pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, RgbImage};
pub use curriculum::{algd, build_curriculum, CurriculumPlan, Stage, DEFAULT_LAMBDAS};
pub use io::{list_pngs, load_png, quantize, save_gray_png, save_rgb_png, LoadedImage};
pub use patches::{extract_patches, AlgdOn, PatchConfig, PatchPair, PatchSet};
pub use synthetic::synthetic_scene;
