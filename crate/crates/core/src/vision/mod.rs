//! Hand segmentation and frame descriptors.

mod color;
mod hog;
pub mod io;
mod mask;
mod pca;
mod seq;

pub use color::{
    fit_hand_color_model, rgb_to_lab, segment_hand, ColorModelConfig, HandColorModel, HandMask,
};
pub use hog::{gradients, gray_plane, hog_descriptor, orientation_bin, HogConfig};
pub use mask::{Mask, Rect};
pub use pca::{fit_pca, PcaModel};
pub use seq::{augment_speeds, resample_speed, stack_window};
