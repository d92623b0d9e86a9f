//! Clip ingestion, augmentation, the tensor file format and synthetic data.

pub mod augment;
pub mod manifest;
pub mod synth;
pub mod video;
pub mod vtf;

pub use augment::{apply_augment, augment_clip, flip_horizontal, AugmentDraw, AugmentSpec};
pub use manifest::{load_manifest, load_manifest_for, load_records, read_manifest, write_manifest, Clip, Dataset, Record};
pub use synth::{motion_features, synth_generate, SynthDatasetSpec, SynthSpec};
pub use video::{crop_with_boxes, resize_video, segment_clips, BBox, Video};
pub use vtf::{read_tensor_file, write_tensor_file, TensorData, VtfArray};
