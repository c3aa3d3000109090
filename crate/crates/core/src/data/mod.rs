//! Sequences of frames with ground-truth boxes: loading, synthesis and
//! training-tuple sampling.

mod image;
mod io;
mod sampler;
mod synth;

pub use self::image::{crop_tensor, Image};
pub use io::{
    frame_name, load_sequence, parse_groundtruth, read_ppm, save_sequence, write_boxes, write_ppm, DirFrames,
    FrameSource, GROUNDTRUTH_FILE,
};
pub use sampler::{sample_tuple, SamplerConfig, TrainingTuple};
pub use synth::{generate_synthetic, SynthConfig};

use crate::geometry::BBox;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("image error in {path}: {msg}")]
    Image { path: String, msg: String },
    #[error("invalid sequence: {0}")]
    Invalid(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Frames with one ground-truth box each.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Image>,
    pub boxes: Vec<BBox>,
}

impl Sequence {
    pub fn new(name: impl Into<String>, frames: Vec<Image>, boxes: Vec<BBox>) -> Result<Self, DataError> {
        let seq = Self { name: name.into(), frames, boxes };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.frames.len() != self.boxes.len() {
            return Err(DataError::Invalid(format!(
                "{}: {} frames but {} boxes",
                self.name,
                self.frames.len(),
                self.boxes.len()
            )));
        }
        if self.frames.is_empty() {
            return Err(DataError::Invalid(format!("{}: no frames", self.name)));
        }
        if let Some(i) = self.boxes.iter().position(|b| !b.is_valid()) {
            return Err(DataError::Invalid(format!("{}: box {} has non-positive size", self.name, i + 1)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
