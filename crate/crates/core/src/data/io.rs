use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{DataError, Image, Sequence};
use crate::geometry::BBox;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

pub fn frame_name(index: usize) -> String {
    format!("{:06}.ppm", index + 1)
}

/// Parses `x,y,w,h` lines; tabs or spaces are accepted as separators too.
/// Blank lines are skipped.
pub fn parse_groundtruth(text: &str, file: &str) -> Result<Vec<BBox>, DataError> {
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DataError::Parse { file: file.to_string(), line: i + 1, msg };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse::<f64>().map_err(|_| err(format!("not a number: {f:?}")))?;
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]);
        if !b.is_valid() {
            return Err(err(format!("box {line:?} must have finite coordinates and positive size")));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn read_ppm(path: &Path) -> Result<Image, DataError> {
    let bad = |msg: String| DataError::Image { path: path.display().to_string(), msg };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Pnm).map_err(|e| bad(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Image::new(w, h, rgb.into_raw()).ok_or_else(|| bad("empty image".into()))
}

pub fn write_ppm(img: &Image, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&img.data, img.width as u32, img.height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| DataError::Image { path: path.display().to_string(), msg: e.to_string() })?;
    fs::write(path, buf).map_err(io_err(path))
}

fn read_boxes(dir: &Path) -> Result<Vec<BBox>, DataError> {
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let text = fs::read_to_string(&gt_path).map_err(io_err(&gt_path))?;
    let boxes = parse_groundtruth(&text, &gt_path.display().to_string())?;
    if boxes.is_empty() {
        return Err(DataError::Invalid(format!("{} has no boxes", gt_path.display())));
    }
    let frames = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
        .count();
    if frames != boxes.len() {
        return Err(DataError::Invalid(format!(
            "{}: {} frames but {} ground-truth boxes",
            dir.display(),
            frames,
            boxes.len()
        )));
    }
    for i in 0..boxes.len() {
        let p = dir.join(frame_name(i));
        if !p.is_file() {
            return Err(DataError::Invalid(format!("missing frame {}", p.display())));
        }
    }
    Ok(boxes)
}

fn dir_name(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

/// Loads every frame of a sequence directory into memory.
pub fn load_sequence(dir: &Path) -> Result<Sequence, DataError> {
    let boxes = read_boxes(dir)?;
    let frames = (0..boxes.len()).map(|i| read_ppm(&dir.join(frame_name(i)))).collect::<Result<Vec<_>, _>>()?;
    Sequence::new(dir_name(dir), frames, boxes)
}

pub fn write_boxes(boxes: &[BBox], path: &Path) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    for b in boxes {
        writeln!(f, "{},{},{},{}", b.x, b.y, b.w, b.h).map_err(io_err(path))?;
    }
    Ok(())
}

pub fn save_sequence(seq: &Sequence, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        write_ppm(frame, &dir.join(frame_name(i)))?;
    }
    write_boxes(&seq.boxes, &dir.join(GROUNDTRUTH_FILE))
}

/// Random access to the frames of a sequence.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&mut self, index: usize) -> Result<Image, DataError>;
}

impl FrameSource for Sequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&mut self, index: usize) -> Result<Image, DataError> {
        self.frames.get(index).cloned().ok_or_else(|| DataError::Invalid(format!("frame {index} out of range")))
    }
}

/// Frames read from disk on demand; only the annotations are held in memory.
pub struct DirFrames {
    dir: PathBuf,
    pub name: String,
    pub boxes: Vec<BBox>,
}

impl DirFrames {
    pub fn open(dir: &Path) -> Result<Self, DataError> {
        let boxes = read_boxes(dir)?;
        Ok(Self { dir: dir.to_path_buf(), name: dir_name(dir), boxes })
    }
}

impl FrameSource for DirFrames {
    fn len(&self) -> usize {
        self.boxes.len()
    }

    fn frame(&mut self, index: usize) -> Result<Image, DataError> {
        read_ppm(&self.dir.join(frame_name(index)))
    }
}
