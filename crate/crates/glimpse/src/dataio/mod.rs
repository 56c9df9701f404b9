//! Dataset ingestion: the STL-10 binary layout, stratified train/val splits,
//! crop augmentation, and foreground-confidence mask handling.
//!
//! STL-10 binary records are 3 channel planes of 96×96 unsigned bytes; within
//! each plane pixels are stored column-major, so axes are transposed on
//! decode. Labels live in a parallel file, one byte per image, 1–10 on disk
//! and 0–9 in memory.

mod crop;

pub use crop::{
    crop_and_resize, crop_and_resize_map, random_resized_crop, sample_crop_rect, CropParams,
    CropRect,
};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::ImageBuffer;

pub const STL10_SIZE: usize = 96;
pub const STL10_CHANNELS: usize = 3;
/// 3 * 96 * 96 bytes.
pub const STL10_RECORD_BYTES: usize = STL10_CHANNELS * STL10_SIZE * STL10_SIZE;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image decode: {0}")]
    Png(#[from] image::ImageError),
    #[error("{path}: {len} bytes is not a whole number of {record}-byte records")]
    TruncatedFile { path: PathBuf, len: usize, record: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label byte {0} outside 1..=10")]
    BadLabel(u8),
    #[error("split {split:?} has no label file")]
    NoLabelsForSplit { split: Split },
    #[error("expected {want} images, found {got}")]
    WrongSplitSize { want: usize, got: usize },
    #[error("split is not class-balanced: class {class} has {got} members, expected {want}")]
    ClassImbalance { class: u8, want: usize, got: usize },
    #[error("confidence map {index} missing from {dir}")]
    MissingConfidence { index: usize, dir: PathBuf },
    #[error("confidence map {index}: {got_h}x{got_w}, expected {want_h}x{want_w}")]
    ConfidenceSize { index: usize, want_h: usize, want_w: usize, got_h: usize, got_w: usize },
    #[error("confidence value {0} outside [0,1]")]
    ConfidenceRange(f32),
    #[error("degenerate range: min {0} > max {1}")]
    DegenerateRange(f64, f64),
    #[error("no files found in {0}")]
    EmptyDir(PathBuf),
    #[error("malformed split index file: {0}")]
    MalformedSplitIndex(String),
    #[error("split index not increasing or out of bounds at value {0}")]
    BadSplitIndex(usize),
}

/// Which STL-10 split to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Unlabeled,
    Train,
    Test,
}

impl Split {
    fn image_file(self) -> &'static str {
        match self {
            Split::Unlabeled => "unlabeled_X.bin",
            Split::Train => "train_X.bin",
            Split::Test => "test_X.bin",
        }
    }
    fn label_file(self) -> Option<&'static str> {
        match self {
            Split::Unlabeled => None,
            Split::Train => Some("train_y.bin"),
            Split::Test => Some("test_y.bin"),
        }
    }
}

/// Where and what to load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub root_path: PathBuf,
    pub split: Split,
    pub with_labels: bool,
}

/// An in-memory image collection stored as raw u8 records (STL-10 layout),
/// decoded to float images on access.
#[derive(Debug, Clone)]
pub struct ImageSet {
    height: usize,
    width: usize,
    channels: usize,
    records: Vec<u8>,
    labels: Option<Vec<u8>>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.records.len() / self.record_bytes()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    fn record_bytes(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn get(&self, i: usize) -> ImageBuffer {
        let rb = self.record_bytes();
        decode_record(&self.records[i * rb..(i + 1) * rb], self.channels, self.height, self.width)
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Quantize float images into a record-backed set (round-to-nearest byte).
    pub fn from_images(images: &[ImageBuffer], labels: Option<Vec<u8>>) -> Self {
        assert!(!images.is_empty());
        let (c, h, w) = images[0].data().dim();
        let mut records = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            assert_eq!(img.data().dim(), (c, h, w));
            records.extend_from_slice(&encode_record(img));
        }
        if let Some(l) = &labels {
            assert_eq!(l.len(), images.len());
        }
        Self { height: h, width: w, channels: c, records, labels }
    }

    pub fn from_records(
        records: Vec<u8>,
        channels: usize,
        height: usize,
        width: usize,
        labels: Option<Vec<u8>>,
    ) -> Self {
        assert_eq!(records.len() % (channels * height * width), 0);
        Self { height, width, channels, records, labels }
    }

    /// Write the raw records in STL-10 binary layout.
    pub fn write_images_bin(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, &self.records)?;
        Ok(())
    }

    /// Write labels as on-disk bytes (1..=10).
    pub fn write_labels_bin(&self, path: &Path) -> Result<(), DataError> {
        let labels = self.labels.as_ref().expect("no labels to write");
        let disk: Vec<u8> = labels.iter().map(|&l| l + 1).collect();
        std::fs::write(path, disk)?;
        Ok(())
    }

    /// A new set containing the selected indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        let rb = self.record_bytes();
        let mut records = Vec::with_capacity(indices.len() * rb);
        for &i in indices {
            records.extend_from_slice(&self.records[i * rb..(i + 1) * rb]);
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect::<Vec<u8>>());
        ImageSet { height: self.height, width: self.width, channels: self.channels, records, labels }
    }
}

/// Decode one STL-10 record: channel planes, column-major within a plane.
pub fn decode_record(bytes: &[u8], channels: usize, height: usize, width: usize) -> ImageBuffer {
    assert_eq!(bytes.len(), channels * height * width);
    let plane = height * width;
    ImageBuffer::from_fn(channels, height, width, |c, y, x| {
        bytes[c * plane + x * height + y] as f32 / 255.0
    })
}

/// Encode an image into the STL-10 record layout (exact inverse of
/// [`decode_record`] for byte-backed data; float data rounds to the nearest
/// byte).
pub fn encode_record(img: &ImageBuffer) -> Vec<u8> {
    let (c, h, w) = img.data().dim();
    let plane = h * w;
    let mut out = vec![0u8; c * plane];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ch * plane + x * h + y] = (img.get(ch, y, x) * 255.0).round() as u8;
            }
        }
    }
    out
}

/// Load an STL-10 split from the canonical binary files.
pub fn load_stl10(spec: &DatasetSpec) -> Result<ImageSet, DataError> {
    let img_path = spec.root_path.join(spec.split.image_file());
    let records = std::fs::read(&img_path)?;
    if records.len() % STL10_RECORD_BYTES != 0 {
        return Err(DataError::TruncatedFile {
            path: img_path,
            len: records.len(),
            record: STL10_RECORD_BYTES,
        });
    }
    let n = records.len() / STL10_RECORD_BYTES;

    let labels = if spec.with_labels {
        let name = spec
            .split
            .label_file()
            .ok_or(DataError::NoLabelsForSplit { split: spec.split })?;
        let raw = std::fs::read(spec.root_path.join(name))?;
        if raw.len() != n {
            return Err(DataError::CountMismatch { images: n, labels: raw.len() });
        }
        let mut mapped = Vec::with_capacity(n);
        for b in raw {
            if !(1..=10).contains(&b) {
                return Err(DataError::BadLabel(b));
            }
            mapped.push(b - 1);
        }
        Some(mapped)
    } else {
        None
    };

    Ok(ImageSet {
        height: STL10_SIZE,
        width: STL10_SIZE,
        channels: STL10_CHANNELS,
        records,
        labels,
    })
}

/// Seed-deterministic, class-stratified 4000/1000 split of the 5000-image
/// labeled training set. Returns sorted (train, val) index lists; disjoint and
/// exhaustive.
pub fn split_train_val(set: &ImageSet, seed_val: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    const TOTAL: usize = 5000;
    const CLASSES: usize = 10;
    const PER_CLASS: usize = TOTAL / CLASSES;
    const VAL_PER_CLASS: usize = 100;

    if set.len() != TOTAL {
        return Err(DataError::WrongSplitSize { want: TOTAL, got: set.len() });
    }
    let labels = set.labels().ok_or(DataError::NoLabelsForSplit { split: Split::Train })?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.len() != PER_CLASS {
            return Err(DataError::ClassImbalance {
                class: c as u8,
                want: PER_CLASS,
                got: members.len(),
            });
        }
    }
    let mut train = Vec::with_capacity(TOTAL - CLASSES * VAL_PER_CLASS);
    let mut val = Vec::with_capacity(CLASSES * VAL_PER_CLASS);
    for (c, members) in by_class.iter().enumerate() {
        let mut shuffled = members.clone();
        use rand::seq::SliceRandom;
        let mut rng = crate::seed::rng(seed_val, "train-val-split", &[c as u64]);
        shuffled.shuffle(&mut rng);
        val.extend_from_slice(&shuffled[..VAL_PER_CLASS]);
        train.extend_from_slice(&shuffled[VAL_PER_CLASS..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// One foreground-confidence map, aligned with a dataset image.
#[derive(Debug, Clone)]
pub struct SegmentationConfidenceMap {
    values: Array2<f32>,
    image_index: usize,
}

impl SegmentationConfidenceMap {
    pub fn from_values(values: Array2<f32>, image_index: usize) -> Result<Self, DataError> {
        for &v in values.iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(DataError::ConfidenceRange(v));
            }
        }
        Ok(Self { values, image_index })
    }

    pub fn height(&self) -> usize {
        self.values.dim().0
    }
    pub fn width(&self) -> usize {
        self.values.dim().1
    }
    pub fn values(&self) -> &Array2<f32> {
        &self.values
    }
    pub fn image_index(&self) -> usize {
        self.image_index
    }
}

/// A directory's worth of confidence maps, stored as u8 planes and decoded on
/// access (value = byte / 255).
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    height: usize,
    width: usize,
    planes: Vec<u8>,
}

impl ConfidenceSet {
    pub fn from_planes(planes: Vec<u8>, height: usize, width: usize) -> Self {
        assert_eq!(planes.len() % (height * width), 0);
        Self { height, width, planes }
    }

    pub fn len(&self) -> usize {
        self.planes.len() / (self.height * self.width)
    }
    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, i: usize) -> SegmentationConfidenceMap {
        let plane = self.height * self.width;
        let bytes = &self.planes[i * plane..(i + 1) * plane];
        let values = Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            bytes[y * self.width + x] as f32 / 255.0
        });
        SegmentationConfidenceMap { values, image_index: i }
    }

    /// Write each map as `{index}.png` (8-bit grayscale) into a directory.
    pub fn write_pngs(&self, dir: &Path) -> Result<(), DataError> {
        std::fs::create_dir_all(dir)?;
        let plane = self.height * self.width;
        for i in 0..self.len() {
            let bytes = self.planes[i * plane..(i + 1) * plane].to_vec();
            let img =
                image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
                    .expect("plane size");
            img.save(dir.join(format!("{i}.png")))?;
        }
        Ok(())
    }
}

/// Load `{index}.png` confidence maps (8-bit grayscale, one per image, dense
/// indices starting at 0). Values decode as byte/255.
pub fn load_confidence_masks(dir: &Path) -> Result<ConfidenceSet, DataError> {
    let mut indices = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            if let Ok(idx) = stem.parse::<usize>() {
                indices.push(idx);
            }
        }
    }
    if indices.is_empty() {
        return Err(DataError::EmptyDir(dir.to_path_buf()));
    }
    indices.sort_unstable();
    let n = *indices.last().unwrap() + 1;

    let mut height = 0usize;
    let mut width = 0usize;
    let mut planes = Vec::new();
    let mut present = vec![false; n];
    for &i in &indices {
        present[i] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(DataError::MissingConfidence { index: missing, dir: dir.to_path_buf() });
    }

    for i in 0..n {
        let img = image::open(dir.join(format!("{i}.png")))?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if i == 0 {
            height = h;
            width = w;
        } else if (h, w) != (height, width) {
            return Err(DataError::ConfidenceSize {
                index: i,
                want_h: height,
                want_w: width,
                got_h: h,
                got_w: w,
            });
        }
        planes.extend_from_slice(img.as_raw());
    }
    Ok(ConfidenceSet { height, width, planes })
}

/// Which images survive a filtering pass, plus a human-readable description
/// of the filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    pub kept_indices: Vec<usize>,
    pub provenance: String,
}

impl SplitIndex {
    /// Plain-text persistence: a `#` header comment, then one index per line.
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = format!("# {}\n", self.provenance);
        for i in &self.kept_indices {
            out.push_str(&format!("{i}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let mut provenance = String::new();
        let mut kept = Vec::new();
        let mut last: Option<usize> = None;
        for line in text.lines() {
            if let Some(comment) = line.strip_prefix('#') {
                provenance = comment.trim().to_string();
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let v: usize = line
                .trim()
                .parse()
                .map_err(|_| DataError::MalformedSplitIndex(line.to_string()))?;
            if let Some(prev) = last {
                if v <= prev {
                    return Err(DataError::BadSplitIndex(v));
                }
            }
            last = Some(v);
            kept.push(v);
        }
        Ok(Self { kept_indices: kept, provenance })
    }
}

/// Confidence threshold above which a pixel counts as confidently foreground.
pub const SEGMENTABLE_CONFIDENCE: f32 = 0.8;
/// Minimum number of confident pixels for an image to be considered
/// segmentable.
pub const SEGMENTABLE_MIN_PIXELS: usize = 100;

/// Keep image `i` iff at least 100 pixels reach confidence 0.8. The
/// discarded fraction is reported in the provenance string.
pub fn filter_segmentable(maps: &ConfidenceSet) -> SplitIndex {
    let mut kept = Vec::new();
    for i in 0..maps.len() {
        let m = maps.get(i);
        let confident = m.values().iter().filter(|&&v| v >= SEGMENTABLE_CONFIDENCE).count();
        if confident >= SEGMENTABLE_MIN_PIXELS {
            kept.push(i);
        }
    }
    let discarded = maps.len() - kept.len();
    let provenance = format!(
        "filter=segmentable confidence>={SEGMENTABLE_CONFIDENCE} min_pixels={SEGMENTABLE_MIN_PIXELS} \
         kept={}/{} discarded={} ({:.2}%)",
        kept.len(),
        maps.len(),
        discarded,
        100.0 * discarded as f64 / maps.len().max(1) as f64
    );
    SplitIndex { kept_indices: kept, provenance }
}
