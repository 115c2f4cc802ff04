//! On-disk formats for features, labels, class mappings and splits.
//!
//! Feature files are little-endian binary: the magic `ASRF`, a `u32`
//! version (1), `u32` frame count `T`, `u32` dimension `D`, then `T * D`
//! `f32` values frame-major. Probability files reuse the same layout.
//!
//! A dataset directory looks like:
//!
//! ```text
//! <root>/mapping.txt          "<id> <class_name>" per line
//! <root>/features/<video>.feat
//! <root>/labels/<video>.txt   one class name per frame
//! <root>/splits/train.txt     one video id per line
//! <root>/splits/test.txt
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{ClassId, ClassMap, Dataset, DatasetSplit, VideoSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

pub const FEATURE_MAGIC: &[u8; 4] = b"ASRF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

pub fn encode_features(m: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<Matrix<f32>> {
    let fail = |offset: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(fail(0, "bad magic, expected \"ASRF\"".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    if t == 0 || d == 0 {
        return Err(fail(8, format!("empty matrix {t}x{d}")));
    }
    let expected = HEADER_LEN + 4 * t * d;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!(
                "header declares {t}x{d} values ({expected} bytes), file has {} bytes",
                bytes.len()
            ),
        ));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(t, d, data)
}

pub fn write_features(path: &Path, m: &Matrix<f32>) -> Result<()> {
    fs::write(path, encode_features(m)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Matrix<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty trimmed lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

pub fn parse_mapping(text: &str, path: &Path) -> Result<ClassMap> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut entries = Vec::new();
    for (line, l) in content_lines(text) {
        let mut parts = l.split_whitespace();
        let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(
                line,
                format!("expected '<id> <class_name>', got '{l}'"),
            ));
        };
        let id: usize = id
            .parse()
            .map_err(|_| parse_err(line, format!("invalid class id '{id}'")))?;
        entries.push((id, name.to_string(), line));
    }
    let n = entries.len();
    let mut names: Vec<Option<String>> = vec![None; n];
    for (id, name, line) in entries {
        if id >= n {
            return Err(parse_err(line, format!("class id {id} outside 0..{n}")));
        }
        if names[id].replace(name).is_some() {
            return Err(parse_err(line, format!("class id {id} listed twice")));
        }
    }
    ClassMap::new(names.into_iter().map(Option::unwrap).collect())
}

pub fn read_mapping(path: &Path) -> Result<ClassMap> {
    parse_mapping(&read_text(path)?, path)
}

pub fn format_mapping(classes: &ClassMap) -> String {
    classes
        .names()
        .iter()
        .enumerate()
        .map(|(i, n)| format!("{i} {n}\n"))
        .collect()
}

pub fn write_mapping(path: &Path, classes: &ClassMap) -> Result<()> {
    fs::write(path, format_mapping(classes)).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(text: &str, classes: &ClassMap, path: &Path) -> Result<Vec<ClassId>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|name| classes.id_of(name))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::UnknownClass(name) => {
                Error::UnknownClass(format!("{name}' in '{}", path.display()))
            }
            other => other,
        })
}

pub fn read_labels(path: &Path, classes: &ClassMap) -> Result<Vec<ClassId>> {
    parse_labels(&read_text(path)?, classes, path)
}

pub fn write_labels(path: &Path, labels: &[ClassId], classes: &ClassMap) -> Result<()> {
    let text: String = labels
        .iter()
        .map(|&c| format!("{}\n", classes.name(c)))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(content_lines(&read_text(path)?)
        .map(|(_, l)| l.to_string())
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let text: String = ids.iter().map(|id| format!("{id}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads one video from a feature file and a label file. The video id is
/// the feature file's stem.
pub fn load_video_sample(
    feature_path: &Path,
    label_path: &Path,
    classes: &ClassMap,
) -> Result<VideoSample> {
    let features = read_features(feature_path)?;
    let labels = read_labels(label_path, classes)?;
    if features.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "feature frames vs label lines",
            left: features.rows(),
            right: labels.len(),
        });
    }
    let id = feature_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    VideoSample::new(id, features, labels, classes.len())
}

/// Path conventions inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn mapping(&self) -> PathBuf {
        self.root.join("mapping.txt")
    }

    pub fn features(&self, id: &str) -> PathBuf {
        self.root.join("features").join(format!("{id}.feat"))
    }

    pub fn labels(&self, id: &str) -> PathBuf {
        self.root.join("labels").join(format!("{id}.txt"))
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join("splits").join(format!("{name}.txt"))
    }
}

/// Writes a dataset and its split in the directory layout above.
pub fn save_dataset(root: &Path, dataset: &Dataset, split: &DatasetSplit) -> Result<()> {
    let layout = DatasetLayout::new(root);
    for sub in ["features", "labels", "splits"] {
        let dir = root.join(sub);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    write_mapping(&layout.mapping(), &dataset.classes)?;
    for v in &dataset.videos {
        write_features(&layout.features(&v.id), &v.features)?;
        write_labels(&layout.labels(&v.id), &v.labels, &dataset.classes)?;
    }
    write_id_list(&layout.split("train"), &split.train)?;
    write_id_list(&layout.split("test"), &split.test)
}

/// Loads every video named in the split files. Files are read in parallel.
pub fn load_dataset(root: &Path) -> Result<(Dataset, DatasetSplit)> {
    let layout = DatasetLayout::new(root);
    let classes = read_mapping(&layout.mapping())?;
    let split = DatasetSplit {
        train: read_id_list(&layout.split("train"))?,
        test: read_id_list(&layout.split("test"))?,
    };
    let ids: Vec<&String> = split.train.iter().chain(&split.test).collect();
    let videos = par::map(&ids, |id| {
        load_video_sample(&layout.features(id), &layout.labels(id), &classes)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let dataset = Dataset::new(classes, videos)?;
    split.validate(&dataset)?;
    Ok((dataset, split))
}
