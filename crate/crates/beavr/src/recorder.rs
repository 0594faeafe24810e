//! Episode dataset writer and reader.
//!
//! ```text
//! <root>/meta/info.json          dataset info; its episode count is the commit point
//! <root>/meta/episodes.jsonl     one EpisodeMeta per line
//! <root>/data/episode_000000.parquet   (or .jsonl)
//! ```
//!
//! Finalizing an episode writes the data file, then the episode list, then
//! the info file, each through a temporary file and a rename. Readers trust
//! only the first `total_episodes` entries of the episode list, so a crash at
//! any point leaves the previous dataset readable.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use arrow_array::{Array, ArrayRef, FixedSizeBinaryArray, FixedSizeListArray, Float64Array, Int64Array, RecordBatch};
use arrow_schema::{ArrowError, DataType, Field, Schema};
use beavr_core::dataset::resolve_deltas;
use parquet::arrow::arrow_reader::ParquetRecordBatchReaderBuilder;
use parquet::arrow::ArrowWriter;
use parquet::errors::ParquetError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DataFormat;

pub const CODEBASE_VERSION: &str = "v2.1";
pub const IMAGE_SIDE: usize = 8;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;

pub const STATE: &str = "observation.state";
pub const ACTION: &str = "action";
pub const TIMESTAMP: &str = "timestamp";
pub const FRAME_INDEX: &str = "frame_index";
pub const EPISODE_INDEX: &str = "episode_index";
pub const INDEX: &str = "index";
pub const TASK_INDEX: &str = "task_index";
pub const IMAGE: &str = "observation.images.front";

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Parquet(#[from] ParquetError),
    #[error(transparent)]
    Arrow(#[from] ArrowError),
    #[error("column `{column}` expects {expected} values, got {got}")]
    Schema { column: &'static str, expected: usize, got: usize },
    #[error("cannot finalize an episode with no frames")]
    EmptyEpisode,
    #[error("timestamp {got} precedes the previous frame's {previous}")]
    TimestampOrder { previous: f64, got: f64 },
    #[error("global index {0} is outside the dataset")]
    IndexOutOfRange(u64),
    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("existing dataset does not match: {0}")]
    Mismatch(String),
    #[error("injected fault at {0:?}")]
    Fault(FaultPoint),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RecorderError + '_ {
    move |source| RecorderError::Io { path: path.into(), source }
}

/// Joint-vector slice owned by one robot, in config order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotLayout {
    pub name: String,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub dtype: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub codebase_version: String,
    pub fps: f64,
    pub format: DataFormat,
    pub total_episodes: u64,
    pub total_frames: u64,
    pub robots: Vec<RobotLayout>,
    pub features: BTreeMap<String, Feature>,
    pub tasks: Vec<String>,
    pub data_path: String,
}

impl DatasetInfo {
    pub fn state_dim(&self) -> usize {
        self.robots.iter().map(|r| r.dof).sum()
    }

    pub fn has_images(&self) -> bool {
        self.features.contains_key(IMAGE)
    }

    fn extension(&self) -> &'static str {
        match self.format {
            DataFormat::Parquet => "parquet",
            DataFormat::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_index: u64,
    pub length: u64,
    pub fps: f64,
    pub task: String,
    pub task_index: u64,
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    #[serde(rename = "observation.state")]
    pub observation_state: Vec<f64>,
    pub action: Vec<f64>,
    /// Seconds from episode start.
    pub timestamp: f64,
    pub frame_index: i64,
    pub episode_index: i64,
    pub index: i64,
    pub task_index: i64,
    #[serde(rename = "observation.images.front", default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<u8>>,
}

/// A frame as handed to [`EpisodeWriter::append_frame`]; indices are
/// assigned by the writer.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NewFrame {
    pub observation_state: Vec<f64>,
    pub action: Vec<f64>,
    /// Defaults to `frame_index / fps`.
    pub timestamp: Option<f64>,
    pub image: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub fps: f64,
    pub robots: Vec<RobotLayout>,
    pub format: DataFormat,
    pub images: bool,
}

impl DatasetSpec {
    fn info(&self) -> DatasetInfo {
        let dim = self.robots.iter().map(|r| r.dof).sum();
        let mut features = BTreeMap::new();
        let f = |dtype: &str, shape: Vec<usize>| Feature { dtype: dtype.into(), shape };
        features.insert(STATE.into(), f("float64", vec![dim]));
        features.insert(ACTION.into(), f("float64", vec![dim]));
        features.insert(TIMESTAMP.into(), f("float64", vec![1]));
        for name in [FRAME_INDEX, EPISODE_INDEX, INDEX, TASK_INDEX] {
            features.insert(name.into(), f("int64", vec![1]));
        }
        if self.images {
            features.insert(IMAGE.into(), f("uint8", vec![IMAGE_SIDE, IMAGE_SIDE, 1]));
        }
        let mut info = DatasetInfo {
            codebase_version: CODEBASE_VERSION.into(),
            fps: self.fps,
            format: self.format,
            total_episodes: 0,
            total_frames: 0,
            robots: self.robots.clone(),
            features,
            tasks: Vec::new(),
            data_path: String::new(),
        };
        info.data_path = format!("data/episode_{{episode_index:06}}.{}", info.extension());
        info
    }
}

/// Synthetic 8×8 grayscale placeholder: a diagonal gradient shifted by `seed`.
pub fn placeholder_image(seed: u64) -> Vec<u8> {
    (0..IMAGE_LEN)
        .map(|i| {
            let (r, c) = (i / IMAGE_SIDE, i % IMAGE_SIDE);
            ((r + c) as u64 * 16 + seed).rem_euclid(256) as u8
        })
        .collect()
}

/// Where [`EpisodeWriter::finalize_with_fault`] stops, simulating a crash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Data written to its temporary file, not yet renamed.
    AfterDataTemp,
    /// Data file in place, episode list untouched.
    AfterDataRename,
    /// Episode list updated, info not yet committed.
    AfterEpisodeList,
}

fn meta_dir(root: &Path) -> PathBuf {
    root.join("meta")
}

fn info_path(root: &Path) -> PathBuf {
    meta_dir(root).join("info.json")
}

fn episodes_path(root: &Path) -> PathBuf {
    meta_dir(root).join("episodes.jsonl")
}

fn episode_path(root: &Path, info: &DatasetInfo, episode: u64) -> PathBuf {
    root.join("data").join(format!("episode_{episode:06}.{}", info.extension()))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RecorderError> {
    let tmp = tmp_path(path);
    write_synced(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_synced(path: &Path, bytes: &[u8]) -> Result<(), RecorderError> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

fn read_info(root: &Path) -> Result<DatasetInfo, RecorderError> {
    let path = info_path(root);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| RecorderError::Json { path, source })
}

fn read_episodes(root: &Path, count: u64) -> Result<Vec<EpisodeMeta>, RecorderError> {
    let path = episodes_path(root);
    if count == 0 {
        return Ok(Vec::new());
    }
    let file = File::open(&path).map_err(io_err(&path))?;
    let mut out = Vec::with_capacity(count as usize);
    for line in BufReader::new(file).lines().take(count as usize) {
        let line = line.map_err(io_err(&path))?;
        out.push(serde_json::from_str(&line).map_err(|source| RecorderError::Json { path: path.clone(), source })?);
    }
    if out.len() as u64 != count {
        return Err(RecorderError::Corrupt { path, message: format!("{} episodes listed, info says {count}", out.len()) });
    }
    Ok(out)
}

fn encode_episodes(episodes: &[EpisodeMeta]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in episodes {
        serde_json::to_writer(&mut out, e).expect("episode meta serializes");
        out.push(b'\n');
    }
    out
}

fn list_field() -> Arc<Field> {
    Arc::new(Field::new("item", DataType::Float64, false))
}

fn schema(info: &DatasetInfo) -> Schema {
    let dim = info.state_dim() as i32;
    let mut fields = vec![
        Field::new(STATE, DataType::FixedSizeList(list_field(), dim), false),
        Field::new(ACTION, DataType::FixedSizeList(list_field(), dim), false),
        Field::new(TIMESTAMP, DataType::Float64, false),
        Field::new(FRAME_INDEX, DataType::Int64, false),
        Field::new(EPISODE_INDEX, DataType::Int64, false),
        Field::new(INDEX, DataType::Int64, false),
        Field::new(TASK_INDEX, DataType::Int64, false),
    ];
    if info.has_images() {
        fields.push(Field::new(IMAGE, DataType::FixedSizeBinary(IMAGE_LEN as i32), false));
    }
    Schema::new(fields)
}

fn to_batch(info: &DatasetInfo, frames: &[FrameRecord]) -> Result<RecordBatch, RecorderError> {
    let dim = info.state_dim() as i32;
    let list = |get: fn(&FrameRecord) -> &Vec<f64>| -> Result<ArrayRef, ArrowError> {
        let values: Float64Array = frames.iter().flat_map(|f| get(f).iter().copied()).collect();
        Ok(Arc::new(FixedSizeListArray::try_new(list_field(), dim, Arc::new(values), None)?))
    };
    let ints = |get: fn(&FrameRecord) -> i64| -> ArrayRef { Arc::new(frames.iter().map(get).collect::<Int64Array>()) };
    let mut columns: Vec<ArrayRef> = vec![
        list(|f| &f.observation_state)?,
        list(|f| &f.action)?,
        Arc::new(frames.iter().map(|f| f.timestamp).collect::<Float64Array>()),
        ints(|f| f.frame_index),
        ints(|f| f.episode_index),
        ints(|f| f.index),
        ints(|f| f.task_index),
    ];
    if info.has_images() {
        let images = frames.iter().map(|f| f.image.clone().unwrap_or_else(|| vec![0; IMAGE_LEN]));
        columns.push(Arc::new(FixedSizeBinaryArray::try_from_iter(images)?));
    }
    Ok(RecordBatch::try_new(Arc::new(schema(info)), columns)?)
}

fn encode_parquet(info: &DatasetInfo, frames: &[FrameRecord]) -> Result<Vec<u8>, RecorderError> {
    let batch = to_batch(info, frames)?;
    let mut out = Vec::new();
    let mut writer = ArrowWriter::try_new(&mut out, batch.schema(), None)?;
    writer.write(&batch)?;
    writer.close()?;
    Ok(out)
}

fn encode_jsonl(frames: &[FrameRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        serde_json::to_writer(&mut out, f).expect("frame record serializes");
        out.push(b'\n');
    }
    out
}

fn column<'a, T: 'static>(batch: &'a RecordBatch, name: &str, path: &Path) -> Result<&'a T, RecorderError> {
    batch
        .column_by_name(name)
        .and_then(|c| c.as_any().downcast_ref::<T>())
        .ok_or_else(|| RecorderError::Corrupt { path: path.into(), message: format!("column `{name}` missing or mistyped") })
}

fn list_rows(batch: &RecordBatch, name: &str, path: &Path) -> Result<Vec<Vec<f64>>, RecorderError> {
    let list: &FixedSizeListArray = column(batch, name, path)?;
    let dim = list.value_length() as usize;
    let values = list
        .values()
        .as_any()
        .downcast_ref::<Float64Array>()
        .ok_or_else(|| RecorderError::Corrupt { path: path.into(), message: format!("`{name}` values are not float64") })?;
    let offset = list.offset() * dim;
    Ok((0..list.len()).map(|i| values.values()[offset + i * dim..offset + (i + 1) * dim].to_vec()).collect())
}

fn read_parquet(path: &Path) -> Result<Vec<FrameRecord>, RecorderError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = ParquetRecordBatchReaderBuilder::try_new(file)?.build()?;
    let mut out = Vec::new();
    for batch in reader {
        let batch = batch?;
        let state = list_rows(&batch, STATE, path)?;
        let action = list_rows(&batch, ACTION, path)?;
        let ts: &Float64Array = column(&batch, TIMESTAMP, path)?;
        let ints = |name| column::<Int64Array>(&batch, name, path);
        let (fi, ei, gi, ti) = (ints(FRAME_INDEX)?, ints(EPISODE_INDEX)?, ints(INDEX)?, ints(TASK_INDEX)?);
        let images = batch.column_by_name(IMAGE).and_then(|c| c.as_any().downcast_ref::<FixedSizeBinaryArray>());
        for (i, (s, a)) in state.into_iter().zip(action).enumerate() {
            out.push(FrameRecord {
                observation_state: s,
                action: a,
                timestamp: ts.value(i),
                frame_index: fi.value(i),
                episode_index: ei.value(i),
                index: gi.value(i),
                task_index: ti.value(i),
                image: images.map(|im| im.value(i).to_vec()),
            });
        }
    }
    Ok(out)
}

fn read_jsonl(path: &Path) -> Result<Vec<FrameRecord>, RecorderError> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .map(|line| {
            let line = line.map_err(io_err(path))?;
            serde_json::from_str(&line).map_err(|source| RecorderError::Json { path: path.into(), source })
        })
        .collect()
}

#[derive(Debug)]
struct WriterInner {
    root: PathBuf,
    info: DatasetInfo,
    episodes: Vec<EpisodeMeta>,
}

/// Dataset-level handle shared by episode writers. Finalization is
/// serialized through it, which is what keeps episode and global indices
/// consistent when several episodes are recorded at once.
#[derive(Debug, Clone)]
pub struct DatasetWriter {
    inner: Arc<Mutex<WriterInner>>,
}

impl DatasetWriter {
    /// Creates the dataset, or reopens an existing one with the same layout.
    pub fn create(root: &Path, spec: &DatasetSpec) -> Result<Self, RecorderError> {
        let wanted = spec.info();
        if info_path(root).exists() {
            let writer = Self::open(root)?;
            {
                let inner = writer.inner.lock().unwrap();
                let have = &inner.info;
                if have.fps != wanted.fps
                    || have.robots != wanted.robots
                    || have.format != wanted.format
                    || have.has_images() != wanted.has_images()
                {
                    return Err(RecorderError::Mismatch(format!(
                        "{} has fps {}, format {:?}, robots {:?}",
                        root.display(),
                        have.fps,
                        have.format,
                        have.robots
                    )));
                }
            }
            return Ok(writer);
        }
        for dir in [meta_dir(root), root.join("data")] {
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        write_atomic(&episodes_path(root), b"")?;
        write_atomic(&info_path(root), &serde_json::to_vec_pretty(&wanted).expect("info serializes"))?;
        Ok(Self { inner: Arc::new(Mutex::new(WriterInner { root: root.into(), info: wanted, episodes: Vec::new() })) })
    }

    /// Reopens a dataset for appending, discarding leftovers of an
    /// interrupted finalize.
    pub fn open(root: &Path) -> Result<Self, RecorderError> {
        let info = read_info(root)?;
        let episodes = read_episodes(root, info.total_episodes)?;
        for dir in [meta_dir(root), root.join("data")] {
            if let Ok(entries) = fs::read_dir(&dir) {
                for e in entries.flatten() {
                    if e.path().extension().is_some_and(|x| x == "tmp") {
                        let _ = fs::remove_file(e.path());
                    }
                }
            }
        }
        Ok(Self { inner: Arc::new(Mutex::new(WriterInner { root: root.into(), info, episodes })) })
    }

    pub fn info(&self) -> DatasetInfo {
        self.inner.lock().unwrap().info.clone()
    }

    pub fn begin_episode(&self, task: &str) -> EpisodeWriter {
        let info = self.info();
        EpisodeWriter {
            dataset: self.clone(),
            task: task.to_owned(),
            fps: info.fps,
            dim: info.state_dim(),
            images: info.has_images(),
            frames: Vec::new(),
        }
    }
}

/// Buffers one episode's frames until [`finalize`](Self::finalize).
#[derive(Debug)]
pub struct EpisodeWriter {
    dataset: DatasetWriter,
    task: String,
    fps: f64,
    dim: usize,
    images: bool,
    frames: Vec<FrameRecord>,
}

impl EpisodeWriter {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Buffers a frame and assigns its `frame_index`; episode and global
    /// indices are assigned when the episode is finalized.
    pub fn append_frame(&mut self, frame: NewFrame) -> Result<(), RecorderError> {
        let check = |column, got: usize| {
            if got != self.dim {
                return Err(RecorderError::Schema { column, expected: self.dim, got });
            }
            Ok(())
        };
        check(STATE, frame.observation_state.len())?;
        check(ACTION, frame.action.len())?;
        let image = match (self.images, frame.image) {
            (true, Some(im)) if im.len() == IMAGE_LEN => Some(im),
            (true, Some(im)) => return Err(RecorderError::Schema { column: IMAGE, expected: IMAGE_LEN, got: im.len() }),
            (true, None) => return Err(RecorderError::Schema { column: IMAGE, expected: IMAGE_LEN, got: 0 }),
            (false, Some(im)) => return Err(RecorderError::Schema { column: IMAGE, expected: 0, got: im.len() }),
            (false, None) => None,
        };
        let frame_index = self.frames.len() as i64;
        let timestamp = frame.timestamp.unwrap_or(frame_index as f64 / self.fps);
        if let Some(prev) = self.frames.last() {
            if timestamp < prev.timestamp {
                return Err(RecorderError::TimestampOrder { previous: prev.timestamp, got: timestamp });
            }
        }
        self.frames.push(FrameRecord {
            observation_state: frame.observation_state,
            action: frame.action,
            timestamp,
            frame_index,
            episode_index: -1,
            index: -1,
            task_index: -1,
            image,
        });
        Ok(())
    }

    pub fn finalize(self) -> Result<EpisodeMeta, RecorderError> {
        self.commit(None)
    }

    /// Runs the finalize sequence but stops at `fault`, as a crash would.
    pub fn finalize_with_fault(self, fault: FaultPoint) -> Result<EpisodeMeta, RecorderError> {
        self.commit(Some(fault))
    }

    fn commit(mut self, fault: Option<FaultPoint>) -> Result<EpisodeMeta, RecorderError> {
        if self.frames.is_empty() {
            return Err(RecorderError::EmptyEpisode);
        }
        let mut inner = self.dataset.inner.lock().unwrap();
        let mut info = inner.info.clone();
        let episode_index = info.total_episodes;
        let task_index = match info.tasks.iter().position(|t| *t == self.task) {
            Some(i) => i,
            None => {
                info.tasks.push(self.task.clone());
                info.tasks.len() - 1
            }
        };
        for f in &mut self.frames {
            f.episode_index = episode_index as i64;
            f.index = info.total_frames as i64 + f.frame_index;
            f.task_index = task_index as i64;
        }
        let bytes = match info.format {
            DataFormat::Parquet => encode_parquet(&info, &self.frames)?,
            DataFormat::Jsonl => encode_jsonl(&self.frames),
        };
        let root = inner.root.clone();
        let data = episode_path(&root, &info, episode_index);
        let data_tmp = tmp_path(&data);
        write_synced(&data_tmp, &bytes)?;
        if fault == Some(FaultPoint::AfterDataTemp) {
            return Err(RecorderError::Fault(FaultPoint::AfterDataTemp));
        }
        fs::rename(&data_tmp, &data).map_err(io_err(&data))?;
        if fault == Some(FaultPoint::AfterDataRename) {
            return Err(RecorderError::Fault(FaultPoint::AfterDataRename));
        }
        let meta = EpisodeMeta {
            episode_index,
            length: self.frames.len() as u64,
            fps: self.fps,
            task: self.task.clone(),
            task_index: task_index as u64,
        };
        let mut episodes = inner.episodes.clone();
        episodes.push(meta.clone());
        write_atomic(&episodes_path(&root), &encode_episodes(&episodes))?;
        if fault == Some(FaultPoint::AfterEpisodeList) {
            return Err(RecorderError::Fault(FaultPoint::AfterEpisodeList));
        }
        info.total_episodes += 1;
        info.total_frames += meta.length;
        write_atomic(&info_path(&root), &serde_json::to_vec_pretty(&info).expect("info serializes"))?;
        inner.info = info;
        inner.episodes = episodes;
        Ok(meta)
    }
}

/// Read side of a dataset. Episode files are loaded on first use and cached.
#[derive(Debug)]
pub struct Dataset {
    root: PathBuf,
    info: DatasetInfo,
    episodes: Vec<EpisodeMeta>,
    /// Global index of each episode's first frame.
    starts: Vec<u64>,
    cache: Mutex<HashMap<u64, Arc<Vec<FrameRecord>>>>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, RecorderError> {
        let info = read_info(root)?;
        let episodes = read_episodes(root, info.total_episodes)?;
        let mut starts = Vec::with_capacity(episodes.len());
        let mut total = 0;
        for e in &episodes {
            starts.push(total);
            total += e.length;
        }
        if total != info.total_frames {
            return Err(RecorderError::Corrupt {
                path: info_path(root),
                message: format!("episodes hold {total} frames, info says {}", info.total_frames),
            });
        }
        Ok(Self { root: root.into(), info, episodes, starts, cache: Mutex::new(HashMap::new()) })
    }

    pub fn info(&self) -> &DatasetInfo {
        &self.info
    }

    pub fn episodes(&self) -> &[EpisodeMeta] {
        &self.episodes
    }

    pub fn len(&self) -> u64 {
        self.info.total_frames
    }

    pub fn is_empty(&self) -> bool {
        self.info.total_frames == 0
    }

    pub fn read_episode(&self, episode: u64) -> Result<Arc<Vec<FrameRecord>>, RecorderError> {
        if let Some(frames) = self.cache.lock().unwrap().get(&episode) {
            return Ok(frames.clone());
        }
        let meta = self.episodes.get(episode as usize).ok_or(RecorderError::IndexOutOfRange(episode))?;
        let path = episode_path(&self.root, &self.info, episode);
        let frames = match self.info.format {
            DataFormat::Parquet => read_parquet(&path)?,
            DataFormat::Jsonl => read_jsonl(&path)?,
        };
        if frames.len() as u64 != meta.length {
            return Err(RecorderError::Corrupt { path, message: format!("{} rows, expected {}", frames.len(), meta.length) });
        }
        let frames = Arc::new(frames);
        self.cache.lock().unwrap().insert(episode, frames.clone());
        Ok(frames)
    }

    /// Every frame, in global index order.
    pub fn frames(&self) -> Result<Vec<FrameRecord>, RecorderError> {
        let mut out = Vec::with_capacity(self.len() as usize);
        for e in 0..self.episodes.len() as u64 {
            out.extend(self.read_episode(e)?.iter().cloned());
        }
        Ok(out)
    }

    /// `(episode, position within it)` of a global index.
    pub fn locate(&self, global_index: u64) -> Result<(u64, usize), RecorderError> {
        if global_index >= self.len() {
            return Err(RecorderError::IndexOutOfRange(global_index));
        }
        let episode = self.starts.partition_point(|s| *s <= global_index) - 1;
        Ok((episode as u64, (global_index - self.starts[episode]) as usize))
    }

    pub fn get(&self, global_index: u64) -> Result<FrameRecord, RecorderError> {
        let (episode, pos) = self.locate(global_index)?;
        Ok(self.read_episode(episode)?[pos].clone())
    }

    /// For each delta, the frame of the anchor's episode closest to
    /// `t_anchor + delta` within half a frame period, with a padding flag
    /// for targets outside the episode or without a close frame.
    pub fn query_delta_timestamps(&self, global_index: u64, deltas: &[f64]) -> Result<Vec<(FrameRecord, bool)>, RecorderError> {
        let (episode, anchor) = self.locate(global_index)?;
        let frames = self.read_episode(episode)?;
        let timestamps: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
        let tolerance = 0.5 / self.info.fps;
        Ok(resolve_deltas(&timestamps, anchor, deltas, tolerance)
            .into_iter()
            .map(|m| (frames[m.position].clone(), m.is_pad))
            .collect())
    }
}
