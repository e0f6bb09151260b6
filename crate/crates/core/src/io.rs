//! JSON scene files, JSON Lines record/prediction streams and scene directories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scene::{PredictionSet, QALRecord, Scene};

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: crate::error::Location {
                path: Some(path.to_path_buf()),
                ..location
            },
            message,
        },
        Error::Invariant(m) => Error::parse(Some(path.to_path_buf()), None, m),
        other => other,
    })
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let scene: Scene = serde_json::from_str(text)
        .map_err(|e| Error::parse(None, Some(e.line()), format!("column {}: {e}", e.column())))?;
    scene.validate()?;
    Ok(scene)
}

/// Canonical scene rendering: pretty JSON with a trailing newline.
pub fn scene_to_string(scene: &Scene) -> String {
    let mut s = serde_json::to_string_pretty(scene).expect("scene serializes");
    s.push('\n');
    s
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_string(scene)).map_err(|e| Error::io(path, e))
}

/// Parse a JSON Lines stream. Blank lines are skipped; every item is paired
/// with its 1-based line number.
pub fn read_jsonl_from<T: DeserializeOwned>(reader: impl BufRead, path: Option<&Path>) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| match path {
            Some(p) => Error::io(p, e),
            None => Error::parse(None, Some(lineno), e.to_string()),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path.map(Path::to_path_buf), Some(lineno), e.to_string()))?;
        out.push((lineno, item));
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<(usize, T)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(BufReader::new(file), Some(path))
}

pub fn write_jsonl_to<T: Serialize>(mut writer: impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl_to(BufWriter::new(file), items).map_err(|e| Error::io(path, e))
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<QALRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, r)| r).collect())
}

pub fn save_records(path: impl AsRef<Path>, records: &[QALRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Load records and reject any whose scene is missing or whose targets do
/// not resolve, citing the offending line.
pub fn load_records_resolved(path: impl AsRef<Path>, scenes: &SceneStore) -> Result<Vec<QALRecord>> {
    let path = path.as_ref();
    let numbered: Vec<(usize, QALRecord)> = read_jsonl(path)?;
    let mut out = Vec::with_capacity(numbered.len());
    for (line, rec) in numbered {
        let scene = scenes.get(&rec.scene_id).ok_or_else(|| {
            Error::parse(
                Some(path.to_path_buf()),
                Some(line),
                format!("record {} references missing scene {}", rec.record_id, rec.scene_id),
            )
        })?;
        if let Err(e) = rec.resolve(scene) {
            return Err(Error::parse(Some(path.to_path_buf()), Some(line), e.to_string()));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionSet>> {
    let path = path.as_ref();
    let numbered: Vec<(usize, PredictionSet)> = read_jsonl(path)?;
    numbered
        .into_iter()
        .map(|(line, p)| {
            if p.record_id.is_empty() {
                Err(Error::parse(Some(path.to_path_buf()), Some(line), "empty record_id"))
            } else {
                Ok(p)
            }
        })
        .collect()
}

/// Boxes are written in descending confidence.
pub fn save_predictions(path: impl AsRef<Path>, preds: &[PredictionSet]) -> Result<()> {
    let canonical: Vec<PredictionSet> = preds.iter().map(PredictionSet::canonical).collect();
    write_jsonl(path, &canonical)
}

/// Scenes keyed by id, usually loaded from a directory of `<scene_id>.json`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneStore {
    scenes: BTreeMap<String, Scene>,
}

impl SceneStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_scenes(scenes: impl IntoIterator<Item = Scene>) -> Result<Self> {
        let mut store = SceneStore::new();
        for s in scenes {
            store.insert(s)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, scene: Scene) -> Result<()> {
        if self.scenes.contains_key(&scene.scene_id) {
            return Err(Error::Invariant(format!("duplicate scene_id {}", scene.scene_id)));
        }
        self.scenes.insert(scene.scene_id.clone(), scene);
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut store = SceneStore::new();
        for p in paths {
            let scene = load_scene(&p)?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if stem != scene.scene_id {
                return Err(Error::parse(
                    Some(p.clone()),
                    None,
                    format!("file name does not match scene_id {}", scene.scene_id),
                ));
            }
            store.insert(scene)?;
        }
        Ok(store)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for scene in self.scenes.values() {
            save_scene(scene, dir.join(format!("{}.json", scene.scene_id)))?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Scene> {
        self.scenes.get(id)
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Scenes in id order.
    pub fn iter(&self) -> impl Iterator<Item = &Scene> {
        self.scenes.values()
    }
}
