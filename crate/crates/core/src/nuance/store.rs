use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::{Error, Result};

/// Target nuance of a demonstration, each component in [0, 1].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NuanceTarget {
    pub tension: f64,
    pub abruptness: f64,
    pub relaxation: f64,
}

impl NuanceTarget {
    pub fn new(tension: f64, abruptness: f64, relaxation: f64) -> Self {
        NuanceTarget {
            tension,
            abruptness,
            relaxation,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.tension, self.abruptness, self.relaxation]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        NuanceTarget::new(v[0], v[1], v[2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub id: String,
    pub feature_rows: Vec<FeatureVector>,
    pub label: NuanceTarget,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl Demonstration {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty()
            || !self
                .id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            || self.id.starts_with('.')
        {
            return Err(Error::InvalidDemonstration(format!(
                "id '{}' must be non-empty ASCII letters, digits, '-', '_' or '.'",
                self.id
            )));
        }
        if self.feature_rows.is_empty() {
            return Err(Error::InvalidDemonstration(format!(
                "demonstration {} has no feature rows",
                self.id
            )));
        }
        if let Some(v) = self
            .label
            .as_array()
            .into_iter()
            .find(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidDemonstration(format!(
                "label value {v} outside [0, 1]"
            )));
        }
        Ok(())
    }

    fn same_content(&self, other: &Demonstration) -> bool {
        self.feature_rows == other.feature_rows && self.label == other.label
    }
}

#[derive(Serialize, Deserialize)]
struct DemoMeta {
    id: String,
    label: NuanceTarget,
    created_at: u64,
    rows: usize,
}

/// Demonstrations of one session, optionally persisted to a directory as
/// `<id>.features.jsonl` plus `<id>.meta.json`.
#[derive(Debug, Default)]
pub struct DemoStore {
    dir: Option<PathBuf>,
    demos: Vec<Demonstration>,
}

impl DemoStore {
    pub fn in_memory() -> Self {
        DemoStore::default()
    }

    /// Open (creating if needed) a session directory and load its contents.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_owned();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut metas: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(".meta.json"))
            })
            .collect();
        metas.sort();
        let mut demos = Vec::with_capacity(metas.len());
        for meta_path in metas {
            let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
            let meta: DemoMeta = serde_json::from_str(&text)
                .map_err(|e| Error::json(meta_path.display().to_string(), e))?;
            let rows_path = dir.join(format!("{}.features.jsonl", meta.id));
            let feature_rows = read_jsonl(&rows_path)?;
            let demo = Demonstration {
                id: meta.id,
                feature_rows,
                label: meta.label,
                created_at: meta.created_at,
            };
            demo.validate()?;
            demos.push(demo);
        }
        demos.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(DemoStore {
            dir: Some(dir),
            demos,
        })
    }

    /// Add a demonstration. Re-adding identical content under the same id is
    /// a no-op and returns `false`.
    pub fn add(&mut self, demo: Demonstration) -> Result<bool> {
        demo.validate()?;
        if let Some(existing) = self.get(&demo.id) {
            if existing.same_content(&demo) {
                return Ok(false);
            }
            return Err(Error::DuplicateDemonstration { id: demo.id });
        }
        if let Some(dir) = &self.dir {
            persist(dir, &demo)?;
        }
        // id order, as on reload, so training sees the same row order
        let at = self.demos.partition_point(|d| d.id < demo.id);
        self.demos.insert(at, demo);
        Ok(true)
    }

    pub fn get(&self, id: &str) -> Option<&Demonstration> {
        self.demos.iter().find(|d| d.id == id)
    }

    pub fn list(&self) -> &[Demonstration] {
        &self.demos
    }

    pub fn len(&self) -> usize {
        self.demos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demos.is_empty()
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn persist(dir: &Path, demo: &Demonstration) -> Result<()> {
    let mut rows = Vec::new();
    for fv in &demo.feature_rows {
        serde_json::to_writer(&mut rows, fv).map_err(|e| Error::json("feature row", e))?;
        rows.push(b'\n');
    }
    // features first: a demonstration only exists once its metadata does
    write_atomic(&dir.join(format!("{}.features.jsonl", demo.id)), &rows)?;
    let meta = DemoMeta {
        id: demo.id.clone(),
        label: demo.label,
        created_at: demo.created_at,
        rows: demo.feature_rows.len(),
    };
    let meta = serde_json::to_vec_pretty(&meta).map_err(|e| Error::json("demo metadata", e))?;
    write_atomic(&dir.join(format!("{}.meta.json", demo.id)), &meta)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::json(path.display().to_string(), e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(effort: f64) -> FeatureVector {
        FeatureVector {
            time: 0.0,
            channels: vec![],
            effort,
            abruptness: 0.0,
            relaxation_rate: 0.0,
            complexity: 0,
        }
    }

    fn demo(id: &str, tension: f64) -> Demonstration {
        Demonstration {
            id: id.into(),
            feature_rows: vec![fv(0.3), fv(0.4)],
            label: NuanceTarget::new(tension, 0.2, 0.1),
            created_at: 1,
        }
    }

    #[test]
    fn add_then_list() {
        let mut store = DemoStore::in_memory();
        assert!(store.add(demo("a", 0.5)).unwrap());
        assert_eq!(store.list().len(), 1);
        assert_eq!(store.get("a").unwrap().label.tension, 0.5);
    }

    #[test]
    fn add_is_idempotent() {
        let mut store = DemoStore::in_memory();
        store.add(demo("a", 0.5)).unwrap();
        assert!(!store.add(demo("a", 0.5)).unwrap());
        assert_eq!(store.len(), 1);
        assert!(matches!(
            store.add(demo("a", 0.6)),
            Err(Error::DuplicateDemonstration { .. })
        ));
    }

    #[test]
    fn rejects_out_of_range_label() {
        let mut store = DemoStore::in_memory();
        assert!(store.add(demo("a", 1.2)).is_err());
        let mut empty = demo("b", 0.1);
        empty.feature_rows.clear();
        assert!(store.add(empty).is_err());
        assert!(store.add(demo("../x", 0.1)).is_err());
        assert!(store.is_empty());
    }

    #[test]
    fn persists_to_directory() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = DemoStore::open(dir.path()).unwrap();
            store.add(demo("first", 0.5)).unwrap();
            store.add(demo("second", 0.9)).unwrap();
        }
        assert!(dir.path().join("first.features.jsonl").exists());
        assert!(dir.path().join("first.meta.json").exists());
        let store = DemoStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.get("second").unwrap(), &demo("second", 0.9));
    }
}
