//! Episode records and the partitioned trajectory store, plus the
//! JSON-lines dataset file format shared by every command.
//!
//! A dataset file is one manifest line followed by one episode object per
//! line. Loading a saved dataset reproduces the in-memory value exactly.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: [f64; 2],
    pub a: [f64; 2],
    pub r: f64,
    pub s_next: [f64; 2],
    /// Constraint flag: `s_next` lies in the constraint region.
    pub c: bool,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<usize>,
}

/// Which phase produced an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    OfflineGr,
    OfflineCv,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub transitions: Vec<Transition>,
    pub total_return: f64,
    pub reached_goal: bool,
    pub violated: bool,
    pub origin: Origin,
}

impl EpisodeRecord {
    /// Build a record from raw transitions, deriving the summary fields
    /// from the final step's flags.
    pub fn from_transitions(transitions: Vec<Transition>, origin: Origin) -> EpisodeRecord {
        let total_return = transitions.iter().map(|t| t.r).sum();
        let last = transitions.last();
        EpisodeRecord {
            reached_goal: last.map_or(false, |t| t.r == 0.0),
            violated: last.map_or(false, |t| t.c),
            transitions,
            total_return,
            origin,
        }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn skill(&self) -> Option<usize> {
        self.transitions.first().and_then(|t| t.skill)
    }

    fn check(&self, line: usize) -> Result<()> {
        let sum: f64 = self.transitions.iter().map(|t| t.r).sum();
        if (sum - self.total_return).abs() > 1e-9 {
            return Err(Error::Parse {
                line,
                msg: format!(
                    "total_return {} does not match reward sum {}",
                    self.total_return, sum
                ),
            });
        }
        let last = self.transitions.last();
        if self.reached_goal != last.map_or(false, |t| t.r == 0.0)
            || self.violated != last.map_or(false, |t| t.c)
        {
            return Err(Error::Parse {
                line,
                msg: "episode flags inconsistent with final transition".into(),
            });
        }
        Ok(())
    }
}

/// Partitioned trajectory store: goal-reaching demos, constraint-violating
/// demos, and online episodes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub episodes: Vec<EpisodeRecord>,
}

impl Dataset {
    pub fn new() -> Dataset {
        Dataset::default()
    }

    pub fn push(&mut self, ep: EpisodeRecord) {
        self.episodes.push(ep);
    }

    pub fn extend(&mut self, other: Dataset) {
        self.episodes.extend(other.episodes);
    }

    pub fn count(&self, origin: Origin) -> usize {
        self.episodes.iter().filter(|e| e.origin == origin).count()
    }

    pub fn by_origin(&self, origin: Origin) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter().filter(move |e| e.origin == origin)
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub n_gr: usize,
    pub n_cv: usize,
    pub n_online: usize,
    pub config_hash: String,
}

pub const DATASET_FORMAT: &str = "saferl-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Serialize a dataset to JSON-lines. The manifest line comes first.
pub fn save_dataset(
    dataset: &Dataset,
    env_id: &str,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let manifest = DatasetManifest {
        format: DATASET_FORMAT.to_string(),
        version: DATASET_VERSION,
        env: env_id.to_string(),
        n_gr: dataset.count(Origin::OfflineGr),
        n_cv: dataset.count(Origin::OfflineCv),
        n_online: dataset.count(Origin::Online),
        config_hash: config_hash.to_string(),
    };
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, &manifest).map_err(|e| Error::Data(e.to_string()))?;
    buf.push(b'\n');
    for ep in &dataset.episodes {
        serde_json::to_writer(&mut buf, ep).map_err(|e| Error::Data(e.to_string()))?;
        buf.push(b'\n');
    }
    crate::report::write_atomic(path, &buf)
}

/// Load a dataset saved by [`save_dataset`], validating per-episode
/// invariants and the manifest counts.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Dataset)> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "empty dataset file".into() })??;
    let manifest: DatasetManifest = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad manifest: {e}"),
    })?;
    if manifest.format != DATASET_FORMAT || manifest.version != DATASET_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!(
                "unsupported dataset format {}/{}",
                manifest.format, manifest.version
            ),
        });
    }
    let mut dataset = Dataset::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ep: EpisodeRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        ep.check(lineno)?;
        dataset.push(ep);
    }
    for (origin, expect) in [
        (Origin::OfflineGr, manifest.n_gr),
        (Origin::OfflineCv, manifest.n_cv),
        (Origin::Online, manifest.n_online),
    ] {
        let got = dataset.count(origin);
        if got != expect {
            return Err(Error::Data(format!(
                "manifest count mismatch for {origin:?}: header says {expect}, body has {got}"
            )));
        }
    }
    Ok((manifest, dataset))
}

/// Stream a dataset's transitions regardless of episode boundaries.
pub fn all_transitions(dataset: &Dataset) -> impl Iterator<Item = &Transition> {
    dataset.episodes.iter().flat_map(|e| e.transitions.iter())
}

impl DatasetManifest {
    pub fn write_summary(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "dataset env={} goal_reaching={} constraint_violating={} online={} hash={}",
            self.env, self.n_gr, self.n_cv, self.n_online, self.config_hash
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_episode(origin: Origin, r_last: f64, c_last: bool) -> EpisodeRecord {
        let transitions = vec![
            Transition {
                s: [0.0, 0.0],
                a: [1.0, 0.0],
                r: -1.0,
                s_next: [1.0, 0.0],
                c: false,
                done: false,
                skill: None,
            },
            Transition {
                s: [1.0, 0.0],
                a: [1.0, 0.0],
                r: r_last,
                s_next: [2.0, 0.0],
                c: c_last,
                done: true,
                skill: Some(2),
            },
        ];
        EpisodeRecord::from_transitions(transitions, origin)
    }

    #[test]
    fn summary_fields_follow_last_transition() {
        let ep = toy_episode(Origin::OfflineGr, 0.0, false);
        assert!(ep.reached_goal);
        assert!(!ep.violated);
        assert_eq!(ep.total_return, -1.0);

        let ep = toy_episode(Origin::OfflineCv, -1.0, true);
        assert!(!ep.reached_goal);
        assert!(ep.violated);
    }

    #[test]
    fn roundtrip_preserves_dataset_exactly() {
        let mut d = Dataset::new();
        d.push(toy_episode(Origin::OfflineGr, 0.0, false));
        d.push(toy_episode(Origin::OfflineCv, -1.0, true));
        d.push(toy_episode(Origin::Online, -1.0, false));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, "spb", "deadbeef", &path).unwrap();
        let (manifest, loaded) = load_dataset(&path).unwrap();
        assert_eq!(loaded, d);
        assert_eq!(manifest.n_gr, 1);
        assert_eq!(manifest.n_cv, 1);
        assert_eq!(manifest.n_online, 1);
        assert_eq!(manifest.config_hash, "deadbeef");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let manifest = format!(
            "{{\"format\":\"{DATASET_FORMAT}\",\"version\":{DATASET_VERSION},\"env\":\"spb\",\"n_gr\":0,\"n_cv\":0,\"n_online\":0,\"config_hash\":\"x\"}}"
        );
        std::fs::write(&path, format!("{manifest}\nnot json\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_count_mismatch_is_rejected() {
        let mut d = Dataset::new();
        d.push(toy_episode(Origin::OfflineGr, 0.0, false));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        save_dataset(&d, "spb", "h", &path).unwrap();
        // Corrupt the manifest count.
        let text = std::fs::read_to_string(&path).unwrap();
        let text = text.replacen("\"n_gr\":1", "\"n_gr\":2", 1);
        std::fs::write(&path, text).unwrap();
        assert!(load_dataset(&path).is_err());
    }
}
