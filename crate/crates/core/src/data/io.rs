use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IdMap, InteractionStore, Interactions, SocialGraph, SplitConfig, UserId};
use crate::error::{Error, Result};

/// Output of [`load_dataset`].
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub interactions: Interactions,
    pub social: SocialGraph,
    pub ids: IdMap,
    pub stats: LoadStats,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    pub interaction_records: usize,
    pub below_threshold: usize,
    pub duplicate_interactions: usize,
    pub social_records: usize,
    pub social_self_loops: usize,
    pub duplicate_relations: usize,
}

struct Record {
    fields: Vec<f64>,
}

fn read_records(path: &Path, allowed: &[usize]) -> Result<Vec<Record>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let tokens: Vec<&str> = trimmed.split_ascii_whitespace().collect();
        if !allowed.contains(&tokens.len()) {
            return Err(parse_err(format!(
                "expected {allowed:?} fields, found {}",
                tokens.len()
            )));
        }
        let mut fields = Vec::with_capacity(tokens.len());
        for (k, tok) in tokens.iter().enumerate() {
            // ids must be integers; the optional third column may be fractional
            let v = if k < 2 {
                tok.parse::<i64>().ok().map(|v| v as f64)
            } else {
                tok.parse::<f64>().ok().filter(|v| v.is_finite())
            }
            .ok_or_else(|| parse_err(format!("field {} is not a number: {tok:?}", k + 1)))?;
            fields.push(v);
        }
        out.push(Record { fields });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(out)
}

/// Reads an interaction file (`user item [rating]`) and a social file
/// (`src dst [weight]`), drops ratings below `rating_threshold`, and densely
/// re-indexes ids in ascending raw-id order. The user id space is the union
/// of both files.
pub fn load_dataset(
    interactions_path: &Path,
    social_path: &Path,
    rating_threshold: Option<f64>,
) -> Result<LoadedDataset> {
    let inter = read_records(interactions_path, &[2, 3])?;
    let social = read_records(social_path, &[2, 3])?;
    let mut stats = LoadStats {
        interaction_records: inter.len(),
        social_records: social.len(),
        ..Default::default()
    };

    let kept: Vec<&Record> = inter
        .iter()
        .filter(|r| match (rating_threshold, r.fields.get(2)) {
            (Some(t), Some(&rating)) => rating >= t,
            _ => true,
        })
        .collect();
    stats.below_threshold = inter.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{}: no interactions survive the rating threshold",
            interactions_path.display()
        )));
    }

    let raw = |r: &Record, k: usize| r.fields[k] as i64;
    let user_set: BTreeSet<i64> = kept
        .iter()
        .map(|r| raw(r, 0))
        .chain(social.iter().flat_map(|r| [raw(r, 0), raw(r, 1)]))
        .collect();
    let item_set: BTreeSet<i64> = kept.iter().map(|r| raw(r, 1)).collect();
    let users: Vec<i64> = user_set.into_iter().collect();
    let items: Vec<i64> = item_set.into_iter().collect();
    let user_index: HashMap<i64, UserId> = users
        .iter()
        .enumerate()
        .map(|(k, &u)| (u, k as UserId))
        .collect();
    let item_index: HashMap<i64, u32> = items
        .iter()
        .enumerate()
        .map(|(k, &i)| (i, k as u32))
        .collect();

    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(kept.len());
    for r in &kept {
        let p = (user_index[&raw(r, 0)], item_index[&raw(r, 1)]);
        if seen.insert(p) {
            pairs.push(p);
        } else {
            stats.duplicate_interactions += 1;
        }
    }

    let mut edges = Vec::with_capacity(social.len());
    for r in &social {
        let (a, b) = (user_index[&raw(r, 0)], user_index[&raw(r, 1)]);
        if a == b {
            stats.social_self_loops += 1;
        } else {
            edges.push((a, b));
        }
    }
    let before = edges.len();
    let graph = SocialGraph::from_edges(users.len(), edges)?;
    stats.duplicate_relations = before - graph.len();

    Ok(LoadedDataset {
        interactions: Interactions {
            num_users: users.len(),
            num_items: items.len(),
            pairs,
        },
        social: graph,
        ids: IdMap { users, items },
        stats,
    })
}

/// Manifest describing a prepared dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub format_version: u32,
    pub num_users: usize,
    pub num_items: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub social_relations: usize,
    pub split: SplitConfig,
    pub split_mode: String,
    pub rating_threshold: Option<f64>,
    pub symmetrized: bool,
    pub id_map_users: String,
    pub id_map_items: String,
    pub files: Vec<String>,
}

const TRAIN: &str = "train.txt";
const VALIDATION: &str = "validation.txt";
const TEST: &str = "test.txt";
const SOCIAL: &str = "social.txt";
const USER_IDS: &str = "user_ids.txt";
const ITEM_IDS: &str = "item_ids.txt";
pub(crate) const MANIFEST: &str = "manifest.json";

fn write_pairs(path: &Path, pairs: &[(u32, u32)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (a, b) in pairs {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_ids(path: &Path, ids: &[i64]) -> Result<()> {
    let body: String = ids.iter().map(|i| format!("{i}\n")).collect();
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_pairs(path: &Path) -> Result<Vec<(u32, u32)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let mut it = line.split_ascii_whitespace().map(str::parse::<u32>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => out.push((a, b)),
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: "expected two non-negative integers".into(),
                })
            }
        }
    }
    Ok(out)
}

fn read_ids(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .map(|(idx, l)| {
            l.trim().parse::<i64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: "expected an integer id".into(),
            })
        })
        .collect()
}

/// Writes a prepared dataset directory and returns the list of files written.
pub fn write_snapshot(
    dir: &Path,
    store: &InteractionStore,
    social: &SocialGraph,
    ids: &IdMap,
    split: &SplitConfig,
    rating_threshold: Option<f64>,
    symmetrized: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_pairs(&dir.join(TRAIN), &store.train)?;
    write_pairs(&dir.join(VALIDATION), &store.validation)?;
    write_pairs(&dir.join(TEST), &store.test)?;
    write_pairs(&dir.join(SOCIAL), social.edges())?;
    write_ids(&dir.join(USER_IDS), &ids.users)?;
    write_ids(&dir.join(ITEM_IDS), &ids.items)?;
    let files: Vec<String> = [
        TRAIN, VALIDATION, TEST, SOCIAL, USER_IDS, ITEM_IDS, MANIFEST,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let manifest = SnapshotManifest {
        format_version: 1,
        num_users: store.num_users,
        num_items: store.num_items,
        train: store.train.len(),
        validation: store.validation.len(),
        test: store.test.len(),
        social_relations: social.len(),
        split: *split,
        split_mode: "global".into(),
        rating_threshold,
        symmetrized,
        id_map_users: USER_IDS.into(),
        id_map_items: ITEM_IDS.into(),
        files: files.clone(),
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(files.iter().map(|f| dir.join(f)).collect())
}

/// Reloads a directory written by [`write_snapshot`].
pub fn read_snapshot(
    dir: &Path,
) -> Result<(InteractionStore, SocialGraph, IdMap, SnapshotManifest)> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: SnapshotManifest = serde_json::from_str(&text)?;
    let corrupt = |message: String| Error::Snapshot {
        path: dir.to_path_buf(),
        message,
    };
    let store = InteractionStore::from_splits(
        manifest.num_users,
        manifest.num_items,
        read_pairs(&dir.join(TRAIN))?,
        read_pairs(&dir.join(VALIDATION))?,
        read_pairs(&dir.join(TEST))?,
    )
    .map_err(|e| corrupt(e.to_string()))?;
    let social = SocialGraph::from_edges(manifest.num_users, read_pairs(&dir.join(SOCIAL))?)
        .map_err(|e| corrupt(e.to_string()))?;
    let ids = IdMap {
        users: read_ids(&dir.join(&manifest.id_map_users))?,
        items: read_ids(&dir.join(&manifest.id_map_items))?,
    };
    if store.train.len() != manifest.train
        || store.test.len() != manifest.test
        || store.validation.len() != manifest.validation
        || social.len() != manifest.social_relations
        || ids.users.len() != manifest.num_users
        || ids.items.len() != manifest.num_items
    {
        return Err(corrupt(
            "file contents disagree with manifest counts".into(),
        ));
    }
    Ok((store, social, ids, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_single_pair() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i.txt", "0 0\n");
        let s = write(dir.path(), "s.txt", "# no real relations\n0 0\n");
        let d = load_dataset(&i, &s, None).unwrap();
        assert_eq!((d.interactions.num_users, d.interactions.num_items), (1, 1));
        assert_eq!(d.interactions.pairs.len(), 1);
        assert_eq!(d.stats.social_self_loops, 1);
        assert!(d.social.is_empty());
    }

    #[test]
    fn rating_threshold_keeps_three_and_up() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(
            dir.path(),
            "i.txt",
            "1 10 1\n1 11 2\n1 12 3\n2 10 4\n2 13 5\n",
        );
        let s = write(dir.path(), "s.txt", "1 2\n");
        let d = load_dataset(&i, &s, Some(3.0)).unwrap();
        assert_eq!(d.interactions.pairs.len(), 3);
        assert_eq!(d.stats.below_threshold, 2);
        // items re-indexed densely over surviving raw ids 10, 12, 13
        assert_eq!(d.ids.items, vec![10, 12, 13]);
        assert_eq!(d.social.edges(), &[(0, 1)]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i.txt", "0 1\n# comment\n0 x\n");
        let s = write(dir.path(), "s.txt", "0 1\n");
        match load_dataset(&i, &s, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(dir.path(), "i.txt", "# only a comment\n\n");
        let s = write(dir.path(), "s.txt", "0 1\n");
        assert!(matches!(
            load_dataset(&i, &s, None),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn snapshot_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let i = write(
            dir.path(),
            "i.txt",
            "5 1\n5 2\n7 1\n7 3\n9 2\n9 3\n9 1\n5 3\n",
        );
        let s = write(dir.path(), "s.txt", "5 7\n7 9\n9 5\n");
        let d = load_dataset(&i, &s, None).unwrap();
        let cfg = SplitConfig {
            train_frac: 0.5,
            val_frac: 0.25,
            seed: 4,
        };
        let store = split(&d.interactions, &cfg).unwrap();
        let out = dir.path().join("snap");
        write_snapshot(&out, &store, &d.social, &d.ids, &cfg, None, false).unwrap();
        let (store2, social2, ids2, manifest) = read_snapshot(&out).unwrap();
        assert_eq!(store, store2);
        assert_eq!(d.social, social2);
        assert_eq!(d.ids, ids2);
        assert_eq!(manifest.split, cfg);
        assert_eq!(manifest.split_mode, "global");
    }
}
