use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DatasetManifest, Record, SkeletonSequence};
use crate::error::{Error, Result};

/// Loads one split, validating every record against the manifest and
/// centering it on the root joint. Record order is preserved.
pub fn load_split(manifest: &DatasetManifest, split: &str) -> Result<Vec<SkeletonSequence>> {
    let path = manifest.split_path(split)?;
    let root = manifest.root()?;
    let classes = manifest.num_classes();
    let mut out = read_records(&path, manifest.person_slots, manifest.joint_count, manifest.coord_dims)?;
    for seq in &mut out {
        if let Some(l) = seq.label {
            if l >= classes {
                return Err(Error::Record { id: seq.id.clone(), message: format!("label {l} exceeds the {classes} manifest classes") });
            }
        }
        if let Some(fl) = &seq.frame_labels {
            if let Some(bad) = fl.iter().find(|&&l| l >= classes as i64) {
                return Err(Error::Record { id: seq.id.clone(), message: format!("frame label {bad} exceeds the {classes} manifest classes") });
            }
        }
        seq.center_on_root(root);
    }
    Ok(out)
}

/// Reads raw JSONL records without centering.
pub fn read_records(path: &Path, persons: usize, joints: usize, coords: usize) -> Result<Vec<SkeletonSequence>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, message: e.to_string() })?;
        out.push(rec.into_sequence(persons, joints, coords)?);
    }
    Ok(out)
}

/// Writes sequences as JSONL, one record per line.
pub fn write_records(path: &Path, seqs: &[SkeletonSequence]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in seqs {
        serde_json::to_writer(&mut w, &Record::from(s))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn manifest(dir: &Path, file: &str) -> DatasetManifest {
        DatasetManifest {
            joint_count: 2,
            person_slots: 1,
            coord_dims: 3,
            edges: vec![[1, 0]],
            class_names: vec!["a".into(), "b".into()],
            splits: BTreeMap::from([("train".to_string(), file.into())]),
            mirror_pairs: vec![],
            base_dir: dir.to_path_buf(),
        }
    }

    fn line(id: &str, joints: usize) -> String {
        let joint = "[0.5,1.0,2.0]";
        let person = format!("[{}]", vec![joint; joints].join(","));
        format!(r#"{{"id":"{id}","label":1,"view":0,"subject":3,"frame_labels":null,"frames":[[{person}],[{person}]]}}"#)
    }

    #[test]
    fn loads_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let text = [line("x", 2), line("y", 2), line("z", 2)].join("\n");
        std::fs::write(dir.path().join("t.jsonl"), text).unwrap();
        let seqs = load_split(&manifest(dir.path(), "t.jsonl"), "train").unwrap();
        let ids: Vec<&str> = seqs.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["x", "y", "z"]);
        assert_eq!(seqs[0].subject, Some(3));
        // centered on the root joint of frame 0
        assert_eq!(seqs[0].joint(1, 0, 1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn wrong_joint_count_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.jsonl"), [line("good", 2), line("bad", 3)].join("\n")).unwrap();
        let err = load_split(&manifest(dir.path(), "t.jsonl"), "train").unwrap_err().to_string();
        assert!(err.contains("bad"), "{err}");
    }

    #[test]
    fn malformed_line_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.jsonl"), format!("{}\n{{not json", line("a", 2))).unwrap();
        let err = load_split(&manifest(dir.path(), "t.jsonl"), "train").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_empty_split() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t.jsonl"), "").unwrap();
        assert!(load_split(&manifest(dir.path(), "t.jsonl"), "train").unwrap().is_empty());
    }
}
