//! JSONL and TSV readers/writers for the on-disk exchange formats.
//!
//! Every writer goes through [`write_atomic`]: data lands in a temporary file
//! next to the target and is renamed into place.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{EntityRef, Qid};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes `path` via a sibling temp file and rename.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp-{}", std::process::id()));
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        let file = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| w.write_all(bytes).map_err(|e| Error::io(path, e)))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T, I>(path: &Path, rows: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    write_atomic(path, |w| write_jsonl_to(w, rows).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }))
}

pub fn write_jsonl_to<'a, T, I>(w: &mut dyn Write, rows: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    for row in rows {
        serde_json::to_writer(&mut *w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Reads tab-separated rows, skipping blank lines and `#` comments.
/// `min_fields` is enforced per row.
pub fn read_tsv(path: &Path, min_fields: usize) -> Result<Vec<Vec<String>>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_string).collect();
        if fields.len() < min_fields {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected at least {min_fields} tab-separated fields"),
            });
        }
        out.push(fields);
    }
    Ok(out)
}

/// `qid<TAB>canonical_name<TAB>alias1|alias2|...`
pub fn read_entities(path: &Path) -> Result<Vec<EntityRef>> {
    Ok(read_tsv(path, 2)?
        .into_iter()
        .map(|f| {
            let aliases = f
                .get(2)
                .map(|a| a.split('|').filter(|s| !s.is_empty()).map(str::to_string).collect())
                .unwrap_or_default();
            EntityRef {
                qid: Qid::new(f[0].trim()),
                canonical_name: f[1].clone(),
                aliases,
            }
        })
        .collect())
}

pub fn entities_tsv(entities: &[EntityRef]) -> String {
    let mut out = String::new();
    for e in entities {
        out.push_str(e.qid.as_str());
        out.push('\t');
        out.push_str(&e.canonical_name);
        out.push('\t');
        out.push_str(&e.aliases.join("|"));
        out.push('\n');
    }
    out
}

/// `qid<TAB>first-sentence description`
pub fn read_descriptions(path: &Path) -> Result<Vec<(Qid, String)>> {
    Ok(read_tsv(path, 2)?
        .into_iter()
        .map(|mut f| (Qid::new(f[0].trim()), f.swap_remove(1)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CandidateScore, DocMention, Document, Mention, MentionSpan, Scores};
    use proptest::prelude::*;

    #[test]
    fn entities_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("entities.tsv");
        let entities = vec![
            EntityRef::new("Q40435", "Buffalo, New York").with_aliases(["The Queen City", "Buffalo"]),
            EntityRef::new("Q1", "Solo"),
        ];
        write_bytes(&path, entities_tsv(&entities).as_bytes()).unwrap();
        assert_eq!(read_entities(&path).unwrap(), entities);
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        write_bytes(&path, b"{\"doc_id\":\"a\",\"title\":\"\",\"text\":\"x\"}\n\n{oops}\n").unwrap();
        match read_jsonl::<Document>(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_jsonl::<Document>(Path::new("/nonexistent/x.jsonl")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.jsonl"));
    }

    fn arb_scores() -> impl Strategy<Value = Scores> {
        (
            proptest::option::of(Just(1.0f32)),
            proptest::option::of(0.0f32..=1.0),
            proptest::option::of(0.0f32..=1.0),
            proptest::option::of(0.0f32..=1.0),
        )
            .prop_map(|(h, el, c, cc)| Scores { h, el, c, cc })
    }

    proptest! {
        #[test]
        fn corpus_round_trip(
            texts in proptest::collection::vec("[a-zA-Zé ü]{0,40}", 1..4),
            spans in proptest::collection::vec((0usize..40, 1usize..10, arb_scores(), proptest::option::of("[a-z]{1,3}")), 0..8),
        ) {
            let docs: Vec<Document> = texts.iter().enumerate()
                .map(|(i, t)| Document::new(format!("d{i}"), format!("T{i}"), t.clone()))
                .collect();
            let mentions: Vec<DocMention> = spans.into_iter().enumerate().map(|(i, (s, len, scores, cl))| DocMention {
                doc_id: format!("d{}", i % docs.len()),
                mention: Mention {
                    span: MentionSpan::new(s, s + len, ""),
                    candidates: vec![CandidateScore::new(format!("Q{i}"), scores)],
                    cluster_id: cl,
                },
            }).collect();
            let dir = tempfile::tempdir().unwrap();
            let dp = dir.path().join("documents.jsonl");
            let mp = dir.path().join("scored.jsonl");
            write_jsonl(&dp, &docs).unwrap();
            write_jsonl(&mp, &mentions).unwrap();
            prop_assert_eq!(read_jsonl::<Document>(&dp).unwrap(), docs);
            prop_assert_eq!(read_jsonl::<DocMention>(&mp).unwrap(), mentions);
        }
    }
}
