//! Interaction text files, binary review-vector files and split manifests.
//!
//! Interaction file layout:
//!
//! ```text
//! # d=4 ratings=1,2,3,4,5
//! u1<TAB>i9<TAB>5<TAB>0.1 0.2 -0.3 0.05
//! ```
//!
//! With a separate vector file the fourth column is omitted and rows of the
//! vector file follow the interaction rows in order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{InteractionDataset, RatingScale, Split};
use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub const REVIEW_VECTOR_MAGIC: &[u8; 7] = b"DGCLRV1";

#[derive(Clone, Debug, PartialEq)]
pub enum InteractionFormat {
    /// Review vectors inline as the fourth column.
    Text,
    /// Review vectors in a `DGCLRV1` binary file.
    TextWithVectors(PathBuf),
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<(usize, RatingScale)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(path, 1, "missing `# d=.. ratings=..` header"))?;
    let mut d = None;
    let mut ratings = None;
    for tok in body.split_whitespace() {
        if let Some(v) = tok.strip_prefix("d=") {
            d = Some(
                v.parse::<usize>()
                    .map_err(|_| parse_err(path, 1, format!("bad dimension `{v}`")))?,
            );
        } else if let Some(v) = tok.strip_prefix("ratings=") {
            let vals = v
                .split(',')
                .map(|r| r.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| parse_err(path, 1, format!("bad rating list `{v}`")))?;
            ratings = Some(RatingScale::new(vals)?);
        }
    }
    match (d, ratings) {
        (Some(d), Some(r)) => Ok((d, r)),
        _ => Err(parse_err(
            path,
            1,
            "header must declare d=<dim> and ratings=<r1,r2,..>",
        )),
    }
}

/// Read an interaction file. Vocabularies follow first appearance.
pub fn load_interactions(path: &Path, format: &InteractionFormat) -> Result<InteractionDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let header = lines
        .next()
        .map(|(_, l)| l)
        .ok_or_else(|| parse_err(path, 1, "empty file, header required"))?;
    let (d, ratings) = parse_header(path, header)?;
    let vectors = match format {
        InteractionFormat::Text => None,
        InteractionFormat::TextWithVectors(vpath) => {
            let (vd, vals) = read_review_vectors(vpath)?;
            if vd != d {
                return Err(Error::Dataset(format!(
                    "vector file has dimension {vd}, header declares {d}"
                )));
            }
            Some(vals)
        }
    };
    let mut ds = InteractionDataset::new(d, ratings);
    let mut row = 0usize;
    let mut buf = Vec::with_capacity(d);
    for (ln, line) in lines {
        let lineno = ln + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let want = if vectors.is_some() { 3 } else { 4 };
        if fields.len() != want {
            return Err(parse_err(
                path,
                lineno,
                format!("expected {want} tab-separated fields, got {}", fields.len()),
            ));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad rating `{}`", fields[2])))?;
        let review: &[f64] = match &vectors {
            Some(vals) => {
                if (row + 1) * d > vals.len() {
                    return Err(parse_err(
                        path,
                        lineno,
                        "vector file has fewer rows than the interaction file",
                    ));
                }
                &vals[row * d..(row + 1) * d]
            }
            None => {
                buf.clear();
                for tok in fields[3].split_whitespace() {
                    buf.push(tok.parse::<f64>().map_err(|_| {
                        parse_err(path, lineno, format!("bad vector value `{tok}`"))
                    })?);
                }
                &buf
            }
        };
        ds.push(fields[0].trim(), fields[1].trim(), rating, review)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        row += 1;
    }
    if let Some(vals) = &vectors {
        if vals.len() != row * d {
            return Err(Error::Dataset(format!(
                "vector file has {} rows, interaction file has {row}",
                vals.len() / d.max(1)
            )));
        }
    }
    Ok(ds)
}

fn fmt_f64(v: f64) -> String {
    // shortest round-trip representation
    format!("{v}")
}

/// Write a dataset in the inline-vector text format.
pub fn write_interactions(path: &Path, ds: &InteractionDataset) -> Result<()> {
    let mut out = String::new();
    let ratings: Vec<String> = ds.ratings.values().iter().map(|&v| fmt_f64(v)).collect();
    writeln!(out, "# d={} ratings={}", ds.d(), ratings.join(",")).unwrap();
    for (i, x) in ds.interactions.iter().enumerate() {
        let vec: Vec<String> = ds.review(i).iter().map(|&v| fmt_f64(v)).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            ds.users.id(x.user),
            ds.items.id(x.item),
            fmt_f64(x.rating),
            vec.join(" ")
        )
        .unwrap();
    }
    write_atomic(path, out.as_bytes())
}

/// Read a `DGCLRV1` file: magic, u32 count, u32 d, count x d little-endian f32.
pub fn read_review_vectors(path: &Path) -> Result<(usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    let bad = |msg: &str| Error::Dataset(format!("{}: {msg}", path.display()));
    if bytes.len() < 15 || &bytes[..7] != REVIEW_VECTOR_MAGIC {
        return Err(bad("missing DGCLRV1 magic"));
    }
    let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let body = &bytes[15..];
    if body.len() != count * d * 4 {
        return Err(bad(&format!(
            "expected {} payload bytes for {count}x{d}, found {}",
            count * d * 4,
            body.len()
        )));
    }
    let vals = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((d, vals))
}

pub fn write_review_vectors(path: &Path, d: usize, vals: &[f64]) -> Result<()> {
    if d == 0 || !vals.len().is_multiple_of(d) {
        return Err(Error::Shape(format!(
            "{} values are not rows of {d}",
            vals.len()
        )));
    }
    let count = vals.len() / d;
    let mut out = Vec::with_capacity(15 + vals.len() * 4);
    out.extend_from_slice(REVIEW_VECTOR_MAGIC);
    out.extend_from_slice(&(count as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &v in vals {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_atomic(path, &out)
}

/// One line per interaction: `index<TAB>train|val|test`.
pub fn write_split_manifest(path: &Path, labels: &[Split]) -> Result<()> {
    let mut out = String::new();
    for (i, s) in labels.iter().enumerate() {
        writeln!(out, "{i}\t{s}").unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_split_manifest(path: &Path) -> Result<Vec<Split>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (idx, label) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, ln + 1, "expected index<TAB>split"))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(path, ln + 1, format!("bad index `{idx}`")))?;
        if idx != labels.len() {
            return Err(parse_err(path, ln + 1, format!("index {idx} out of order")));
        }
        labels.push(label.trim().parse()?);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.tsv",
            "# d=4 ratings=1,2,3,4,5\nu1\ti1\t5\t0.1 0.2 0.3 0.4\nu2\ti1\t3\t1 2 3 4\n",
        );
        let ds = load_interactions(&p, &InteractionFormat::Text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_users(), 2);
        assert_eq!(ds.num_items(), 1);
        assert_eq!(ds.d(), 4);
        assert_eq!(ds.review(1), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn out_of_range_rating_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.tsv",
            "# d=1 ratings=1,2,3,4,5\nu1\ti1\t5\t0\nu1\ti2\t7\t0\n",
        );
        let err = load_interactions(&p, &InteractionFormat::Text).unwrap_err();
        match err {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 3);
                assert!(msg.contains('7'), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.tsv", "# d=16 ratings=1,2,3\n");
        let ds = load_interactions(&p, &InteractionFormat::Text).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.d(), 16);
    }

    #[test]
    fn malformed_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for body in [
            "# d=2 ratings=1,2\nu1\ti1\t1\n",
            "# d=2 ratings=1,2\nu1\ti1\tx\t0 0\n",
            "# d=2 ratings=1,2\nu1\ti1\t1\t0 0 0\n",
            "# d=2 ratings=1,2\nu1\ti1\t1\t0 0\nu1\ti1\t2\t0 0\n",
            "u1\ti1\t1\t0 0\n",
            "",
        ] {
            let p = write(&dir, "bad.tsv", body);
            assert!(
                load_interactions(&p, &InteractionFormat::Text).is_err(),
                "{body:?}"
            );
        }
    }

    #[test]
    fn binary_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("v.bin");
        write_review_vectors(&vp, 2, &[0.5, -1.0, 2.0, 0.25]).unwrap();
        let raw = fs::read(&vp).unwrap();
        assert_eq!(&raw[..7], b"DGCLRV1");
        assert_eq!(raw.len(), 7 + 8 + 16);
        let p = write(&dir, "a.tsv", "# d=2 ratings=1,2\nu1\ti1\t1\nu2\ti1\t2\n");
        let ds = load_interactions(&p, &InteractionFormat::TextWithVectors(vp.clone())).unwrap();
        assert_eq!(ds.review(0), &[0.5, -1.0]);
        assert_eq!(ds.review(1), &[2.0, 0.25]);
        // dimension mismatch with header
        let p3 = write(&dir, "b.tsv", "# d=3 ratings=1,2\nu1\ti1\t1\n");
        assert!(load_interactions(&p3, &InteractionFormat::TextWithVectors(vp)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.tsv",
            "# d=2 ratings=1,2,3\nu1\ti1\t3\t0.1 -0.7\nu2\ti2\t1\t1e-3 4\n",
        );
        let ds = load_interactions(&p, &InteractionFormat::Text).unwrap();
        let q = dir.path().join("b.tsv");
        write_interactions(&q, &ds).unwrap();
        let back = load_interactions(&q, &InteractionFormat::Text).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.tsv");
        let labels = vec![Split::Train, Split::Test, Split::Val, Split::Train];
        write_split_manifest(&p, &labels).unwrap();
        assert_eq!(
            fs::read_to_string(&p).unwrap(),
            "0\ttrain\n1\ttest\n2\tval\n3\ttrain\n"
        );
        assert_eq!(read_split_manifest(&p).unwrap(), labels);
    }
}
