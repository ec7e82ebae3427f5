//! Artifact files: line-delimited JSON and TSV with a leading header
//! record, pretty JSON documents, and sidecar metadata for binaries.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query::QrelSet;

pub const TOOL: &str = "tabkit";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(config_hash: &str, seed: u64) -> ArtifactHeader {
        ArtifactHeader {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
        }
    }

    fn tsv_line(&self) -> String {
        format!(
            "# {} {} config={} seed={}",
            self.tool, self.version, self.config_hash, self.seed
        )
    }

    fn from_tsv_line(line: &str) -> Result<ArtifactHeader> {
        let bad = || Error::Format(format!("bad TSV header `{line}`"));
        let rest = line.strip_prefix("# ").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(' ').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        Ok(ArtifactHeader {
            tool: parts[0].to_string(),
            version: parts[1].to_string(),
            config_hash: parts[2].strip_prefix("config=").ok_or_else(bad)?.to_string(),
            seed: parts[3]
                .strip_prefix("seed=")
                .and_then(|s| s.parse().ok())
                .ok_or_else(bad)?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ArtifactHeader,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    header: &ArtifactHeader,
    items: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, &HeaderLine { header: header.clone() })?;
    out.write_all(b"\n")?;
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactHeader, Vec<T>)> {
    let mut lines = open(path)?.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", path.display())))??;
    let header: HeaderLine = serde_json::from_str(&first)
        .map_err(|e| Error::Format(format!("{}: bad header record: {e}", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 2)))?,
        );
    }
    Ok((header.header, items))
}

#[derive(Serialize, Deserialize)]
struct JsonDoc<T> {
    header: ArtifactHeader,
    body: T,
}

pub fn write_json<T: Serialize>(path: &Path, header: &ArtifactHeader, body: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(
        &mut out,
        &JsonDoc {
            header: header.clone(),
            body,
        },
    )?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(ArtifactHeader, T)> {
    let doc: JsonDoc<T> = serde_json::from_reader(open(path)?)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok((doc.header, doc.body))
}

/// Header comment, a column line, then one row per entry.
pub fn write_tsv(path: &Path, header: &ArtifactHeader, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", header.tsv_line())?;
    writeln!(out, "{}", columns.join("\t"))?;
    for r in rows {
        if r.len() != columns.len() {
            return Err(Error::LengthMismatch(columns.len(), r.len()));
        }
        if r.iter().any(|f| f.contains('\t') || f.contains('\n')) {
            return Err(Error::Format("TSV field contains a tab or newline".into()));
        }
        writeln!(out, "{}", r.join("\t"))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_tsv(path: &Path) -> Result<(ArtifactHeader, Vec<String>, Vec<Vec<String>>)> {
    let mut lines = open(path)?.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Format(format!("{}: missing {what}", path.display())))?
            .map_err(Error::from)
    };
    let header = ArtifactHeader::from_tsv_line(&next("header")?)?;
    let columns: Vec<String> = next("column line")?.split('\t').map(str::to_string).collect();
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let r: Vec<String> = line.split('\t').map(str::to_string).collect();
        if r.len() != columns.len() {
            return Err(Error::Format(format!("{}: ragged row `{line}`", path.display())));
        }
        rows.push(r);
    }
    Ok((header, columns, rows))
}

pub fn write_qrels(path: &Path, header: &ArtifactHeader, qrels: &QrelSet) -> Result<()> {
    let rows: Vec<Vec<String>> = qrels
        .pairs()
        .map(|(q, d)| vec![q.to_string(), d.to_string(), "1".to_string()])
        .collect();
    write_tsv(path, header, &["qid", "doc_id", "relevance"], &rows)
}

pub fn read_qrels(path: &Path) -> Result<(ArtifactHeader, QrelSet)> {
    let (h, cols, rows) = read_tsv(path)?;
    if cols != ["qid", "doc_id", "relevance"] {
        return Err(Error::Format(format!("{}: unexpected columns {cols:?}", path.display())));
    }
    let mut q = QrelSet::default();
    for r in rows {
        q.0.entry(r[0].clone()).or_default().insert(r[1].clone());
    }
    Ok((h, q))
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Sidecar `{path}.meta.json` holding the header of a binary artifact.
pub fn write_meta(path: &Path, header: &ArtifactHeader) -> Result<()> {
    let mut out = create(&meta_path(path))?;
    serde_json::to_writer_pretty(&mut out, &HeaderLine { header: header.clone() })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<ArtifactHeader> {
    let h: HeaderLine = serde_json::from_reader(open(&meta_path(path))?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_path(path).display())))?;
    Ok(h.header)
}
