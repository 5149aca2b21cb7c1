//! Dataset manifests and the severity-table export.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{read_string, IoError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OpinionEntry {
    pub image_id: String,
    pub score: f64,
    /// `source` column when present (RAISE: generator name or `real`).
    pub source: Option<String>,
}

fn normalize(h: &str) -> String {
    h.trim().to_ascii_lowercase().replace(['_', '-', ' '], "")
}

/// Reads a CSV with an image-id column and `score_column`; extra columns are
/// ignored. Header matching ignores case, `_`, `-` and spaces, so `imageId`,
/// `image_id` and `image` all work.
pub fn read_opinion_csv(path: &Path, score_column: &str) -> Result<Vec<OpinionEntry>> {
    let text = read_string(path)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| IoError::format(path, e))?
        .iter()
        .map(normalize)
        .collect();
    let find = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
    let id_col = find(&["imageid", "image", "id", "imagename"])
        .ok_or_else(|| IoError::format(path, "no image id column"))?;
    let score_col = find(&[normalize(score_column).as_str()])
        .ok_or_else(|| IoError::format(path, format!("no {score_column} column")))?;
    let source_col = find(&["source"]);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IoError::format(path, e))?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let score: f64 = field(score_col)
            .parse()
            .map_err(|_| IoError::format(path, format!("line {line}: bad {score_column} {:?}", field(score_col))))?;
        if !score.is_finite() {
            return Err(IoError::format(path, format!("line {line}: non-finite score")));
        }
        let id = field(id_col);
        if id.is_empty() {
            return Err(IoError::format(path, format!("line {line}: empty image id")));
        }
        out.push(OpinionEntry {
            image_id: id.to_string(),
            score,
            source: source_col.map(|c| field(c).to_string()),
        });
    }
    Ok(out)
}

/// `kadid.csv`: `imageId, dmos`.
pub fn read_kadid_csv(path: &Path) -> Result<Vec<OpinionEntry>> {
    read_opinion_csv(path, "dmos")
}

/// `raise.csv`: `imageId, mos, source`.
pub fn read_raise_csv(path: &Path) -> Result<Vec<OpinionEntry>> {
    let rows = read_opinion_csv(path, "mos")?;
    if rows.iter().any(|r| r.source.is_none()) {
        return Err(IoError::format(path, "no source column"));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EvalDirs {
    pub synthetic: PathBuf,
    pub real: PathBuf,
}

/// `inversion.json`. Relative paths are resolved against the file's folder.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionManifest {
    #[serde(alias = "anchorDir")]
    pub anchor_dir: PathBuf,
    #[serde(alias = "evalDirs")]
    pub eval_dirs: EvalDirs,
}

pub fn read_inversion_json(path: &Path) -> Result<InversionManifest> {
    let mut m: InversionManifest =
        serde_json::from_str(&read_string(path)?).map_err(|e| IoError::format(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut m.anchor_dir, &mut m.eval_dirs.synthetic, &mut m.eval_dirs.real] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(m)
}

/// Finds `dir/<id>`, or `dir/<id>.<ext>` for the usual image extensions.
pub fn resolve_image(dir: &Path, image_id: &str) -> Result<PathBuf> {
    let direct = dir.join(image_id);
    if direct.is_file() {
        return Ok(direct);
    }
    for ext in ["png", "jpg", "jpeg", "PNG", "JPG", "JPEG"] {
        let p = dir.join(format!("{image_id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(IoError::file(
        &direct,
        std::io::Error::new(std::io::ErrorKind::NotFound, "image listed in manifest not found"),
    ))
}

/// Severity table as CSV: `type_id,kadid_tag,name,level,param,value`.
pub fn parameter_table_csv() -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["type_id", "kadid_tag", "name", "level", "param", "value"])
        .expect("in-memory write");
    for (t, tag, name, level, param, value) in gmmd_core::degrade::parameter_rows() {
        w.write_record([
            t.to_string(),
            tag.to_string(),
            name.to_string(),
            level.to_string(),
            param.to_string(),
            value.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}
