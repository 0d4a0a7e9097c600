//! Track manifests and feature matrices, persisted as CSV.
//!
//! Matrix files carry a header row (`track_id,<feature>...`) followed by an
//! optional `#group:` row holding one group tag per column. Files without the
//! group row (e.g. exported embeddings) load with every column tagged
//! `embedding`.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;

use crate::error::{Error, Result};
use crate::schema::{FeatureGroup, FeatureVector};

pub const GROUP_MARKER: &str = "#group:";
pub const META_BPM: &str = "catalog_bpm";
pub const META_LENGTH: &str = "catalog_length_s";

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: String,
    pub path: PathBuf,
    pub genre: String,
    pub bpm: Option<f64>,
    pub key: Option<String>,
    pub length_s: Option<f64>,
}

fn optional_number(raw: Option<&str>, row: usize, col: usize) -> Result<Option<f64>> {
    match raw.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Some)
            .ok_or_else(|| Error::Parse {
                row,
                col,
                reason: format!("`{s}` is not a finite number"),
            }),
    }
}

/// Reads a `track_id,path,genre,bpm,key,length_s` manifest. Relative audio
/// paths are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<TrackRecord>> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let required = ["track_id", "path", "genre"];
    let mut idx = Vec::new();
    for name in required {
        idx.push(col(name).ok_or_else(|| {
            Error::Schema(format!("manifest {} lacks required column `{name}`", path.display()))
        })?);
    }
    let (bpm_col, key_col, len_col) = (col("bpm"), col("key"), col("length_s"));
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
        let track_id = field(idx[0]).to_string();
        if track_id.is_empty() {
            return Err(Error::Parse {
                row,
                col: idx[0] + 1,
                reason: "empty track_id".into(),
            });
        }
        if !seen.insert(track_id.clone()) {
            return Err(Error::DuplicateId(track_id));
        }
        let genre = field(idx[2]).to_string();
        if genre.is_empty() {
            return Err(Error::Parse {
                row,
                col: idx[2] + 1,
                reason: format!("empty genre for `{track_id}`"),
            });
        }
        let raw_path = PathBuf::from(field(idx[1]));
        let path = if raw_path.is_absolute() {
            raw_path
        } else {
            base.join(raw_path)
        };
        let key = key_col
            .map(|c| field(c).to_string())
            .filter(|k| !k.is_empty());
        records.push(TrackRecord {
            track_id,
            path,
            genre,
            bpm: bpm_col
                .map(|c| optional_number(rec.get(c), row, c + 1))
                .transpose()?
                .flatten(),
            key,
            length_s: len_col
                .map(|c| optional_number(rec.get(c), row, c + 1))
                .transpose()?
                .flatten(),
        });
    }
    if records.is_empty() {
        return Err(Error::Schema(format!("manifest {} has no tracks", path.display())));
    }
    Ok(records)
}

/// Writes a manifest; paths are written as given.
pub fn save_manifest(path: impl AsRef<Path>, records: &[TrackRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["track_id", "path", "genre", "bpm", "key", "length_s"])?;
    for r in records {
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.track_id.clone(),
            r.path.to_string_lossy().into_owned(),
            r.genre.clone(),
            num(r.bpm),
            r.key.clone().unwrap_or_default(),
            num(r.length_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `n_tracks × n_features` table with named, group-tagged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    pub data: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(
        rows: Vec<String>,
        cols: Vec<String>,
        groups: Vec<FeatureGroup>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = Self {
            rows,
            cols,
            groups,
            data,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cols.len() != self.groups.len() {
            return Err(Error::Schema("every column needs a group tag".into()));
        }
        if self.rows.len() != self.data.len() {
            return Err(Error::Schema("row labels and data disagree in length".into()));
        }
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r) {
                return Err(Error::DuplicateId(r.clone()));
            }
        }
        let mut seen = HashSet::new();
        for c in &self.cols {
            if !seen.insert(c) {
                return Err(Error::Schema(format!("duplicate column `{c}`")));
            }
        }
        for (r, row) in self.rows.iter().zip(&self.data) {
            if row.len() != self.cols.len() {
                return Err(Error::Schema(format!("row `{r}` has {} cells", row.len())));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    track: r.clone(),
                    column: self.cols[j].clone(),
                });
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.iter().map(|r| r[j]).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == name)
    }

    /// New matrix holding the given columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            rows: self.rows.clone(),
            cols: idx.iter().map(|&j| self.cols[j].clone()).collect(),
            groups: idx.iter().map(|&j| self.groups[j]).collect(),
            data: self
                .data
                .iter()
                .map(|r| idx.iter().map(|&j| r[j]).collect())
                .collect(),
        }
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            cols: self.cols.clone(),
            groups: self.groups.clone(),
            data: idx.iter().map(|&i| self.data[i].clone()).collect(),
        }
    }

    pub fn push_column(&mut self, name: String, group: FeatureGroup, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.rows.len());
        self.cols.push(name);
        self.groups.push(group);
        for (row, v) in self.data.iter_mut().zip(values) {
            row.push(v);
        }
    }

    /// Row indices keyed by track id.
    pub fn row_index(&self) -> HashMap<&str, usize> {
        self.rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect()
    }
}

/// Builds the matrix in manifest order, appending `catalog_bpm` /
/// `catalog_length_s` when every record carries them.
pub fn assemble_matrix(
    records: &[TrackRecord],
    vectors: &HashMap<String, FeatureVector>,
) -> Result<FeatureMatrix> {
    let first = records
        .first()
        .ok_or_else(|| Error::InvalidInput("no tracks to assemble".into()))?;
    let schema = vectors
        .get(&first.track_id)
        .ok_or_else(|| Error::MissingTrack(first.track_id.clone()))?;
    let with_bpm = records.iter().all(|r| r.bpm.is_some());
    let with_len = records.iter().all(|r| r.length_s.is_some());
    let mut cols = schema.names.clone();
    let mut groups = schema.groups.clone();
    if with_bpm {
        cols.push(META_BPM.into());
        groups.push(FeatureGroup::Meta);
    }
    if with_len {
        cols.push(META_LENGTH.into());
        groups.push(FeatureGroup::Meta);
    }
    let mut data = Vec::with_capacity(records.len());
    for r in records {
        let v = vectors
            .get(&r.track_id)
            .ok_or_else(|| Error::MissingTrack(r.track_id.clone()))?;
        if v.names != schema.names || v.groups != schema.groups {
            return Err(Error::Schema(format!(
                "track `{}` has a different feature schema",
                r.track_id
            )));
        }
        if let Some(j) = v.values.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                track: r.track_id.clone(),
                column: v.names[j].clone(),
            });
        }
        let mut row = v.values.clone();
        if with_bpm {
            row.extend(r.bpm);
        }
        if with_len {
            row.extend(r.length_s);
        }
        data.push(row);
    }
    FeatureMatrix::new(
        records.iter().map(|r| r.track_id.clone()).collect(),
        cols,
        groups,
        data,
    )
}

/// Writes the matrix with a `#group:` row. Values use Rust's shortest
/// round-trip formatting, so reloading is exact.
pub fn save_matrix(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(std::iter::once("track_id").chain(m.cols.iter().map(String::as_str)))?;
    w.write_record(std::iter::once(GROUP_MARKER).chain(m.groups.iter().map(|g| g.as_str())))?;
    for (id, row) in m.rows.iter().zip(&m.data) {
        w.write_record(std::iter::once(id.clone()).chain(row.iter().map(|v| v.to_string())))?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .flush()?;
    Ok(())
}

fn read_table(path: &Path) -> Result<(Vec<String>, Option<Vec<FeatureGroup>>, Vec<(String, Vec<f64>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(false)
        .from_path(path)?;
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))??;
    if header.len() < 2 {
        return Err(Error::Schema(format!("{}: header has no feature columns", path.display())));
    }
    let cols: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut groups = None;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != cols.len() + 1 {
            return Err(Error::Parse {
                row: line,
                col: rec.len(),
                reason: format!("expected {} cells, found {}", cols.len() + 1, rec.len()),
            });
        }
        let first = rec.get(0).unwrap_or("").trim();
        if i == 0 && first == GROUP_MARKER {
            groups = Some(
                rec.iter()
                    .skip(1)
                    .map(str::parse::<FeatureGroup>)
                    .collect::<Result<Vec<_>>>()?,
            );
            continue;
        }
        let values = rec
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse {
                        row: line,
                        col: j + 2,
                        reason: format!("`{cell}` is not a finite number"),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((first.to_string(), values));
    }
    Ok((cols, groups, rows))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let (cols, groups, rows) = read_table(path.as_ref())?;
    let groups = groups.unwrap_or_else(|| vec![FeatureGroup::Embedding; cols.len()]);
    let (ids, data) = rows.into_iter().unzip();
    FeatureMatrix::new(ids, cols, groups, data)
}

/// Loads a precomputed embedding table keyed by track id and aligns it to
/// the manifest. Returns the matrix and the number of ignored extra rows.
pub fn import_embeddings(
    path: impl AsRef<Path>,
    manifest: &[TrackRecord],
) -> Result<(FeatureMatrix, usize)> {
    let (cols, _, rows) = read_table(path.as_ref())?;
    let mut by_id: HashMap<String, Vec<f64>> = HashMap::with_capacity(rows.len());
    for (id, values) in rows {
        if by_id.insert(id.clone(), values).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    let mut data = Vec::with_capacity(manifest.len());
    for r in manifest {
        data.push(
            by_id
                .remove(&r.track_id)
                .ok_or_else(|| Error::MissingTrack(r.track_id.clone()))?,
        );
    }
    let ignored = by_id.len();
    if ignored > 0 {
        warn!("ignored {ignored} embedding rows not in the manifest");
    }
    let groups = vec![FeatureGroup::Embedding; cols.len()];
    let m = FeatureMatrix::new(
        manifest.iter().map(|r| r.track_id.clone()).collect(),
        cols,
        groups,
        data,
    )?;
    Ok((m, ignored))
}

/// Writes `track_id,label` rows.
pub fn save_labels(path: impl AsRef<Path>, rows: &[String], labels: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["track_id", "label"])?;
    for (id, l) in rows.iter().zip(labels) {
        w.write_record([id.clone(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `track_id,label` file and aligns it to `rows`.
pub fn load_labels(path: impl AsRef<Path>, rows: &[String]) -> Result<Vec<usize>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_id = HashMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").trim().to_string();
        let label = rec
            .get(1)
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                row: i + 2,
                col: 2,
                reason: "label must be a non-negative integer".into(),
            })?;
        by_id.insert(id, label);
    }
    rows.iter()
        .map(|r| by_id.get(r).copied().ok_or_else(|| Error::MissingTrack(r.clone())))
        .collect()
}
