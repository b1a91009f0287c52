use std::path::{Path, PathBuf};

use crate::data::{DatasetIndex, RadiographRecord, Split};
use crate::error::{Error, Result};

/// Reads a CSV manifest with header `id,path,label,split`. Image paths are
/// resolved against the manifest's directory; an empty split cell leaves the
/// record unassigned.
pub fn load_manifest(path: &Path) -> Result<DatasetIndex> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() < 3 || row.len() > 4 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 or 4 fields, found {}", row.len()),
            });
        }
        let id = &row[0];
        if id.is_empty() || row[1].is_empty() {
            return Err(Error::MalformedRow {
                line,
                reason: "empty id or path".into(),
            });
        }
        let label = row[2].parse()?;
        let split = match row.get(3) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Split>()?),
        };
        records.push(RadiographRecord::new(id, base.join(&row[1]), label, split));
    }
    DatasetIndex::new(records)
}

/// Writes the manifest format read by [`load_manifest`], with image paths
/// relative to the manifest directory where possible.
pub fn write_manifest(index: &DatasetIndex, path: &Path) -> Result<()> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", "path", "label", "split"])?;
    for r in index.records() {
        let rel: PathBuf = r.image_ref.strip_prefix(&base).map(Path::to_path_buf).unwrap_or_else(|_| r.image_ref.clone());
        writer.write_record([
            r.id.as_str(),
            &rel.to_string_lossy(),
            r.archive_label.name(),
            r.split.map_or("", Split::name),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
