use std::io::Write;
use std::path::Path;

use crate::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Writes through a temporary file in the target directory, then renames,
/// so readers never observe a partial file. `None` writes to stdout.
pub fn write_output(path: Option<&Path>, contents: &str) -> CliResult<()> {
    let Some(path) = path else {
        let mut out = std::io::stdout().lock();
        return out
            .write_all(contents.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Input(format!("stdout: {e}")));
    };
    let err = |e: std::io::Error| CliError::Input(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(contents.as_bytes()).map_err(err)?;
    tmp.as_file().sync_all().map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

/// Non-empty CSV records, fields trimmed.
pub fn read_records(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push(rec.iter().map(str::to_string).collect());
    }
    Ok(out)
}

/// Drops a leading header row, recognized by a non-numeric field after the id.
pub fn strip_numeric_header(mut records: Vec<Vec<String>>) -> Vec<Vec<String>> {
    let is_header = records
        .first()
        .is_some_and(|r| r.iter().skip(1).any(|f| f.parse::<f64>().is_err()));
    if is_header {
        records.remove(0);
    }
    records
}

/// Two-column `id,value` file with a header row.
pub fn read_id_pairs(path: &Path, what: &str) -> CliResult<Vec<(String, String)>> {
    let mut records = read_records(path)?.into_iter();
    records
        .next()
        .ok_or_else(|| CliError::Input(format!("{}: empty {what} file", path.display())))?;
    records
        .enumerate()
        .map(|(i, r)| match r.as_slice() {
            [id, value] => Ok((id.clone(), value.clone())),
            _ => Err(CliError::Input(format!(
                "{}: line {} should have 2 fields, found {}",
                path.display(),
                i + 2,
                r.len()
            ))),
        })
        .collect()
}

pub fn csv_line<S: AsRef<str>>(fields: &[S]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields.iter().map(|f| f.as_ref())).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("UTF-8 fields")
}
