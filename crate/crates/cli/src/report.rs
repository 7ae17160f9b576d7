//! Merging of emitted CSV tables into one comparison table.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context};

/// Key columns of the tables this tool writes; unknown tables are keyed by
/// their first column.
const KNOWN_KEYS: &[&[&str]] = &[
    &["n", "p", "e", "h", "d_head"],
    &["model", "horizon"],
    &["suite", "property"],
    &["epoch"],
];

pub fn normalize_header(h: &str) -> String {
    h.trim().to_lowercase().replace([' ', '-'], "_")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut r =
            csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(normalize_header).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(|s| s.trim().to_string()).collect()))
            .collect::<Result<_, _>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self { header, rows })
    }

    pub fn write<W: std::io::Write>(&self, out: W) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn key_columns(header: &[String]) -> Vec<usize> {
    for keys in KNOWN_KEYS {
        let idx: Option<Vec<usize>> = keys
            .iter()
            .map(|k| header.iter().position(|h| h == k))
            .collect();
        if let Some(idx) = idx {
            return idx;
        }
    }
    vec![0]
}

/// Merges tables of one schema, prefixing a `source` column. Each input is
/// labelled with its file stem. A key that appears twice for one source with
/// different values is a conflict; exact duplicates collapse.
pub fn merge(inputs: &[(String, Table)]) -> anyhow::Result<Table> {
    let (_, first) = inputs.first().ok_or_else(|| anyhow!("no input tables"))?;
    for (source, t) in inputs {
        if t.header != first.header {
            bail!(
                "schema mismatch: `{source}` has columns [{}], expected [{}]",
                t.header.join(", "),
                first.header.join(", ")
            );
        }
    }
    let keys = key_columns(&first.header);
    let mut seen: BTreeMap<(String, Vec<String>), Vec<String>> = BTreeMap::new();
    let mut conflicts = Vec::new();
    let mut rows = Vec::new();
    for (source, t) in inputs {
        for row in &t.rows {
            if row.len() != first.header.len() {
                bail!(
                    "`{source}`: row has {} fields, header has {}",
                    row.len(),
                    first.header.len()
                );
            }
            let key: Vec<String> = keys.iter().map(|&i| row[i].clone()).collect();
            match seen.get(&(source.clone(), key.clone())) {
                Some(prev) if prev == row => continue,
                Some(_) => conflicts.push(format!("{source}: {}", key.join("/"))),
                None => {
                    seen.insert((source.clone(), key), row.clone());
                    let mut out = vec![source.clone()];
                    out.extend(row.iter().cloned());
                    rows.push(out);
                }
            }
        }
    }
    if !conflicts.is_empty() {
        bail!("conflicting duplicate keys: {}", conflicts.join(", "));
    }
    let mut header = vec!["source".to_string()];
    header.extend(first.header.iter().cloned());
    Ok(Table { header, rows })
}

pub fn source_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> Table {
        Table {
            header: header.iter().map(|h| normalize_header(h)).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn merges_with_source() {
        let a = table(&["N", "H", "t"], &[&["8", "2", "1.0"]]);
        let b = table(&["N", "H", "t"], &[&["8", "2", "2.0"]]);
        let m = merge(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(m.header, ["source", "n", "h", "t"]);
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[1][0], "b");
    }

    #[test]
    fn rejects_conflicts_and_schema_mismatch() {
        let a = table(
            &["model", "horizon", "mae"],
            &[&["weaver", "all", "1"], &["weaver", "all", "2"]],
        );
        let err = merge(&[("a".into(), a)]).unwrap_err().to_string();
        assert!(err.contains("weaver/all"), "{err}");
        let x = table(&["a"], &[]);
        let y = table(&["b"], &[]);
        assert!(merge(&[("x".into(), x), ("y".into(), y)])
            .unwrap_err()
            .to_string()
            .contains("schema"));
    }
}
