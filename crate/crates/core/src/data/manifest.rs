//! Line-oriented dataset manifest: `id<TAB>path<TAB>label`, label optional.
//!
//! An optional first line `#seed<TAB>N` records the generating seed; other
//! lines starting with `#` and blank lines are ignored. Relative paths are
//! resolved against the manifest's directory.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Class;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub label: Option<Class>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: Option<u64>) -> Result<Self> {
        let m = Manifest { entries, seed };
        m.check_unique()?;
        Ok(m)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::contract(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(())
    }

    /// Labels of all entries, failing if any entry is unlabeled.
    pub fn labels(&self) -> Result<Vec<Class>> {
        self.entries
            .iter()
            .map(|e| e.label.ok_or_else(|| Error::contract(format!("manifest entry {:?} has no label", e.id))))
            .collect()
    }

    /// Fails unless every class occurs at least once.
    pub fn require_all_classes(&self) -> Result<()> {
        let labels = self.labels()?;
        for c in Class::ALL {
            if !labels.contains(&c) {
                return Err(Error::contract(format!("class {c} is missing from the manifest")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(seed) = self.seed {
            writeln!(out, "#seed\t{seed}").expect("string write");
        }
        for e in &self.entries {
            write!(out, "{}\t{}", e.id, e.path.display()).expect("string write");
            if let Some(l) = e.label {
                write!(out, "\t{l}").expect("string write");
            }
            out.push('\n');
        }
        out
    }

    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, source: &Path) -> Result<Self> {
        let format_err = |line: usize, message: String| Error::Format {
            path: source.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut seed = None;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if let Some(rest) = line.strip_prefix("#seed\t") {
                seed = Some(
                    rest.trim()
                        .parse()
                        .map_err(|_| format_err(line_no, format!("bad seed {rest:?}")))?,
                );
                continue;
            }
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) || fields[0].is_empty() || fields[1].is_empty() {
                return Err(format_err(line_no, "expected `id<TAB>path[<TAB>label]`".into()));
            }
            let label = match fields.get(2).map(|s| s.trim()) {
                None | Some("") => None,
                Some(s) => Some(s.parse::<Class>().map_err(|e| format_err(line_no, e.to_string()))?),
            };
            let path = Path::new(fields[1]);
            entries.push(ManifestEntry {
                id: fields[0].to_owned(),
                path: if path.is_absolute() { path.to_path_buf() } else { base.join(path) },
                label,
            });
        }
        let m = Manifest { entries, seed };
        m.check_unique().map_err(|e| format_err(0, e.to_string()))?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    /// Writes the manifest with paths relative to its directory when possible.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = Manifest {
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    path: e.path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| e.path.clone()),
                    ..e.clone()
                })
                .collect(),
            seed: self.seed,
        };
        fs::write(path, rel.to_text()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let m = Manifest::new(
            vec![
                ManifestEntry {
                    id: "a".into(),
                    path: PathBuf::from("/data/a.dpnv"),
                    label: Some(Class::Pd),
                },
                ManifestEntry {
                    id: "b".into(),
                    path: PathBuf::from("/data/b.dpnv"),
                    label: None,
                },
            ],
            Some(7),
        )
        .unwrap();
        let text = m.to_text();
        assert_eq!(text, "#seed\t7\na\t/data/a.dpnv\tPD\nb\t/data/b.dpnv\n");
        assert_eq!(Manifest::parse(&text, Path::new("/x"), Path::new("m")).unwrap(), m);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let m = Manifest::parse("v1\tvols/v1.dpnv\tmsa\n", Path::new("/root/ds"), Path::new("m")).unwrap();
        assert_eq!(m.entries[0].path, PathBuf::from("/root/ds/vols/v1.dpnv"));
        assert_eq!(m.entries[0].label, Some(Class::Msa));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let p = Path::new("m");
        assert!(Manifest::parse("only-one-field\n", p, p).is_err());
        assert!(Manifest::parse("a\tx\tALS\n", p, p).is_err());
        assert!(Manifest::parse("a\tx\na\ty\n", p, p).is_err());
    }
}
