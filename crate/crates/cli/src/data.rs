//! On-disk datasets: RVOL files listed in a `manifest.csv` with columns
//! `path,role,subset`. Paths are relative to the manifest; the label map of
//! `x.rvol` lives next to it as `x_seg.rvol`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use asc_core::metrics::Subset;
use asc_core::synthdata::Benchmark;
use asc_core::trainer::EvalCase;
use asc_core::{LabelMap, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::rvol;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Source,
    TargetTrain,
    TargetTest,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::TargetTrain => "target-train",
            Role::TargetTest => "target-test",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Role::Source),
            "target-train" => Ok(Role::TargetTrain),
            "target-test" => Ok(Role::TargetTest),
            _ => Err(CliError::Data(format!("unknown manifest role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRow {
    path: String,
    role: String,
    subset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest directory.
    pub path: PathBuf,
    pub role: Role,
    pub subset: Option<Subset>,
}

impl ManifestEntry {
    pub fn label_path(&self) -> PathBuf {
        label_path(&self.path)
    }
}

pub fn label_path(volume: &Path) -> PathBuf {
    let stem = volume.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    volume.with_file_name(format!("{stem}_seg.rvol"))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(CliError::csv(path))?;
    for e in entries {
        let row = ManifestRow {
            path: e.path.to_string_lossy().replace('\\', "/"),
            role: e.role.to_string(),
            subset: e.subset.map_or("-", |s| s.as_str()).to_string(),
        };
        w.serialize(row).map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let mut out = Vec::new();
    for row in r.deserialize::<ManifestRow>() {
        let row = row.map_err(CliError::csv(path))?;
        let subset = match row.subset.as_str() {
            "-" | "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| CliError::Data(format!("{}: unknown subset {s:?}", path.display())))?,
            ),
        };
        out.push(ManifestEntry {
            path: PathBuf::from(row.path),
            role: row.role.parse()?,
            subset,
        });
    }
    Ok(out)
}

/// Training and evaluation data loaded into memory.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub source: Vec<(Volume, LabelMap)>,
    pub target_train: Vec<Volume>,
    pub target_test: Vec<EvalCase>,
}

impl Dataset {
    pub fn from_benchmark(b: Benchmark) -> Self {
        // Named like the files `write_benchmark` would produce.
        let target_test = b
            .target_test
            .into_iter()
            .enumerate()
            .map(|(i, s)| EvalCase {
                name: format!("{}/{i:03}.rvol", Role::TargetTest),
                volume: s.volume,
                labels: s.labels,
                subset: Some(s.subset),
            })
            .collect();
        Self {
            source: b.source,
            target_train: b.target_train.into_iter().map(|s| s.volume).collect(),
            target_test,
        }
    }

    /// Reads every manifest entry. Target-train labels are never opened.
    pub fn load(manifest: &Path) -> Result<Self> {
        let root = manifest.parent().unwrap_or(Path::new("."));
        let mut data = Dataset::default();
        for e in read_manifest(manifest)? {
            let vol_path = root.join(&e.path);
            let volume = rvol::read_volume(&vol_path)?;
            match e.role {
                Role::Source => data.source.push((volume, rvol::read_labels(&root.join(e.label_path()))?)),
                Role::TargetTrain => data.target_train.push(volume),
                Role::TargetTest => data.target_test.push(EvalCase {
                    name: e.path.to_string_lossy().into_owned(),
                    labels: rvol::read_labels(&root.join(e.label_path()))?,
                    volume,
                    subset: e.subset,
                }),
            }
        }
        Ok(data)
    }
}

/// Writes a benchmark as `<role>/NNN.rvol` plus labels and a manifest under
/// `dir`. Returns the manifest path.
pub fn write_benchmark(dir: &Path, b: &Benchmark) -> Result<PathBuf> {
    let mut entries = Vec::new();
    let mut put = |role: Role, i: usize, v: &Volume, y: &LabelMap, subset: Option<Subset>| -> Result<()> {
        let sub = dir.join(role.as_str());
        fs::create_dir_all(&sub).map_err(CliError::io(&sub))?;
        let rel = PathBuf::from(role.as_str()).join(format!("{i:03}.rvol"));
        rvol::write_volume(&dir.join(&rel), v)?;
        rvol::write_labels(&dir.join(label_path(&rel)), y)?;
        entries.push(ManifestEntry { path: rel, role, subset });
        Ok(())
    };
    for (i, (v, y)) in b.source.iter().enumerate() {
        put(Role::Source, i, v, y, None)?;
    }
    for (i, s) in b.target_train.iter().enumerate() {
        put(Role::TargetTrain, i, &s.volume, &s.labels, Some(s.subset))?;
    }
    for (i, s) in b.target_test.iter().enumerate() {
        put(Role::TargetTest, i, &s.volume, &s.labels, Some(s.subset))?;
    }
    let manifest = dir.join(MANIFEST);
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use asc_core::synthdata::{gen_benchmark, BenchmarkSizes, PhantomSpec};
    use asc_core::Dims;

    #[test]
    fn label_path_sits_beside_volume() {
        assert_eq!(label_path(Path::new("source/003.rvol")), PathBuf::from("source/003_seg.rvol"));
    }

    #[test]
    fn benchmark_round_trip() {
        let spec = PhantomSpec {
            dims: Dims::cube(8),
            ..PhantomSpec::default()
        };
        let sizes = BenchmarkSizes {
            source: 2,
            target_train: 3,
            target_test: 2,
            abnormal_fraction: 0.5,
        };
        let b = gen_benchmark(&spec, sizes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_benchmark(dir.path(), &b).unwrap();

        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 7);
        assert!(entries.iter().filter(|e| e.role == Role::Source).all(|e| e.subset.is_none()));
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.starts_with("path,role,subset\nsource/000.rvol,source,-\n"));

        let loaded = Dataset::load(&manifest).unwrap();
        let direct = Dataset::from_benchmark(b);
        assert_eq!(loaded.source, direct.source);
        assert_eq!(loaded.target_train, direct.target_train);
        assert_eq!(loaded.target_test.len(), 2);
        for (a, b) in loaded.target_test.iter().zip(&direct.target_test) {
            assert_eq!((&a.name, &a.volume, &a.labels, a.subset), (&b.name, &b.volume, &b.labels, b.subset));
        }
    }

    #[test]
    fn bad_role_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(MANIFEST);
        fs::write(&path, "path,role,subset\na.rvol,validation,-\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(CliError::Data(_))));
    }
}
