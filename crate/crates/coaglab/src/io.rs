//! On-disk formats: snapshot CSV files with JSON sidecars, trajectory
//! directories with a manifest, and content hashing for reproducibility.
//!
//! Numbers are written in the shortest decimal form that round-trips to the
//! same bits, so identical states produce byte-identical files and files
//! parse back bit-exactly. Writes go through a temporary file and a rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{DiagnosticsError, SnapshotSource};
use crate::lattice::{Composition, LatticeState};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o failure on {path}: {source}")]
    Fs {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed snapshot file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("snapshot {path} does not match its recorded digest")]
    DigestMismatch { path: PathBuf },
    #[error("missing or unreadable manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Sidecar header carried next to each snapshot CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub d: usize,
    pub n_max: u32,
    pub time: f64,
    pub escaped_mass: Vec<f64>,
    /// Mass moved to the ledger by the snapshot emission floor.
    #[serde(default)]
    pub dropped_mass: Vec<f64>,
}

/// Manifest entry for one emitted snapshot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub time: f64,
    pub csv: String,
    pub header: String,
    pub sha256_csv: String,
}

/// Integration summary persisted with a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ReportRecord {
    pub initial_mass: Vec<f64>,
    pub mass_defect: Vec<f64>,
    pub max_rel_mass_defect: f64,
    pub escaped_fraction: f64,
    pub clipped_mass: Vec<f64>,
    pub steps_accepted: u64,
    pub steps_rejected: u64,
    pub rhs_evals: u64,
    pub final_time: f64,
}

/// Self-describing manifest of a trajectory directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Full copy of the run configuration, so offline diagnostics never
    /// need the original file.
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub kernel_sha256: String,
    pub status: String,
    pub snapshots: Vec<SnapshotEntry>,
    pub report: Option<ReportRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|source| IoError::Fs {
        path: tmp.clone(),
        source,
    })?;
    file.write_all(bytes).map_err(|source| IoError::Fs {
        path: tmp.clone(),
        source,
    })?;
    file.sync_all().map_err(|source| IoError::Fs {
        path: tmp.clone(),
        source,
    })?;
    drop(file);
    fs::rename(&tmp, path).map_err(|source| IoError::Fs {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

/// Renders a snapshot as CSV with header `alpha_1,...,alpha_d,n`, rows in
/// the canonical (size, lexicographic) order.
pub fn snapshot_to_csv<R: Real>(state: &LatticeState<R>) -> String {
    let d = state.d();
    let mut out = String::new();
    for i in 1..=d {
        out.push_str(&format!("alpha_{i},"));
    }
    out.push('n');
    out.push('\n');
    for (comp, n) in &state.concentrations {
        for &a in comp.components() {
            out.push_str(&a.to_string());
            out.push(',');
        }
        out.push_str(&n.format_roundtrip());
        out.push('\n');
    }
    out
}

pub fn snapshot_header<R: Real>(state: &LatticeState<R>) -> SnapshotHeader {
    SnapshotHeader {
        d: state.d(),
        n_max: state.n_max(),
        time: state.time.to_f64().unwrap_or(f64::NAN),
        escaped_mass: state
            .escaped_mass
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect(),
        dropped_mass: state
            .dropped_mass
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect(),
    }
}

/// Parses a snapshot back from its CSV body and sidecar header.
pub fn snapshot_from_csv<R: Real>(
    csv: &str,
    header: &SnapshotHeader,
    path: &Path,
) -> Result<LatticeState<R>, IoError> {
    let malformed = |reason: &str| IoError::Malformed {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut lines = csv.lines();
    let head = lines.next().ok_or_else(|| malformed("empty file"))?;
    let expected: Vec<String> = (1..=header.d).map(|i| format!("alpha_{i}")).collect();
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() != header.d + 1
        || cols[..header.d] != expected[..]
        || cols[header.d] != "n"
    {
        return Err(malformed("unexpected header row"));
    }
    let mut state = LatticeState::<R>::new(header.d, header.n_max);
    state.time = crate::real::lit(header.time);
    state.escaped_mass = header
        .escaped_mass
        .iter()
        .map(|&v| crate::real::lit(v))
        .collect();
    state.dropped_mass = header
        .dropped_mass
        .iter()
        .map(|&v| crate::real::lit(v))
        .collect();
    if state.escaped_mass.len() != header.d {
        return Err(malformed("escaped_mass length mismatch"));
    }
    if state.dropped_mass.is_empty() {
        state.dropped_mass = vec![R::zero(); header.d];
    }
    let mut map = BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.d + 1 {
            return Err(malformed(&format!("bad field count on line {}", lineno + 2)));
        }
        let mut alpha = Vec::with_capacity(header.d);
        for f in &fields[..header.d] {
            alpha.push(
                f.parse::<u32>()
                    .map_err(|_| malformed(&format!("bad component on line {}", lineno + 2)))?,
            );
        }
        let n: R = fields[header.d]
            .parse()
            .map_err(|_| malformed(&format!("bad concentration on line {}", lineno + 2)))?;
        let comp = Composition::new(&alpha)
            .map_err(|_| malformed(&format!("invalid composition on line {}", lineno + 2)))?;
        map.insert(comp, n);
    }
    state.concentrations = map;
    Ok(state)
}

/// Incremental writer for a trajectory directory.
pub struct TrajectoryWriter {
    dir: PathBuf,
    entries: Vec<SnapshotEntry>,
    counter: usize,
}

impl TrajectoryWriter {
    pub fn create(dir: &Path) -> Result<Self, IoError> {
        fs::create_dir_all(dir).map_err(|source| IoError::Fs {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            entries: Vec::new(),
            counter: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_snapshot<R: Real>(&mut self, state: &LatticeState<R>) -> Result<(), IoError> {
        let csv_name = format!("snap_{:05}.csv", self.counter);
        let hdr_name = format!("snap_{:05}.json", self.counter);
        self.counter += 1;
        let csv = snapshot_to_csv(state);
        let header = snapshot_header(state);
        write_atomic(&self.dir.join(&csv_name), csv.as_bytes())?;
        write_atomic(
            &self.dir.join(&hdr_name),
            serde_json::to_string_pretty(&header)?.as_bytes(),
        )?;
        self.entries.push(SnapshotEntry {
            time: header.time,
            csv: csv_name,
            header: hdr_name,
            sha256_csv: sha256_hex(csv.as_bytes()),
        });
        Ok(())
    }

    pub fn finish(
        self,
        config: serde_json::Value,
        config_sha256: String,
        kernel_sha256: String,
        status: &str,
        report: Option<ReportRecord>,
    ) -> Result<Manifest, IoError> {
        let manifest = Manifest {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            config_sha256,
            kernel_sha256,
            status: status.to_string(),
            snapshots: self.entries,
            report,
        };
        write_atomic(
            &self.dir.join(MANIFEST_NAME),
            serde_json::to_string_pretty(&manifest)?.as_bytes(),
        )?;
        Ok(manifest)
    }
}

/// Reader over a trajectory directory that verifies content digests and
/// feeds diagnostics one snapshot at a time.
pub struct TrajectoryDir {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl TrajectoryDir {
    pub fn open(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = fs::read(&path).map_err(|_| IoError::MissingManifest(dir.to_path_buf()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn read_snapshot(&self, index: usize) -> Result<(f64, LatticeState<f64>), IoError> {
        let entry = &self.manifest.snapshots[index];
        let csv_path = self.dir.join(&entry.csv);
        let csv = fs::read_to_string(&csv_path).map_err(|source| IoError::Fs {
            path: csv_path.clone(),
            source,
        })?;
        if sha256_hex(csv.as_bytes()) != entry.sha256_csv {
            return Err(IoError::DigestMismatch { path: csv_path });
        }
        let hdr_path = self.dir.join(&entry.header);
        let hdr_bytes = fs::read(&hdr_path).map_err(|source| IoError::Fs {
            path: hdr_path.clone(),
            source,
        })?;
        let header: SnapshotHeader = serde_json::from_slice(&hdr_bytes)?;
        let state = snapshot_from_csv::<f64>(&csv, &header, &csv_path)?;
        Ok((entry.time, state))
    }
}

impl SnapshotSource<f64> for TrajectoryDir {
    fn len(&self) -> usize {
        self.manifest.snapshots.len()
    }
    fn time(&self, i: usize) -> f64 {
        self.manifest.snapshots[i].time
    }
    fn get(&mut self, i: usize) -> Result<(f64, LatticeState<f64>), DiagnosticsError> {
        self.read_snapshot(i)
            .map_err(|e| DiagnosticsError::Source(e.to_string()))
    }
}
