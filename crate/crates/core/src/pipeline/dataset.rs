//! On-disk trial records and the record-schema validator.
//!
//! Each trial gets a directory `trial_NNNNN` with `meta.json`, `traj.bin`,
//! `contacts.jsonl` and `stress.bin`; `manifest.json` at the top lists every
//! file with its SHA-256. Binary files are little-endian:
//!
//! - `traj.bin`: `GRIPTRJ1`, vertex count (u64), then per step the step
//!   index (u64), time (f64), positions and velocities (3 f64 per vertex each).
//! - `stress.bin`: `GRIPSTR1`, tet count (u64), then per step the step index
//!   (u64) and 7 f64 per tet (Cauchy xx, yy, zz, xy, yz, zx, von Mises).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::trial::{Frame, HaltReason, Phase, TrialRecord, Verdict};
use super::PipelineError;
use crate::math::Vec3;
use crate::solver::ContactEvent;

pub const TRAJ_MAGIC: &[u8; 8] = b"GRIPTRJ1";
pub const STRESS_MAGIC: &[u8; 8] = b"GRIPSTR1";
pub const MANIFEST_FORMAT: &str = "grip-dataset/1";
const FILES: [&str; 4] = ["meta.json", "traj.bin", "contacts.jsonl", "stress.bin"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub dir: String,
    pub object: String,
    pub verdict: String,
    /// File name to SHA-256 (hex).
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub trials: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ContactLine {
    step: u64,
    contacts: Vec<ContactEvent>,
}

pub fn trial_dir_name(id: usize) -> String {
    format!("trial_{id:05}")
}

fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path.display().to_string(), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_vec3s(w: &mut impl Write, vs: &[Vec3]) -> std::io::Result<()> {
    for v in vs {
        for c in v.iter() {
            put_f64(w, *c)?;
        }
    }
    Ok(())
}

fn write_traj(path: &Path, record: &TrialRecord) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(TRAJ_MAGIC)?;
    put_u64(&mut w, record.n_vertices as u64)?;
    for f in &record.frames {
        put_u64(&mut w, f.step)?;
        put_f64(&mut w, f.time)?;
        put_vec3s(&mut w, &f.positions)?;
        put_vec3s(&mut w, &f.velocities)?;
    }
    w.flush()
}

fn write_stress(path: &Path, record: &TrialRecord) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(STRESS_MAGIC)?;
    put_u64(&mut w, record.n_tets as u64)?;
    for f in &record.frames {
        put_u64(&mut w, f.step)?;
        for row in &f.stress {
            for v in row {
                put_f64(&mut w, *v)?;
            }
        }
    }
    w.flush()
}

fn write_contacts(path: &Path, record: &TrialRecord) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for f in &record.frames {
        let line = ContactLine {
            step: f.step,
            contacts: f.contacts.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

fn write_trial(dir: &Path, record: &TrialRecord) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let meta = serde_json::to_vec_pretty(record)?;
    fs::write(dir.join("meta.json"), meta)?;
    write_traj(&dir.join("traj.bin"), record)?;
    write_contacts(&dir.join("contacts.jsonl"), record)?;
    write_stress(&dir.join("stress.bin"), record)
}

/// Writes every record and the manifest. Errors name the failing trial.
pub fn emit_dataset(records: &[TrialRecord], out: &Path) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out.display().to_string(), e))?;
    let mut trials = Vec::with_capacity(records.len());
    for r in records {
        let name = trial_dir_name(r.id);
        let dir = out.join(&name);
        write_trial(&dir, r).map_err(|e| PipelineError::io(format!("trial {}", r.id), e))?;
        let mut files = BTreeMap::new();
        for f in FILES {
            files.insert(f.to_string(), sha256_file(&dir.join(f))?);
        }
        trials.push(ManifestEntry {
            id: r.id,
            dir: name,
            object: r.object.clone(),
            verdict: r.verdict.label().to_string(),
            files,
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        trials,
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| PipelineError::io(path.display().to_string(), e))?;
    Ok(manifest)
}

pub fn load_manifest(out: &Path) -> Result<Manifest, PipelineError> {
    let path = out.join("manifest.json");
    let text = fs::read(&path).map_err(|e| PipelineError::io(path.display().to_string(), e))?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| PipelineError::Format(format!("manifest: {e}")))?;
    if m.format != MANIFEST_FORMAT {
        return Err(PipelineError::Format(format!("unknown manifest format {:?}", m.format)));
    }
    Ok(m)
}

/// Recomputes every file hash; returns the files whose content changed.
pub fn verify_manifest(out: &Path, manifest: &Manifest) -> Result<Vec<PathBuf>, PipelineError> {
    let mut bad = Vec::new();
    for t in &manifest.trials {
        for (name, hash) in &t.files {
            let path = out.join(&t.dir).join(name);
            if &sha256_file(&path)? != hash {
                bad.push(path);
            }
        }
    }
    Ok(bad)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PipelineError> {
        let end = self.at + n;
        let s = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| PipelineError::Format(format!("{}: truncated at byte {}", self.what, self.at)))?;
        self.at = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, PipelineError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, PipelineError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn vec3s(&mut self, n: usize) -> Result<Vec<Vec3>, PipelineError> {
        (0..n).map(|_| Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))).collect()
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }

    fn magic(&mut self, m: &[u8; 8]) -> Result<(), PipelineError> {
        if self.take(8)? != m {
            return Err(PipelineError::Format(format!("{}: bad magic", self.what)));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, PipelineError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| PipelineError::io(path.display().to_string(), e))?;
    Ok(bytes)
}

/// Loads one trial directory, frames included.
pub fn load_trial(dir: &Path) -> Result<TrialRecord, PipelineError> {
    let meta = read_file(&dir.join("meta.json"))?;
    let mut record: TrialRecord =
        serde_json::from_slice(&meta).map_err(|e| PipelineError::Format(format!("{}: {e}", dir.display())))?;

    let traj = read_file(&dir.join("traj.bin"))?;
    let mut c = Cursor {
        bytes: &traj,
        at: 0,
        what: "traj.bin",
    };
    c.magic(TRAJ_MAGIC)?;
    let nv = c.u64()? as usize;
    if nv != record.n_vertices {
        return Err(PipelineError::Format(format!("traj.bin: {nv} vertices, meta says {}", record.n_vertices)));
    }
    let mut frames = Vec::new();
    while !c.done() {
        frames.push(Frame {
            step: c.u64()?,
            time: c.f64()?,
            positions: c.vec3s(nv)?,
            velocities: c.vec3s(nv)?,
            contacts: Vec::new(),
            stress: Vec::new(),
        });
    }

    let stress = read_file(&dir.join("stress.bin"))?;
    let mut c = Cursor {
        bytes: &stress,
        at: 0,
        what: "stress.bin",
    };
    c.magic(STRESS_MAGIC)?;
    let nt = c.u64()? as usize;
    if nt != record.n_tets {
        return Err(PipelineError::Format(format!("stress.bin: {nt} tets, meta says {}", record.n_tets)));
    }
    for f in frames.iter_mut() {
        let step = c.u64()?;
        if step != f.step {
            return Err(PipelineError::Format(format!("stress.bin: step {step}, expected {}", f.step)));
        }
        f.stress = (0..nt)
            .map(|_| {
                let mut row = [0.0; 7];
                for v in row.iter_mut() {
                    *v = c.f64()?;
                }
                Ok(row)
            })
            .collect::<Result<_, PipelineError>>()?;
    }
    if !c.done() {
        return Err(PipelineError::Format("stress.bin: trailing bytes".into()));
    }

    let path = dir.join("contacts.jsonl");
    let file = fs::File::open(&path).map_err(|e| PipelineError::io(path.display().to_string(), e))?;
    let mut lines = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path.display().to_string(), e))?;
        let parsed: ContactLine =
            serde_json::from_str(&line).map_err(|e| PipelineError::Format(format!("contacts.jsonl:{}: {e}", i + 1)))?;
        let frame = frames
            .get_mut(i)
            .filter(|f| f.step == parsed.step)
            .ok_or_else(|| PipelineError::Format(format!("contacts.jsonl:{}: step {} out of place", i + 1, parsed.step)))?;
        frame.contacts = parsed.contacts;
        lines += 1;
    }
    if lines != frames.len() {
        return Err(PipelineError::Format(format!("contacts.jsonl: {lines} lines for {} steps", frames.len())));
    }
    record.frames = frames;
    Ok(record)
}

/// Loads every trial listed in the manifest, without frames.
pub fn load_dataset_meta(out: &Path) -> Result<Vec<TrialRecord>, PipelineError> {
    let manifest = load_manifest(out)?;
    manifest
        .trials
        .iter()
        .map(|t| {
            let path = out.join(&t.dir).join("meta.json");
            let bytes = read_file(&path)?;
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::Format(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Protocol-fidelity problems of a record; empty when the record is consistent.
///
/// Failed trials are only checked for a failure phase marker. Completed
/// trials must show the settle phase, force-halted closing when a gripper is
/// present, the hold phase, six gravity phases of equal fixed length, and a
/// verdict that agrees with the contact and displacement rule.
pub fn validate_record(r: &TrialRecord) -> Vec<String> {
    let mut issues = Vec::new();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            issues.push(msg);
        }
    };
    if let Verdict::SimFailed { phase, .. } = &r.verdict {
        check(
            r.phases.last().is_some_and(|m| m.phase == *phase),
            format!("failed in {phase:?} but last marker differs"),
        );
        return issues;
    }
    let phases: Vec<Phase> = r.phases.iter().map(|m| m.phase).collect();
    let gripper = r.candidate.is_some();
    let mut expected = vec![Phase::Settle];
    if gripper {
        expected.push(Phase::Closing);
    }
    expected.push(Phase::Hold);
    expected.extend((0..6).map(Phase::Gravity));
    check(phases == expected, format!("phase sequence {phases:?}"));
    check(
        r.phases.windows(2).all(|w| w[0].end == w[1].start) && r.phases.first().is_some_and(|m| m.start == 0),
        "phase markers are not contiguous".into(),
    );
    let settle = r.protocol.steps(r.protocol.settle_duration, r.solver.dt) as u64;
    check(
        r.phases.first().is_some_and(|m| m.steps() == settle),
        format!("settle phase is not {settle} steps"),
    );
    let n = r.protocol.gravity_phase_steps(r.solver.dt) as u64;
    let gravity: Vec<u64> = r
        .phases
        .iter()
        .filter(|m| matches!(m.phase, Phase::Gravity(_)))
        .map(|m| m.steps())
        .collect();
    check(
        gravity.len() == 6 && gravity.iter().all(|&s| s == n),
        format!("gravity phases {gravity:?}, expected six of {n} steps"),
    );
    check(r.com_displacement.len() == 6, format!("{} COM displacements", r.com_displacement.len()));
    if gripper {
        for f in 0..2 {
            let halts: Vec<_> = r.halts.iter().filter(|h| h.finger == f).collect();
            check(halts.len() == 1, format!("finger {f} halted {} times", halts.len()));
            if let Some(h) = halts.first() {
                check(h.reason == HaltReason::Force, format!("finger {f} stopped without reaching the halt force"));
                let limit = r.protocol.halt_force;
                check(
                    h.reason != HaltReason::Force || (h.force > limit && h.prev_force <= limit),
                    format!("finger {f} halt forces {} after {}", h.force, h.prev_force),
                );
            }
        }
    }
    let still = r.com_displacement.last().is_some_and(|d| *d < r.displacement_threshold());
    let expect_stable = r.final_contact && still;
    check(
        (r.verdict == Verdict::Stable) == expect_stable,
        format!(
            "verdict {} but contact={} final displacement={:?}",
            r.verdict.label(),
            r.final_contact,
            r.com_displacement.last()
        ),
    );
    if r.verdict == Verdict::Stable {
        check(r.metrics.is_some_and(|m| m.d1 == 0.0), "stable trial with penetration".into());
    }
    if !r.frames.is_empty() {
        let total = r.phases.last().map_or(0, |m| m.end) as usize;
        check(r.frames.len() == total, format!("{} frames for {total} steps", r.frames.len()));
    }
    issues
}
