//! On-disk bundle format: a directory holding a JSON manifest plus raw
//! little-endian tensor blobs.
//!
//! Blob layout: 8-byte magic, u32 dtype (1 = f64, 2 = u8), u32 ndim,
//! then ndim u64 dims, then row-major data. Every write goes through a
//! temp file and rename so readers never see a partial file. Floats in
//! the manifest survive the JSON round trip bit-exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{DepthMap, Intrinsics, RigidTransform};
use crate::human::{BodyFrame, BodySequence};
use crate::pipeline::{FrameState, SequenceInput};
use crate::scene::{ForegroundMask, MatchEntry, MatchSet};
use crate::{Error, Result};

pub const BUNDLE_VERSION: u32 = 1;
const MAGIC: [u8; 8] = *b"HSRBLOB1";
const DTYPE_F64: u32 = 1;
const DTYPE_U8: u32 = 2;

// ---------------------------------------------------------------------------
// blob io

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn blob_header(dtype: u32, dims: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + dims.len() * 8);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&dtype.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out
}

pub fn write_blob_f64(path: &Path, dims: &[u64], data: &[f64]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
    let mut bytes = blob_header(DTYPE_F64, dims);
    bytes.reserve(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn write_blob_u8(path: &Path, dims: &[u64], data: &[u8]) -> Result<()> {
    debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
    let mut bytes = blob_header(DTYPE_U8, dims);
    bytes.extend_from_slice(data);
    atomic_write(path, &bytes)
}

fn read_header(path: &Path, bytes: &[u8], want_dtype: u32) -> Result<(Vec<u64>, usize)> {
    let shape_err = |reason: String| Error::ShapeError {
        path: path.display().to_string(),
        reason,
    };
    if bytes.len() < 16 {
        return Err(shape_err("file shorter than the 16-byte header".into()));
    }
    if bytes[..8] != MAGIC {
        return Err(Error::ParseError {
            path: path.display().to_string(),
            reason: "bad blob magic".into(),
        });
    }
    let dtype = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if dtype != want_dtype {
        return Err(shape_err(format!("dtype {} where {} expected", dtype, want_dtype)));
    }
    let ndim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let dims_end = 16 + ndim * 8;
    if bytes.len() < dims_end {
        return Err(shape_err("truncated dimension list".into()));
    }
    let dims: Vec<u64> = (0..ndim)
        .map(|k| u64::from_le_bytes(bytes[16 + k * 8..24 + k * 8].try_into().unwrap()))
        .collect();
    Ok((dims, dims_end))
}

pub fn read_blob_f64(path: &Path) -> Result<(Vec<u64>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, off) = read_header(path, &bytes, DTYPE_F64)?;
    let count = dims.iter().product::<u64>() as usize;
    if bytes.len() != off + count * 8 {
        return Err(Error::ShapeError {
            path: path.display().to_string(),
            reason: format!("payload holds {} bytes, dims promise {}", bytes.len() - off, count * 8),
        });
    }
    let data = bytes[off..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dims, data))
}

pub fn read_blob_u8(path: &Path) -> Result<(Vec<u64>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (dims, off) = read_header(path, &bytes, DTYPE_U8)?;
    let count = dims.iter().product::<u64>() as usize;
    if bytes.len() != off + count {
        return Err(Error::ShapeError {
            path: path.display().to_string(),
            reason: format!("payload holds {} bytes, dims promise {}", bytes.len() - off, count),
        });
    }
    Ok((dims, bytes[off..].to_vec()))
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    fps: f64,
    frame_count: usize,
    intrinsics: Intrinsics,
    frames: Vec<FrameRef>,
    people: Vec<PersonRef>,
    matches: Vec<MatchRef>,
    /// Relative path to a companion ground-truth bundle, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameRef {
    frame_id: usize,
    sigma: f64,
    /// Row-major rotation then translation, 12 numbers.
    pose: Vec<f64>,
    depth: String,
    depth_valid: String,
    mask: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PersonRef {
    person_id: u32,
    vertices: String,
    joints: String,
    t_c: String,
    contact: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MatchRef {
    frame_i: usize,
    frame_j: usize,
    data: String,
}

fn pose_to_vec(t: &RigidTransform) -> Vec<f64> {
    let mut out = Vec::with_capacity(12);
    for r in 0..3 {
        for c in 0..3 {
            out.push(t.rotation[(r, c)]);
        }
    }
    out.extend_from_slice(t.translation.as_slice());
    out
}

fn pose_from_slice(v: &[f64]) -> RigidTransform {
    let mut rot = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            rot[(r, c)] = v[r * 3 + c];
        }
    }
    RigidTransform::new(rot, Vector3::new(v[9], v[10], v[11]))
}

/// A full problem on disk: the optimizer's input (or output) plus an
/// optional pointer to its ground-truth companion.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub input: SequenceInput,
    pub ground_truth: Option<PathBuf>,
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let input = &bundle.input;
    let n = input.frames.len();

    let frames: Vec<FrameRef> = input
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let depth = format!("frame_{:05}_depth.bin", t);
            let depth_valid = format!("frame_{:05}_valid.bin", t);
            let mask = format!("frame_{:05}_mask.bin", t);
            let dims = [f.depth.height as u64, f.depth.width as u64];
            write_blob_f64(&dir.join(&depth), &dims, &f.depth.values)?;
            write_blob_u8(
                &dir.join(&depth_valid),
                &dims,
                &f.depth.valid.iter().map(|&b| b as u8).collect::<Vec<_>>(),
            )?;
            write_blob_u8(
                &dir.join(&mask),
                &[f.mask.height as u64, f.mask.width as u64],
                &f.mask.grid.iter().map(|&b| b as u8).collect::<Vec<_>>(),
            )?;
            Ok(FrameRef {
                frame_id: t,
                sigma: f.sigma,
                pose: pose_to_vec(&f.pose),
                depth,
                depth_valid,
                mask,
            })
        })
        .collect::<Result<_>>()?;

    let people: Vec<PersonRef> = input
        .people
        .iter()
        .enumerate()
        .map(|(p, seq)| {
            let v_count = seq.frames.first().map_or(0, |b| b.vertices.len());
            let j_count = seq.frames.first().map_or(0, |b| b.joints.len());
            let mut verts = Vec::with_capacity(n * v_count * 3);
            let mut joints = Vec::with_capacity(n * j_count * 3);
            let mut t_c = Vec::with_capacity(n * 12);
            let mut contact = Vec::with_capacity(n * v_count);
            for bf in &seq.frames {
                for v in &bf.vertices {
                    verts.extend_from_slice(v.as_slice());
                }
                for j in &bf.joints {
                    joints.extend_from_slice(j.as_slice());
                }
                t_c.extend(pose_to_vec(&bf.t_c));
                contact.extend(bf.contact.iter().map(|&b| b as u8));
            }
            let names = (
                format!("person_{:03}_vertices.bin", p),
                format!("person_{:03}_joints.bin", p),
                format!("person_{:03}_t_c.bin", p),
                format!("person_{:03}_contact.bin", p),
            );
            write_blob_f64(&dir.join(&names.0), &[n as u64, v_count as u64, 3], &verts)?;
            write_blob_f64(&dir.join(&names.1), &[n as u64, j_count as u64, 3], &joints)?;
            write_blob_f64(&dir.join(&names.2), &[n as u64, 12], &t_c)?;
            write_blob_u8(&dir.join(&names.3), &[n as u64, v_count as u64], &contact)?;
            Ok(PersonRef {
                person_id: seq.frames.first().map_or(p as u32, |b| b.person_id),
                vertices: names.0,
                joints: names.1,
                t_c: names.2,
                contact: names.3,
            })
        })
        .collect::<Result<_>>()?;

    let matches: Vec<MatchRef> = input
        .matches
        .iter()
        .enumerate()
        .map(|(k, set)| {
            let name = format!("matches_{:05}.bin", k);
            let mut data = Vec::with_capacity(set.entries.len() * 11);
            for e in &set.entries {
                data.extend_from_slice(e.point_i.as_slice());
                data.extend_from_slice(e.point_j.as_slice());
                data.extend_from_slice(e.pixel_i.as_slice());
                data.extend_from_slice(e.pixel_j.as_slice());
                data.push(e.confidence);
            }
            write_blob_f64(&dir.join(&name), &[set.entries.len() as u64, 11], &data)?;
            Ok(MatchRef {
                frame_i: set.edge.0,
                frame_j: set.edge.1,
                data: name,
            })
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        version: BUNDLE_VERSION,
        fps: input.fps,
        frame_count: n,
        intrinsics: input.intrinsics,
        frames,
        people,
        matches,
        ground_truth: bundle
            .ground_truth
            .as_ref()
            .map(|p| p.display().to_string()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    atomic_write(&dir.join("manifest.json"), json.as_bytes())
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        path: mpath.display().to_string(),
        reason: e.to_string(),
    })?;
    if manifest.version != BUNDLE_VERSION {
        return Err(Error::VersionError {
            found: manifest.version,
            supported: BUNDLE_VERSION,
        });
    }
    manifest.intrinsics.validate()?;
    if manifest.frames.len() != manifest.frame_count {
        return Err(Error::ParseError {
            path: mpath.display().to_string(),
            reason: format!(
                "manifest lists {} frames but declares {}",
                manifest.frames.len(),
                manifest.frame_count
            ),
        });
    }

    let parse_err = |path: &Path, reason: String| Error::ShapeError {
        path: path.display().to_string(),
        reason,
    };

    let frames: Vec<FrameState> = manifest
        .frames
        .iter()
        .map(|fr| {
            if fr.pose.len() != 12 {
                return Err(parse_err(&mpath, format!("pose of frame {} has {} numbers", fr.frame_id, fr.pose.len())));
            }
            let dpath = dir.join(&fr.depth);
            let (ddims, values) = read_blob_f64(&dpath)?;
            let vpath = dir.join(&fr.depth_valid);
            let (vdims, valid_u8) = read_blob_u8(&vpath)?;
            if ddims != vdims || ddims.len() != 2 {
                return Err(parse_err(&dpath, "depth and validity dims disagree".into()));
            }
            let depth = DepthMap {
                width: ddims[1] as usize,
                height: ddims[0] as usize,
                values,
                valid: valid_u8.iter().map(|&b| b != 0).collect(),
            };
            depth.validate()?;
            let mpath2 = dir.join(&fr.mask);
            let (mdims, grid_u8) = read_blob_u8(&mpath2)?;
            if mdims.len() != 2 {
                return Err(parse_err(&mpath2, "mask must be 2-d".into()));
            }
            Ok(FrameState {
                pose: pose_from_slice(&fr.pose),
                sigma: fr.sigma,
                depth,
                mask: ForegroundMask {
                    width: mdims[1] as usize,
                    height: mdims[0] as usize,
                    grid: grid_u8.iter().map(|&b| b != 0).collect(),
                },
            })
        })
        .collect::<Result<_>>()?;

    let n = frames.len();
    let people: Vec<BodySequence> = manifest
        .people
        .iter()
        .map(|pr| {
            let (vd, verts) = read_blob_f64(&dir.join(&pr.vertices))?;
            let (jd, joints) = read_blob_f64(&dir.join(&pr.joints))?;
            let (td, t_c) = read_blob_f64(&dir.join(&pr.t_c))?;
            let (cd, contact) = read_blob_u8(&dir.join(&pr.contact))?;
            let bad = |which: &str| parse_err(&dir.join(which), "unexpected tensor shape".into());
            if vd.len() != 3 || vd[0] as usize != n || vd[2] != 3 {
                return Err(bad(&pr.vertices));
            }
            if jd.len() != 3 || jd[0] as usize != n || jd[2] != 3 {
                return Err(bad(&pr.joints));
            }
            if td != vec![n as u64, 12] {
                return Err(bad(&pr.t_c));
            }
            if cd != vec![n as u64, vd[1]] {
                return Err(bad(&pr.contact));
            }
            let (v_count, j_count) = (vd[1] as usize, jd[1] as usize);
            let frames = (0..n)
                .map(|t| {
                    let vec3 = |flat: &[f64], base: usize| {
                        Vector3::new(flat[base], flat[base + 1], flat[base + 2])
                    };
                    BodyFrame {
                        vertices: (0..v_count)
                            .map(|k| vec3(&verts, (t * v_count + k) * 3))
                            .collect(),
                        joints: (0..j_count)
                            .map(|k| vec3(&joints, (t * j_count + k) * 3))
                            .collect(),
                        t_c: pose_from_slice(&t_c[t * 12..(t + 1) * 12]),
                        contact: contact[t * v_count..(t + 1) * v_count]
                            .iter()
                            .map(|&b| b != 0)
                            .collect(),
                        person_id: pr.person_id,
                        frame_id: t,
                    }
                })
                .collect();
            Ok(BodySequence {
                frames,
                fps: manifest.fps,
            })
        })
        .collect::<Result<_>>()?;

    let matches: Vec<MatchSet> = manifest
        .matches
        .iter()
        .map(|mr| {
            let path = dir.join(&mr.data);
            let (dims, data) = read_blob_f64(&path)?;
            if dims.len() != 2 || dims[1] != 11 {
                return Err(parse_err(&path, "match tensor must be k x 11".into()));
            }
            if mr.frame_i >= n || mr.frame_j >= n {
                return Err(parse_err(&path, "match edge outside frame range".into()));
            }
            let entries = data
                .chunks_exact(11)
                .map(|c| MatchEntry {
                    point_i: Vector3::new(c[0], c[1], c[2]),
                    point_j: Vector3::new(c[3], c[4], c[5]),
                    pixel_i: Vector2::new(c[6], c[7]),
                    pixel_j: Vector2::new(c[8], c[9]),
                    confidence: c[10],
                })
                .collect();
            Ok(MatchSet {
                edge: (mr.frame_i, mr.frame_j),
                entries,
            })
        })
        .collect::<Result<_>>()?;

    Ok(Bundle {
        input: SequenceInput {
            intrinsics: manifest.intrinsics,
            fps: manifest.fps,
            frames,
            people,
            matches,
        },
        ground_truth: manifest.ground_truth.map(PathBuf::from),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn sample_bundle() -> Bundle {
        let spec = crate::synth::ScenarioSpec {
            frame_count: 8,
            person_count: 2,
            ..Default::default()
        };
        let sc = crate::synth::generate_scenario(&spec);
        let noise = crate::synth::NoiseSpec::mild();
        let init = crate::synth::perturb_initialization(&sc, &noise);
        let matches = crate::synth::make_matches(&sc, &noise, &[(0, 3), (3, 7)], 25);
        Bundle {
            input: SequenceInput {
                intrinsics: init.intrinsics,
                fps: init.fps,
                frames: init
                    .frames
                    .iter()
                    .map(|f| FrameState {
                        pose: f.pose,
                        sigma: f.sigma,
                        depth: f.depth.clone(),
                        mask: f.mask.clone(),
                    })
                    .collect(),
                people: init.people,
                matches,
            },
            ground_truth: Some(PathBuf::from("../gt")),
        }
    }

    #[test]
    fn blob_round_trip_is_bit_exact() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.bin");
        let data = vec![0.1, -2.5e-300, f64::MAX, 0.0, 1.0 / 3.0, -0.0];
        write_blob_f64(&path, &[2, 3], &data).unwrap();
        let (dims, back) = read_blob_f64(&path).unwrap();
        assert_eq!(dims, vec![2, 3]);
        assert_eq!(
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            back.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_blob_reports_shape_error() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("t.bin");
        write_blob_f64(&path, &[4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 8]).unwrap();
        match read_blob_f64(&path) {
            Err(Error::ShapeError { path: p, .. }) => assert!(p.contains("t.bin")),
            other => panic!("expected ShapeError, got {:?}", other),
        }
    }

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        let bundle = sample_bundle();
        let dir = TempDir::new().unwrap();
        save_bundle(dir.path(), &bundle).unwrap();
        let back = load_bundle(dir.path()).unwrap();

        assert_eq!(back.input.intrinsics, bundle.input.intrinsics);
        assert_eq!(back.input.fps, bundle.input.fps);
        assert_eq!(back.ground_truth, bundle.ground_truth);
        for (a, b) in back.input.frames.iter().zip(&bundle.input.frames) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
            assert_eq!(a.depth, b.depth);
            assert_eq!(a.mask.grid, b.mask.grid);
        }
        for (a, b) in back.input.people.iter().zip(&bundle.input.people) {
            for (x, y) in a.frames.iter().zip(&b.frames) {
                assert_eq!(x.vertices, y.vertices);
                assert_eq!(x.joints, y.joints);
                assert_eq!(x.t_c, y.t_c);
                assert_eq!(x.contact, y.contact);
                assert_eq!(x.person_id, y.person_id);
            }
        }
        for (a, b) in back.input.matches.iter().zip(&bundle.input.matches) {
            assert_eq!(a.edge, b.edge);
            assert_eq!(a.entries, b.entries);
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let bundle = sample_bundle();
        let dir = TempDir::new().unwrap();
        save_bundle(dir.path(), &bundle).unwrap();
        let mpath = dir.path().join("manifest.json");
        let text = fs::read_to_string(&mpath)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&mpath, text).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(Error::VersionError { found: 99, .. })
        ));
    }

    #[test]
    fn truncated_tensor_names_the_blob() {
        let bundle = sample_bundle();
        let dir = TempDir::new().unwrap();
        save_bundle(dir.path(), &bundle).unwrap();
        let victim = dir.path().join("person_000_vertices.bin");
        let full = fs::read(&victim).unwrap();
        fs::write(&victim, &full[..full.len() - 24]).unwrap();
        match load_bundle(dir.path()) {
            Err(Error::ShapeError { path, .. }) => assert!(path.contains("person_000_vertices")),
            other => panic!("expected ShapeError, got {:?}", other),
        }
    }
}
