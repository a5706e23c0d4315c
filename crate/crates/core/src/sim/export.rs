use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scenario, SimObject};
use crate::error::{Error, Result};
use crate::motio::{self, DetRecord, SeqInfo};

pub const SIDECAR_FILE: &str = "scenario.json";

/// Everything a MOTChallenge directory lacks for re-rendering features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub frames: usize,
    pub world_width: u32,
    pub world_height: u32,
    pub noise_sigma: f64,
    pub background: Vec<f64>,
    pub objects: Vec<SidecarObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SidecarObject {
    pub id: u32,
    pub depth: u32,
    pub signature: Vec<f64>,
}

impl Sidecar {
    pub fn of(s: &Scenario) -> Self {
        Self {
            seed: s.seed,
            frames: s.frames,
            world_width: s.world_width,
            world_height: s.world_height,
            noise_sigma: s.noise_sigma,
            background: s.background.clone(),
            objects: s
                .objects
                .iter()
                .map(|o| SidecarObject { id: o.id, depth: o.depth, signature: o.signature.clone() })
                .collect(),
        }
    }
}

/// Lay a scenario out as `seqinfo.ini`, `gt/gt.txt`, `det/det.txt` and the
/// feature sidecar.
pub fn write_sequence(dir: &Path, scenario: &Scenario) -> Result<()> {
    std::fs::create_dir_all(dir.join("gt"))?;
    std::fs::create_dir_all(dir.join("det"))?;
    let info = SeqInfo {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()),
        im_width: scenario.world_width,
        im_height: scenario.world_height,
        seq_length: scenario.frames as u32,
    };
    std::fs::write(dir.join("seqinfo.ini"), motio::write_seqinfo(&info))?;
    std::fs::write(dir.join("gt").join("gt.txt"), motio::write_gt(&scenario.gt_records()))?;
    let dets: Vec<DetRecord> = scenario.detections.iter().flatten().copied().collect();
    std::fs::write(dir.join("det").join("det.txt"), motio::write_det(&dets))?;
    std::fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&Sidecar::of(scenario))?)?;
    Ok(())
}

/// Inverse of [`write_sequence`].
pub fn load_sequence(dir: &Path) -> Result<Scenario> {
    let sidecar_path = dir.join(SIDECAR_FILE);
    if !sidecar_path.exists() {
        return Err(Error::Invalid(format!(
            "{} has no {SIDECAR_FILE}; feature frames cannot be rendered without it",
            dir.display()
        )));
    }
    let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path)?)?;
    let info = motio::parse_seqinfo(&std::fs::read_to_string(dir.join("seqinfo.ini"))?)?;
    if info.seq_length as usize != side.frames
        || info.im_width != side.world_width
        || info.im_height != side.world_height
    {
        return Err(Error::Invalid("seqinfo.ini disagrees with the sidecar".into()));
    }
    let gt = motio::parse_gt(&std::fs::read_to_string(dir.join("gt").join("gt.txt"))?)?;
    let dets = motio::parse_det(&std::fs::read_to_string(dir.join("det").join("det.txt"))?)?;

    let mut per_id: BTreeMap<i64, Vec<(u32, crate::geometry::BBox, f64)>> = BTreeMap::new();
    for r in &gt {
        per_id.entry(r.id).or_default().push((r.frame, r.bbox, r.visibility));
    }
    let mut objects = Vec::with_capacity(side.objects.len());
    for o in &side.objects {
        let mut rows = per_id.remove(&(o.id as i64)).unwrap_or_default();
        rows.sort_by_key(|r| r.0);
        if rows.len() != side.frames || rows.iter().enumerate().any(|(i, r)| r.0 as usize != i + 1) {
            return Err(Error::Invalid(format!("object {} must appear exactly once in every frame", o.id)));
        }
        objects.push(SimObject {
            id: o.id,
            depth: o.depth,
            signature: o.signature.clone(),
            boxes: rows.iter().map(|r| r.1).collect(),
            visibility: rows.iter().map(|r| r.2).collect(),
        });
    }
    if let Some(id) = per_id.keys().next() {
        return Err(Error::Invalid(format!("gt id {id} has no sidecar entry")));
    }
    let mut detections = vec![Vec::new(); side.frames];
    for d in dets {
        let slot = detections
            .get_mut(d.frame as usize - 1)
            .ok_or_else(|| Error::Invalid(format!("detection in frame {} beyond sequence end", d.frame)))?;
        slot.push(d);
    }
    Ok(Scenario {
        seed: side.seed,
        frames: side.frames,
        world_width: side.world_width,
        world_height: side.world_height,
        noise_sigma: side.noise_sigma,
        background: side.background,
        objects,
        detections,
    })
}
