//! MOTChallenge text formats: `gt.txt`, `det.txt`, result files and
//! `seqinfo.ini`.
//!
//! Writers render floats with at most two decimals and strip trailing zeros,
//! so any record whose values lie on the 0.01 grid survives a round trip.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GtRecord {
    pub frame: u32,
    pub id: i64,
    pub bbox: BBox,
    /// Evaluation flag column (1 = consider, 0 = ignore).
    pub conf: f64,
    pub class: i64,
    pub visibility: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetRecord {
    pub frame: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

/// One line of a tracker result file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultRecord {
    pub frame: u32,
    pub id: u32,
    pub bbox: BBox,
    pub conf: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeqInfo {
    pub name: Option<String>,
    pub im_width: u32,
    pub im_height: u32,
    pub seq_length: u32,
}

/// Float rendering shared by every writer.
pub fn format_float(v: f64) -> String {
    let mut s = format!("{v:.2}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn num<T: std::str::FromStr>(cols: &[&str], i: usize, line: usize, what: &str) -> Result<T> {
    cols.get(i)
        .and_then(|s| s.parse::<T>().ok())
        .ok_or_else(|| Error::Parse { line, msg: format!("column {} ({what}) is missing or not a number", i + 1) })
}

fn real(cols: &[&str], i: usize, line: usize, what: &str) -> Result<f64> {
    let v: f64 = num(cols, i, line, what)?;
    if !v.is_finite() {
        return Err(Error::Parse { line, msg: format!("{what} is not finite") });
    }
    Ok(v)
}

fn frame_of(cols: &[&str], line: usize) -> Result<u32> {
    let f: u32 = num(cols, 0, line, "frame")?;
    if f == 0 {
        return Err(Error::Parse { line, msg: "frames are 1-based".into() });
    }
    Ok(f)
}

fn bbox_of(cols: &[&str], line: usize) -> Result<BBox> {
    let b = BBox {
        left: real(cols, 2, line, "bb_left")?,
        top: real(cols, 3, line, "bb_top")?,
        width: real(cols, 4, line, "bb_width")?,
        height: real(cols, 5, line, "bb_height")?,
    };
    if b.width <= 0.0 || b.height <= 0.0 {
        return Err(Error::Parse { line, msg: format!("box size must be positive, got {}x{}", b.width, b.height) });
    }
    Ok(b)
}

fn rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty())
}

/// `frame,id,left,top,width,height,conf,class[,visibility]`.
pub fn parse_gt(text: &str) -> Result<Vec<GtRecord>> {
    rows(text)
        .map(|(n, l)| {
            let c = fields(l);
            if c.len() < 8 {
                return Err(Error::Parse { line: n, msg: format!("expected at least 8 columns, got {}", c.len()) });
            }
            let visibility = if c.len() > 8 { real(&c, 8, n, "visibility")? } else { 1.0 };
            if !(0.0..=1.0).contains(&visibility) {
                return Err(Error::Parse { line: n, msg: format!("visibility {visibility} outside [0, 1]") });
            }
            Ok(GtRecord {
                frame: frame_of(&c, n)?,
                id: num(&c, 1, n, "id")?,
                bbox: bbox_of(&c, n)?,
                conf: real(&c, 6, n, "conf")?,
                class: num(&c, 7, n, "class")?,
                visibility,
            })
        })
        .collect()
}

/// `frame,-1,left,top,width,height,conf[,x,y,z]`.
pub fn parse_det(text: &str) -> Result<Vec<DetRecord>> {
    rows(text)
        .map(|(n, l)| {
            let c = fields(l);
            if c.len() < 7 {
                return Err(Error::Parse { line: n, msg: format!("expected at least 7 columns, got {}", c.len()) });
            }
            let _: f64 = real(&c, 1, n, "id")?;
            Ok(DetRecord { frame: frame_of(&c, n)?, bbox: bbox_of(&c, n)?, confidence: real(&c, 6, n, "conf")? })
        })
        .collect()
}

/// Tracker output files, `frame,id,left,top,width,height,conf,-1,-1,-1`.
pub fn parse_results(text: &str) -> Result<Vec<ResultRecord>> {
    rows(text)
        .map(|(n, l)| {
            let c = fields(l);
            if c.len() < 7 {
                return Err(Error::Parse { line: n, msg: format!("expected at least 7 columns, got {}", c.len()) });
            }
            let id: u32 = num(&c, 1, n, "id")?;
            if id == 0 {
                return Err(Error::Parse { line: n, msg: "ids are 1-based".into() });
            }
            Ok(ResultRecord { frame: frame_of(&c, n)?, id, bbox: bbox_of(&c, n)?, conf: real(&c, 6, n, "conf")? })
        })
        .collect()
}

fn push_box(out: &mut String, b: &BBox) {
    let _ = write!(
        out,
        "{},{},{},{}",
        format_float(b.left),
        format_float(b.top),
        format_float(b.width),
        format_float(b.height)
    );
}

/// Rows sorted by `(frame, id)`.
pub fn write_results(records: &[ResultRecord]) -> String {
    let mut sorted = records.to_vec();
    sorted.sort_by_key(|r| (r.frame, r.id));
    let mut out = String::new();
    for r in &sorted {
        let _ = write!(out, "{},{},", r.frame, r.id);
        push_box(&mut out, &r.bbox);
        let _ = writeln!(out, ",{},-1,-1,-1", format_float(r.conf));
    }
    out
}

/// Rows in the given order, always with the visibility column.
pub fn write_gt(records: &[GtRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{},{},", r.frame, r.id);
        push_box(&mut out, &r.bbox);
        let _ = writeln!(out, ",{},{},{}", format_float(r.conf), r.class, format_float(r.visibility));
    }
    out
}

pub fn write_det(records: &[DetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{},-1,", r.frame);
        push_box(&mut out, &r.bbox);
        let _ = writeln!(out, ",{},-1,-1,-1", format_float(r.confidence));
    }
    out
}

/// Reads the `[Sequence]` section; keys are case-sensitive.
pub fn parse_seqinfo(text: &str) -> Result<SeqInfo> {
    let mut section = String::new();
    let mut keys: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with(';') || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse { line: n + 1, msg: format!("expected key=value, got `{line}`") });
        };
        if section == "Sequence" {
            keys.insert(k.trim().to_string(), (n + 1, v.trim().to_string()));
        }
    }
    let get = |key: &str| -> Result<u32> {
        let (line, v) = keys
            .get(key)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("[Sequence] lacks `{key}`") })?;
        v.parse().map_err(|_| Error::Parse { line: *line, msg: format!("`{key}` must be a non-negative integer") })
    };
    Ok(SeqInfo {
        name: keys.get("name").map(|(_, v)| v.clone()),
        im_width: get("imWidth")?,
        im_height: get("imHeight")?,
        seq_length: get("seqLength")?,
    })
}

pub fn write_seqinfo(info: &SeqInfo) -> String {
    let mut out = String::from("[Sequence]\n");
    if let Some(name) = &info.name {
        let _ = writeln!(out, "name={name}");
    }
    let _ = writeln!(out, "imWidth={}\nimHeight={}\nseqLength={}", info.im_width, info.im_height, info.seq_length);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rule() {
        assert_eq!(format_float(10.0), "10");
        assert_eq!(format_float(0.9), "0.9");
        assert_eq!(format_float(12.345), "12.35");
        assert_eq!(format_float(-0.001), "0");
        assert_eq!(format_float(-1.5), "-1.5");
    }

    #[test]
    fn gt_line_parses() {
        let r = parse_gt("1,2,10,20,30,40,1,1,0.75").unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].frame, 1);
        assert_eq!(r[0].id, 2);
        assert_eq!(r[0].bbox, BBox { left: 10.0, top: 20.0, width: 30.0, height: 40.0 });
        assert_eq!(r[0].visibility, 0.75);
    }

    #[test]
    fn missing_visibility_defaults_to_one() {
        assert_eq!(parse_gt("3,1,0,0,5,5,1,1\n").unwrap()[0].visibility, 1.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(parse_gt("").unwrap().is_empty());
        assert!(parse_det("\n\n").unwrap().is_empty());
        assert_eq!(write_results(&[]), "");
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_gt("1,1,0,0,5,5,1,1,1\n2,1,0,0,-5,5,1,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(parse_det("1,-1,a,0,5,5,0.9"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_gt("0,1,0,0,5,5,1,1,1").is_err());
        assert!(parse_gt("1,1,0,0,5,5,1,1,1.5").is_err());
    }

    #[test]
    fn result_line_format() {
        let r = ResultRecord { frame: 1, id: 3, bbox: BBox { left: 5.0, top: 5.0, width: 10.0, height: 10.0 }, conf: 0.9 };
        assert_eq!(write_results(&[r]), "1,3,5,5,10,10,0.9,-1,-1,-1\n");
    }

    #[test]
    fn results_sorted_by_frame_then_id() {
        let b = BBox { left: 0.0, top: 0.0, width: 1.0, height: 1.0 };
        let rec = |frame, id| ResultRecord { frame, id, bbox: b, conf: 1.0 };
        let text = write_results(&[rec(2, 1), rec(1, 5), rec(1, 2)]);
        let order: Vec<(u32, u32)> = parse_results(&text).unwrap().iter().map(|r| (r.frame, r.id)).collect();
        assert_eq!(order, vec![(1, 2), (1, 5), (2, 1)]);
    }

    #[test]
    fn seqinfo_keys() {
        let text = "[Sequence]\nname=MOT17-02\nimDir=img1\nframeRate=30\nseqLength=600\nimWidth=1920\nimHeight=1080\nimExt=.jpg\n";
        let info = parse_seqinfo(text).unwrap();
        assert_eq!((info.im_width, info.im_height, info.seq_length), (1920, 1080, 600));
        assert_eq!(info.name.as_deref(), Some("MOT17-02"));
        assert!(parse_seqinfo("[Sequence]\nimwidth=1\nimHeight=1\nseqLength=1").is_err());
        assert!(parse_seqinfo("[Other]\nimWidth=1\nimHeight=1\nseqLength=1").is_err());
        assert_eq!(parse_seqinfo(&write_seqinfo(&info)).unwrap(), info);
    }
}
