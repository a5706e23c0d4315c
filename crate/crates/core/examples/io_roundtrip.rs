//! Parses the bundled MOT17-format sequence and writes it back unchanged.
//!
//! `cargo run --example io_roundtrip -- [sequence_dir]`

use std::path::PathBuf;

use cotrack::motio::{parse_det, parse_gt, parse_seqinfo, write_det, write_gt};

fn main() -> cotrack::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/MOT17-fixture"));
    let info = parse_seqinfo(&std::fs::read_to_string(dir.join("seqinfo.ini"))?)?;
    let gt_text = std::fs::read_to_string(dir.join("gt/gt.txt"))?;
    let det_text = std::fs::read_to_string(dir.join("det/det.txt"))?;
    let (gt, det) = (parse_gt(&gt_text)?, parse_det(&det_text)?);
    println!("{}: {}x{}, {} frames", info.name.as_deref().unwrap_or("?"), info.im_width, info.im_height, info.seq_length);
    println!("{} gt rows, {} detections", gt.len(), det.len());
    println!("gt identical after rewrite: {}", write_gt(&gt) == gt_text);
    println!("det identical after rewrite: {}", write_det(&det) == det_text);
    Ok(())
}
