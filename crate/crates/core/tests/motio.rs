//! MOTChallenge text formats: fixtures, round trips and error reporting.

mod common;

use std::path::Path;

use cotrack::error::Error;
use cotrack::geometry::BBox;
use cotrack::motio::{format_float, parse_det, parse_gt, parse_results, parse_seqinfo, write_det, write_gt, write_results, ResultRecord};
use cotrack::sim::{generate, write_sequence, SimConfig};
use proptest::prelude::*;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/MOT17-fixture").join(name)).unwrap()
}

#[test]
fn fixture_sequence_is_consistent() {
    let info = parse_seqinfo(&fixture("seqinfo.ini")).unwrap();
    assert_eq!((info.im_width, info.im_height, info.seq_length), (1920, 1080, 12));
    let gt = parse_gt(&fixture("gt/gt.txt")).unwrap();
    let det = parse_det(&fixture("det/det.txt")).unwrap();
    assert_eq!((gt.len(), det.len()), (67, 54));
    assert!(gt.iter().all(|g| g.frame <= info.seq_length && (0.0..=1.0).contains(&g.visibility)));
    assert!(det.iter().all(|d| d.frame <= info.seq_length));
    // rows come back in file order
    let first = fixture("gt/gt.txt").lines().next().unwrap().to_string();
    assert_eq!(write_gt(&gt[..1]).trim_end(), first);
}

#[test]
fn spec_lines() {
    let g = parse_gt("1,2,10,20,30,40,1,1,0.75").unwrap();
    assert_eq!((g[0].frame, g[0].id, g[0].visibility), (1, 2, 0.75));
    assert_eq!(g[0].bbox, BBox { left: 10.0, top: 20.0, width: 30.0, height: 40.0 });
    assert!(parse_gt("").unwrap().is_empty() && parse_det("").unwrap().is_empty());
    let r = ResultRecord { frame: 1, id: 3, bbox: BBox { left: 5.0, top: 5.0, width: 10.0, height: 10.0 }, conf: 0.9 };
    assert_eq!(write_results(&[r]), "1,3,5,5,10,10,0.9,-1,-1,-1\n");
    assert_eq!(write_results(&[]), "");
    assert_eq!(format_float(2.50), "2.5");
    assert_eq!(format_float(-0.0), "0");
}

#[test]
fn simulated_sequences_reload() {
    let dir = tempfile::TempDir::new().unwrap();
    let s = generate(&SimConfig { frames: 20, ..SimConfig::default() }, 17).unwrap();
    write_sequence(dir.path(), &s).unwrap();
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    let info = parse_seqinfo(&read("seqinfo.ini")).unwrap();
    assert_eq!(info.seq_length, 20);
    let gt_text = read("gt/gt.txt");
    assert_eq!(write_gt(&parse_gt(&gt_text).unwrap()), gt_text);
    let det = parse_det(&read("det/det.txt")).unwrap();
    assert_eq!(det.len(), s.detections.iter().map(Vec::len).sum::<usize>());
}

proptest! {
    #[test]
    fn fuzzed_records_round_trip(seed in any::<u64>()) {
        let (gt, det, res) = common::fuzz_records(seed);
        prop_assert_eq!(parse_gt(&write_gt(&gt)).unwrap(), gt);
        prop_assert_eq!(parse_det(&write_det(&det)).unwrap(), det);
        let mut sorted = res.clone();
        sorted.sort_by_key(|r| (r.frame, r.id));
        let text = write_results(&res);
        prop_assert_eq!(parse_results(&text).unwrap(), sorted);
        prop_assert_eq!(write_results(&parse_results(&text).unwrap()), text);
    }

    #[test]
    fn malformed_rows_report_their_line(seed in any::<u64>(), at in any::<prop::sample::Index>(), kind in 0usize..3) {
        let (gt, _, _) = common::fuzz_records(seed);
        let mut lines: Vec<String> = write_gt(&gt).lines().map(String::from).collect();
        let k = at.index(lines.len() + 1);
        let bad = ["1,1,x,0,5,5,1,1,1", "1,1,0,0,-5,5,1,1,1", "1,1,0,0"][kind];
        lines.insert(k, bad.to_string());
        let text = lines.join("\n") + "\n";
        match parse_gt(&text) {
            Err(Error::Parse { line, .. }) => prop_assert_eq!(line, k + 1),
            other => prop_assert!(false, "{:?}", other),
        }
    }
}
