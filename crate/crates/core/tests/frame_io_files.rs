use ndarray::Array2;
use spac_derain::frame_io::{load_frame, load_mask, load_sequence, save_frame, save_mask, save_plane, Frame, Plane};
use spac_derain::Error;

fn write_gray(dir: &std::path::Path, i: usize, n: usize, v: f64) {
    save_plane(&dir.join(format!("f_{i:03}.png")), &Plane::from_elem((n, n), v)).unwrap();
}

#[test]
fn loads_numbered_black_frames() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..5 {
        write_gray(dir.path(), i, 4, 0.0);
    }
    let pattern = dir.path().join("f_%03d.png").to_string_lossy().into_owned();
    let seq = load_sequence(&pattern, 0..5).unwrap();
    assert_eq!(seq.len(), 5);
    assert_eq!((seq.width(), seq.height()), (4, 4));
    for f in &seq.frames {
        assert!(f.y.iter().all(|&v| v == 0.0));
    }
    assert_eq!(load_sequence(&pattern, 0..).unwrap().len(), 5);
    assert!(matches!(load_sequence(&pattern, 0..6), Err(Error::MissingFile(_))));
}

#[test]
fn empty_and_mismatched_sequences_fail() {
    let dir = tempfile::tempdir().unwrap();
    let pattern = dir.path().join("f_%03d.png").to_string_lossy().into_owned();
    assert!(matches!(load_sequence(&pattern, 0..), Err(Error::EmptySequence)));
    write_gray(dir.path(), 0, 4, 0.5);
    write_gray(dir.path(), 1, 8, 0.5);
    assert!(matches!(load_sequence(&pattern, 0..2), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn eight_bit_round_trip_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let y = Plane::from_shape_fn((6, 7), |(r, c)| ((r * 7 + c) as f64 / 41.0).min(1.0));
    let cb = Plane::from_shape_fn((6, 7), |(r, _)| 0.4 + 0.02 * r as f64);
    let cr = Plane::from_elem((6, 7), 0.55);
    let frame = Frame::new(y, cb, cr).unwrap();
    let a = dir.path().join("a.png");
    let b = dir.path().join("b.png");
    save_frame(&a, &frame).unwrap();
    let once = load_frame(&a).unwrap();
    save_frame(&b, &once).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(load_frame(&b).unwrap(), once);
}

#[test]
fn masks_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = Array2::from_shape_fn((5, 9), |(r, c)| (r + c) % 3 == 0);
    save_mask(&dir.path().join("m.png"), &m).unwrap();
    assert_eq!(load_mask(&dir.path().join("m.png")).unwrap(), m);
}
