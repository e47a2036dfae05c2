use std::fs;
use std::path::{Path, PathBuf};

use trivio::error::Error;
use trivio::kitti_io::{load_calibration, load_sequence, load_tracks};
use trivio::tracks::TrackSet;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn drive(n: u32) -> PathBuf {
    fixtures().join(format!("kitti/2011_09_26/2011_09_26_drive_{n:04}_sync"))
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

/// Copies the calibration files and drive 1 into a temporary date directory.
fn scratch_drive() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let date = fixtures().join("kitti/2011_09_26");
    for f in ["calib_imu_to_velo.txt", "calib_velo_to_cam.txt", "calib_cam_to_cam.txt"] {
        fs::copy(date.join(f), tmp.path().join(f)).unwrap();
    }
    let dir = tmp.path().join("drive");
    copy_dir(&drive(1), &dir);
    (tmp, dir)
}

#[test]
fn fixture_sequence_loads() {
    let seq = load_sequence(&drive(1)).unwrap();
    assert_eq!(seq.ground_truth.len(), 20);
    assert_eq!(seq.imu.len(), 20);
    assert_eq!(seq.times.len(), 20);
    assert_eq!(seq.times[0], 0.0);
    assert!(seq.times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(seq.ground_truth[0].translation.norm(), 0.0);
    assert!(seq.path_length() > 1.0);

    let k = seq.calibration.camera_intrinsics().unwrap();
    assert!(k.fx > 0.0 && k.fy > 0.0);
    let r = seq.calibration.imu_from_camera.rotation.rotation_matrix();
    assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
    assert!((r.determinant() - 1.0).abs() < 1e-9);
}

#[test]
fn calibration_lookup_names_missing_camera() {
    let cal = load_calibration(&drive(1), 7);
    match cal.and_then(|c| c.camera_intrinsics()) {
        Err(e) => assert!(e.to_string().contains('7'), "{e}"),
        Ok(_) => panic!("camera 7 does not exist in the fixture"),
    }
}

#[test]
fn stationary_sequence_has_zero_path_length() {
    let seq = load_sequence(&drive(2)).unwrap();
    assert!(seq.ground_truth.len() > 1);
    assert!(seq.path_length() < 1e-6, "{}", seq.path_length());
    assert!(seq.velocities.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn truncated_record_reports_file_and_line() {
    let (_tmp, dir) = scratch_drive();
    let path = dir.join("oxts/data/0000000005.txt");
    let text = fs::read_to_string(&path).unwrap();
    let short = text.trim().rsplit_once(' ').unwrap().0.to_string();
    fs::write(&path, format!("\n{short}\n")).unwrap();
    match load_sequence(&dir).unwrap_err() {
        Error::Parse { path: p, line, .. } => {
            assert_eq!(p, path);
            assert_eq!(line, 2);
        }
        e => panic!("{e}"),
    }
}

#[test]
fn bad_timestamp_reports_its_line() {
    let (_tmp, dir) = scratch_drive();
    let path = dir.join("oxts/timestamps.txt");
    let mut lines: Vec<String> = fs::read_to_string(&path).unwrap().lines().map(String::from).collect();
    lines[6] = "2011-09-26 13:02".into();
    fs::write(&path, lines.join("\n")).unwrap();
    match load_sequence(&dir).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 7),
        e => panic!("{e}"),
    }
}

#[test]
fn missing_inputs_name_the_component() {
    let (_tmp, dir) = scratch_drive();
    fs::remove_file(dir.parent().unwrap().join("calib_velo_to_cam.txt")).unwrap();
    let e = load_sequence(&dir).unwrap_err();
    assert!(matches!(e, Error::MissingFile { .. }));
    assert!(e.to_string().contains("Velodyne-to-camera"), "{e}");

    let e = load_sequence(&dir.join("nope")).unwrap_err();
    assert!(e.to_string().contains("sequence directory"), "{e}");

    let e = load_tracks(&dir.join("missing.csv")).unwrap_err();
    assert!(e.to_string().contains("missing.csv"), "{e}");
}

#[test]
fn three_frame_tracks_give_two_triples() {
    let tracks = load_tracks(&fixtures().join("tracks_3x2.csv")).unwrap();
    assert_eq!(tracks.len(), 2);
    assert_eq!(tracks.observation_count(), 6);
    let triples = tracks.triples_at(3);
    assert_eq!(triples.len(), 2);
    assert!(tracks.triples_at(2).is_empty());

    let shuffled = load_tracks(&fixtures().join("tracks_3x2_shuffled.csv")).unwrap();
    assert_eq!(shuffled, tracks);
    assert_eq!(shuffled.triples_at(3), triples);
}

#[test]
fn empty_track_file_is_an_empty_set() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("tracks.csv");
    fs::write(&path, "").unwrap();
    assert!(load_tracks(&path).unwrap().is_empty());
    fs::write(&path, "frame,track_id,u,v\n").unwrap();
    assert_eq!(load_tracks(&path).unwrap(), TrackSet::new());
}

#[test]
fn fixture_tracks_cover_the_sequence() {
    let seq = load_sequence(&drive(1)).unwrap();
    let tracks = load_tracks(&drive(1).join("tracks.csv")).unwrap();
    assert!(tracks.last_frame().unwrap() < seq.times.len());
    assert!(!tracks.triples_at(seq.times.len() - 1).is_empty());
}
