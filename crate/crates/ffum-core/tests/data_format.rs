//! On-disk format tests: hand-built image/label fixtures in the big-endian
//! IDX layout, and checkpoint files round-tripped byte for byte.

use ffum_core::{init_params, load_checkpoint, load_idx, save_checkpoint, Error, ModelSpec};
use std::io::Write;
use std::path::PathBuf;

fn write_idx_images(dir: &std::path::Path, name: &str, rows: u32, cols: u32, pixels: &[u8]) -> PathBuf {
    let count = pixels.len() as u32 / (rows * cols);
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    bytes.extend_from_slice(&count.to_be_bytes());
    bytes.extend_from_slice(&rows.to_be_bytes());
    bytes.extend_from_slice(&cols.to_be_bytes());
    bytes.extend_from_slice(pixels);
    let path = dir.join(name);
    std::fs::File::create(&path).unwrap().write_all(&bytes).unwrap();
    path
}

fn write_idx_labels(dir: &std::path::Path, name: &str, labels: &[u8]) -> PathBuf {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    let path = dir.join(name);
    std::fs::File::create(&path).unwrap().write_all(&bytes).unwrap();
    path
}

#[test]
fn idx_fixture_loads_with_exact_pixel_scaling() {
    let dir = tempfile::tempdir().unwrap();
    // Four 2x2 images with recognizable pixel values.
    let pixels: Vec<u8> = vec![
        0, 51, 102, 153, // image 0
        255, 204, 153, 102, // image 1
        1, 2, 3, 4, // image 2
        250, 251, 252, 253, // image 3
    ];
    let img = write_idx_images(dir.path(), "imgs", 2, 2, &pixels);
    let lbl = write_idx_labels(dir.path(), "lbls", &[0, 1, 2, 1]);

    let ds = load_idx(&img, &lbl, None, None).unwrap();
    assert_eq!(ds.len(), 4);
    assert_eq!(ds.dim(), 4);
    assert_eq!(ds.num_classes(), 3);
    assert_eq!(ds.labels(), &[0, 1, 2, 1]);
    assert_eq!(ds.images().row(0), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 153.0 / 255.0]);
    assert_eq!(ds.images().row(1)[0], 1.0);
}

#[test]
fn idx_limit_keeps_the_full_label_space() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..16).collect();
    let img = write_idx_images(dir.path(), "imgs", 2, 2, &pixels);
    let lbl = write_idx_labels(dir.path(), "lbls", &[0, 1, 2, 1]);

    let ds = load_idx(&img, &lbl, Some(2), None).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.labels(), &[0, 1]);
    // Class 2 only appears in dropped rows, but the label space must not shrink.
    assert_eq!(ds.num_classes(), 3);
}

#[test]
fn idx_downsampling_area_averages_blocks() {
    let dir = tempfile::tempdir().unwrap();
    // Two 4x4 images; the first one's 2x2 blocks average to distinct values.
    #[rustfmt::skip]
    let first: Vec<u8> = vec![
        0, 0, 255, 255,
        0, 0, 255, 255,
        100, 100, 40, 60,
        100, 100, 60, 40,
    ];
    let mut pixels = first.clone();
    pixels.extend_from_slice(&first);
    let img = write_idx_images(dir.path(), "imgs", 4, 4, &pixels);
    let lbl = write_idx_labels(dir.path(), "lbls", &[1, 0]);

    let ds = load_idx(&img, &lbl, None, Some(2)).unwrap();
    assert_eq!(ds.dim(), 4);
    let row = ds.images().row(0);
    assert!((row[0] - 0.0).abs() < 1e-12);
    assert!((row[1] - 1.0).abs() < 1e-12);
    assert!((row[2] - 100.0 / 255.0).abs() < 1e-12);
    assert!((row[3] - 50.0 / 255.0).abs() < 1e-12);
}

#[test]
fn idx_downsampling_rejects_nondivisible_sides() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..32).collect();
    let img = write_idx_images(dir.path(), "imgs", 4, 4, &pixels);
    let lbl = write_idx_labels(dir.path(), "lbls", &[0, 1]);
    match load_idx(&img, &lbl, None, Some(3)) {
        Err(Error::Ingest { message, .. }) => assert!(message.contains("area-average")),
        other => panic!("expected ingest error, got {other:?}"),
    }
}

#[test]
fn idx_errors_carry_byte_offsets() {
    let dir = tempfile::tempdir().unwrap();

    // Wrong magic: reported at offset zero.
    let bad_magic = dir.path().join("bad");
    std::fs::write(&bad_magic, 0x12345678u32.to_be_bytes()).unwrap();
    let lbl = write_idx_labels(dir.path(), "lbls", &[0, 1]);
    match load_idx(&bad_magic, &lbl, None, None) {
        Err(Error::Ingest { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected ingest error, got {other:?}"),
    }

    // Truncated payload: reported past the 16-byte header.
    let truncated = {
        let full = write_idx_images(dir.path(), "trunc_src", 2, 2, &(0..16).collect::<Vec<u8>>());
        let mut bytes = std::fs::read(full).unwrap();
        bytes.truncate(bytes.len() - 5);
        let path = dir.path().join("trunc");
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let lbl4 = write_idx_labels(dir.path(), "lbls4", &[0, 1, 0, 1]);
    match load_idx(&truncated, &lbl4, None, None) {
        Err(Error::Ingest { offset, message }) => {
            assert_eq!(offset, 16, "unexpected offset in: {message}");
        }
        other => panic!("expected ingest error, got {other:?}"),
    }

    // Label/image count mismatch.
    let img = write_idx_images(dir.path(), "imgs", 2, 2, &(0..16).collect::<Vec<u8>>());
    let lbl3 = write_idx_labels(dir.path(), "lbls3", &[0, 1, 0]);
    match load_idx(&img, &lbl3, None, None) {
        Err(Error::Ingest { message, .. }) => assert!(message.contains("count")),
        other => panic!("expected ingest error, got {other:?}"),
    }
}

#[test]
fn checkpoint_files_round_trip_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec {
        input_dim: 7,
        hidden_dims: vec![5, 4],
        num_classes: 3,
        use_layer_norm: true,
    };
    let params = init_params(&spec, 99).unwrap();

    let first = dir.path().join("model.ckpt");
    save_checkpoint(&params, &first).unwrap();
    let loaded = load_checkpoint(&first).unwrap();
    assert_eq!(loaded, params);

    let second = dir.path().join("model2.ckpt");
    save_checkpoint(&loaded, &second).unwrap();
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert_eq!(a, b, "re-saved checkpoint bytes differ");
}
