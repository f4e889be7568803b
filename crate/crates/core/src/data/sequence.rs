use std::path::{Path, PathBuf};

use crate::geometry::{PinholeCamera, RgbImage};

use super::{
    load_png, parse_camera_file, parse_rgb_association, load_trajectory, DataError, Trajectory,
};

/// An on-disk sequence: `rgb.txt` association, `groundtruth.txt`,
/// `camera.txt` and `cloud.ply` under one root, images loaded lazily.
#[derive(Debug, Clone)]
pub struct SequenceDataset {
    root: PathBuf,
    frames: Vec<(f64, PathBuf)>,
    pub camera: PinholeCamera,
    pub ground_truth: Trajectory,
    pub cloud_path: PathBuf,
}

pub fn load_sequence(root: &Path) -> Result<SequenceDataset, DataError> {
    let require = |name: &str| -> Result<PathBuf, DataError> {
        let path = root.join(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(DataError::MissingFile { path })
        }
    };
    let frames = parse_rgb_association(&require("rgb.txt")?)?;
    let ground_truth = load_trajectory(&require("groundtruth.txt")?)?;
    let camera = parse_camera_file(&require("camera.txt")?)?;
    let cloud_path = require("cloud.ply")?;
    Ok(SequenceDataset {
        root: root.to_path_buf(),
        frames,
        camera,
        ground_truth,
        cloud_path,
    })
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().map(|(t, _)| *t)
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.frames[index].1)
    }

    /// Load frame `index`, checking its dimensions against `camera.txt`.
    pub fn load_frame(&self, index: usize) -> Result<(f64, RgbImage), DataError> {
        let (timestamp, rel) = &self.frames[index];
        let path = self.root.join(rel);
        let image = load_png(&path)?;
        if image.width() != self.camera.width || image.height() != self.camera.height {
            return Err(DataError::ImageSizeMismatch {
                path,
                got: (image.width(), image.height()),
                expected: (self.camera.width, self.camera.height),
            });
        }
        Ok((*timestamp, image))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{save_cloud_ply, save_rgb_png, PointSample};
    use nalgebra::Vector3;

    fn write_fixture(root: &Path, n_frames: usize) {
        std::fs::create_dir_all(root.join("rgb")).unwrap();
        let mut rgb_txt = String::from("# timestamp path\n");
        let mut gt = String::from("# trajectory\n");
        for i in 0..n_frames {
            let name = format!("rgb/{i:04}.png");
            let img = RgbImage::from_fn(8, 6, |x, y| {
                [x as f64 / 7.0, y as f64 / 5.0, i as f64 / n_frames as f64]
            });
            save_rgb_png(&root.join(&name), &img).unwrap();
            rgb_txt.push_str(&format!("{:.4} {name}\n", i as f64 * 0.1));
            gt.push_str(&format!("{:.4} {} 0 0 0 0 0 1\n", i as f64 * 0.1, i as f64));
        }
        std::fs::write(root.join("rgb.txt"), rgb_txt).unwrap();
        std::fs::write(root.join("groundtruth.txt"), gt).unwrap();
        std::fs::write(root.join("camera.txt"), "10 10 3.5 2.5 8 6\n").unwrap();
        save_cloud_ply(
            &root.join("cloud.ply"),
            &[PointSample {
                position: Vector3::new(0.0, 0.0, 2.0),
                color: None,
            }],
        )
        .unwrap();
    }

    #[test]
    fn well_formed_fixture_loads() {
        let root = std::env::temp_dir().join("splatvo_seq_ok");
        let _ = std::fs::remove_dir_all(&root);
        write_fixture(&root, 3);
        let dataset = load_sequence(&root).unwrap();
        assert_eq!(dataset.len(), 3);
        let (t, img) = dataset.load_frame(1).unwrap();
        assert!((t - 0.1).abs() < 1e-9);
        assert_eq!(img.width(), 8);
    }

    #[test]
    fn missing_cloud_is_reported() {
        let root = std::env::temp_dir().join("splatvo_seq_nocloud");
        let _ = std::fs::remove_dir_all(&root);
        write_fixture(&root, 2);
        std::fs::remove_file(root.join("cloud.ply")).unwrap();
        match load_sequence(&root) {
            Err(DataError::MissingFile { path }) => {
                assert!(path.ends_with("cloud.ply"));
            }
            other => panic!("expected missing-file, got {other:?}"),
        }
    }

    #[test]
    fn shuffled_groundtruth_is_rejected() {
        let root = std::env::temp_dir().join("splatvo_seq_shuffled");
        let _ = std::fs::remove_dir_all(&root);
        write_fixture(&root, 2);
        std::fs::write(
            root.join("groundtruth.txt"),
            "0.2 0 0 0 0 0 0 1\n0.1 0 0 0 0 0 0 1\n",
        )
        .unwrap();
        assert!(matches!(
            load_sequence(&root),
            Err(DataError::TimestampDisorder { line: 2, .. })
        ));
    }
}
