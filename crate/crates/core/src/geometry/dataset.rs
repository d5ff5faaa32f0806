//! Labeled cloud collections and their on-disk layout:
//!
//! ```text
//! <root>/classes.txt           class names, one per line, in label order
//! <root>/split.txt             "<train|test> <class>/<id>.xyz" per line
//! <root>/<class>/<id>.xyz      one cloud per file
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    load_points, sample_synthetic, save_points, GeometryError, PointCloud, ShapeClass,
    SyntheticSpec,
};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Path relative to the dataset root, e.g. `cube/0007.xyz`.
    pub name: String,
    pub cloud: PointCloud,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Uses the first `classes` entries of [`ShapeClass::ALL`].
    pub classes: usize,
    pub per_class: usize,
    pub points: usize,
    pub seed: u64,
    /// Per-class fraction held out for testing.
    pub test_fraction: f64,
}

impl Default for DatasetSpec {
    /// 8 classes × 125 clouds of 512 points; 100 train / 25 test per class.
    fn default() -> Self {
        Self {
            classes: 8,
            per_class: 125,
            points: 512,
            seed: 1,
            test_fraction: 0.2,
        }
    }
}

impl Dataset {
    /// Samples every cloud, normalizes it to the unit sphere, and splits each
    /// class independently so both splits stay class-balanced.
    pub fn synthetic(spec: &DatasetSpec) -> Result<Self, GeometryError> {
        if spec.classes == 0 || spec.classes > ShapeClass::ALL.len() {
            return Err(GeometryError::Invalid(format!(
                "class count {} outside 1..={}",
                spec.classes,
                ShapeClass::ALL.len()
            )));
        }
        if spec.per_class == 0 || !(0.0..1.0).contains(&spec.test_fraction) {
            return Err(GeometryError::Invalid(
                "per_class must be >= 1 and test_fraction in [0, 1)".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let classes = &ShapeClass::ALL[..spec.classes];
        let mut train = Vec::new();
        let mut test = Vec::new();
        let n_test = (spec.per_class as f64 * spec.test_fraction).round() as usize;
        for &class in classes {
            let mut samples = Vec::with_capacity(spec.per_class);
            for id in 0..spec.per_class {
                let raw = sample_synthetic(&SyntheticSpec {
                    class,
                    points: spec.points,
                    seed: rng.next_u64(),
                    params: None,
                })?;
                let (cloud, _) = raw.normalize_unit_sphere();
                samples.push(Sample {
                    name: format!("{}/{id:04}.xyz", class.name()),
                    cloud,
                });
            }
            let mut order: Vec<usize> = (0..spec.per_class).collect();
            order.shuffle(&mut rng);
            let mut is_test = vec![false; spec.per_class];
            for &i in &order[..n_test] {
                is_test[i] = true;
            }
            for (sample, t) in samples.into_iter().zip(is_test) {
                if t {
                    test.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
        Ok(Self {
            classes: classes.iter().map(|c| c.name().to_string()).collect(),
            train,
            test,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<(), GeometryError> {
        let root = root.as_ref();
        let io = |p: &Path, e| GeometryError::io(p, e);
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        for class in &self.classes {
            let dir = root.join(class);
            fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        }
        let classes_path = root.join("classes.txt");
        let mut names = self.classes.join("\n");
        names.push('\n');
        fs::write(&classes_path, names).map_err(|e| io(&classes_path, e))?;
        let mut split = String::new();
        for (tag, samples) in [("train", &self.train), ("test", &self.test)] {
            for s in samples {
                save_points(&s.cloud, root.join(&s.name))?;
                split.push_str(&format!("{tag} {}\n", s.name));
            }
        }
        let split_path = root.join("split.txt");
        fs::write(&split_path, split).map_err(|e| io(&split_path, e))
    }

    pub fn load(root: impl AsRef<Path>) -> Result<Self, GeometryError> {
        let root = root.as_ref();
        let read = |name: &str| {
            let p = root.join(name);
            fs::read_to_string(&p).map_err(|e| GeometryError::io(&p, e))
        };
        let classes: Vec<String> = read("classes.txt")?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, line) in read("split.txt")?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| GeometryError::Parse {
                line: i + 1,
                message: format!("split.txt: {message}"),
            };
            let (tag, name) = line
                .split_once(' ')
                .ok_or_else(|| parse_err(format!("malformed entry {line:?}")))?;
            let class = name
                .split('/')
                .next()
                .and_then(|c| classes.iter().position(|k| k == c))
                .ok_or_else(|| parse_err(format!("unknown class in {name:?}")))?;
            let mut cloud = load_points(root.join(name))?;
            cloud.label = Some(class);
            let sample = Sample {
                name: name.to_string(),
                cloud,
            };
            match tag {
                "train" => train.push(sample),
                "test" => test.push(sample),
                other => return Err(parse_err(format!("unknown split {other:?}"))),
            }
        }
        Ok(Self {
            classes,
            train,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            classes: 3,
            per_class: 10,
            points: 32,
            seed: 5,
            test_fraction: 0.2,
        }
    }

    #[test]
    fn default_split_is_800_200_and_balanced() {
        let spec = DatasetSpec {
            points: 8,
            ..DatasetSpec::default()
        };
        let ds = Dataset::synthetic(&spec).unwrap();
        assert_eq!(ds.train.len(), 800);
        assert_eq!(ds.test.len(), 200);
        let mut counts = [0usize; 8];
        for s in &ds.train {
            counts[s.cloud.label.unwrap()] += 1;
        }
        assert_eq!(counts, [100; 8]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            Dataset::synthetic(&small()).unwrap(),
            Dataset::synthetic(&small()).unwrap()
        );
        let other = DatasetSpec { seed: 6, ..small() };
        assert_ne!(
            Dataset::synthetic(&small()).unwrap(),
            Dataset::synthetic(&other).unwrap()
        );
    }

    #[test]
    fn clouds_are_normalized() {
        let ds = Dataset::synthetic(&small()).unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            let max = s
                .cloud
                .points()
                .iter()
                .map(crate::geometry::norm)
                .fold(0.0, f64::max);
            assert!((max - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn disk_round_trip_keeps_layout_and_labels() {
        let ds = Dataset::synthetic(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert!(dir.path().join("classes.txt").exists());
        assert!(dir.path().join("cylinder").is_dir());
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.classes, ds.classes);
        assert_eq!(back.train.len(), ds.train.len());
        for (a, b) in back.train.iter().zip(&ds.train) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.cloud.label, b.cloud.label);
            assert_eq!(a.cloud.len(), b.cloud.len());
        }
    }
}
