//! Procedural MNIST-1D generation.
//!
//! An example is built from its class template by the fixed pipeline
//! pad -> translate -> scale -> noise -> shear -> downsample. Each example
//! draws from its own [`RngStream`] keyed by its global index (test
//! examples are numbered after train examples), so datasets are identical
//! no matter how generation is parallelized.

mod io;
mod templates;
pub mod transforms;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub use io::{decode, encode, load_dataset, read_csv, save_dataset, write_csv, FORMAT_VERSION, MAGIC};
pub use templates::{make_templates, Template, NUM_CLASSES, SEAM_SHIFT, TEMPLATE_POINTS, TEMPLATE_STD};
pub use transforms::{add_noise, apply_shear, downsample, gaussian_filter_1d, pad, translate};

/// Stream id reserved for the dataset-wide shuffle permutation.
const PERMUTATION_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub template_len: usize,
    pub pad_min: usize,
    pub pad_max: usize,
    pub max_translation: usize,
    pub corr_noise_scale: f64,
    pub iid_noise_scale: f64,
    pub shear_scale: f64,
    pub shuffle_seq: bool,
    pub final_seq_len: usize,
    pub gaussian_sigma: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            train_count: 4000,
            test_count: 1000,
            template_len: TEMPLATE_POINTS,
            pad_min: 36,
            pad_max: 60,
            max_translation: 48,
            corr_noise_scale: 0.25,
            iid_noise_scale: 2e-2,
            shear_scale: 0.75,
            shuffle_seq: false,
            final_seq_len: 40,
            gaussian_sigma: 2.0,
            scale_min: 0.8,
            scale_max: 1.2,
            seed: 42,
        }
    }
}

impl GeneratorConfig {
    /// Config with every source of randomness in the pipeline switched off
    /// except the padding split.
    pub fn noiseless() -> Self {
        Self {
            max_translation: 0,
            corr_noise_scale: 0.0,
            iid_noise_scale: 0.0,
            shear_scale: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.pad_min > self.pad_max {
            return fail(format!("pad_min ({}) > pad_max ({})", self.pad_min, self.pad_max));
        }
        if self.template_len < 2 {
            return fail(format!("template_len ({}) < 2", self.template_len));
        }
        if self.final_seq_len < 2 {
            return fail(format!("final_seq_len ({}) < 2", self.final_seq_len));
        }
        if self.template_len + self.pad_min < self.final_seq_len {
            return fail(format!(
                "template_len + pad_min ({}) < final_seq_len ({})",
                self.template_len + self.pad_min,
                self.final_seq_len
            ));
        }
        if self.max_translation > self.template_len + self.pad_min {
            return fail(format!(
                "max_translation ({}) > template_len + pad_min ({})",
                self.max_translation,
                self.template_len + self.pad_min
            ));
        }
        if self.scale_min.is_nan() || self.scale_min <= 0.0 {
            return fail(format!("scale_min ({}) must be > 0", self.scale_min));
        }
        if self.scale_max < self.scale_min {
            return fail(format!(
                "scale_max ({}) < scale_min ({})",
                self.scale_max, self.scale_min
            ));
        }
        for (name, v) in [
            ("corr_noise_scale", self.corr_noise_scale),
            ("iid_noise_scale", self.iid_noise_scale),
            ("shear_scale", self.shear_scale),
            ("gaussian_sigma", self.gaussian_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                return fail(format!("{name} ({v}) must be finite and >= 0"));
            }
        }
        if self.train_count + self.test_count == 0 {
            return fail("train_count + test_count must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x_train: Array,
    pub y_train: Vec<usize>,
    pub x_test: Array,
    pub y_test: Vec<usize>,
    pub config: GeneratorConfig,
    /// Index permutation applied to every row; present iff shuffled.
    pub permutation: Option<Vec<usize>>,
}

impl Dataset {
    pub fn seq_len(&self) -> usize {
        self.config.final_seq_len
    }

    pub fn train_len(&self) -> usize {
        self.y_train.len()
    }

    pub fn test_len(&self) -> usize {
        self.y_test.len()
    }

    /// Apply `perm` to every row of both splits: `row'[i] = row[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        let apply = |x: &Array| {
            let mut out = x.clone();
            for r in 0..x.rows() {
                let src = x.row(r);
                for (dst, &p) in out.row_mut(r).iter_mut().zip(perm) {
                    *dst = src[p];
                }
            }
            out
        };
        Dataset {
            x_train: apply(&self.x_train),
            x_test: apply(&self.x_test),
            ..self.clone()
        }
    }

    /// Every row reversed end to end.
    pub fn reversed(&self) -> Dataset {
        let n = self.seq_len();
        let perm: Vec<usize> = (0..n).rev().collect();
        self.permuted(&perm)
    }

    /// Restrict the training split to its first `n` examples.
    pub fn with_train_prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.train_len());
        let idx: Vec<usize> = (0..n).collect();
        Dataset {
            x_train: self.x_train.select_rows(&idx),
            y_train: self.y_train[..n].to_vec(),
            ..self.clone()
        }
    }
}

fn prepared_templates(config: &GeneratorConfig) -> Vec<Vec<f64>> {
    make_templates()
        .into_iter()
        .map(|t| {
            if config.template_len == t.points.len() {
                t.points
            } else {
                downsample(&t.points, config.template_len)
            }
        })
        .collect()
}

/// Run the full transform pipeline for one example.
pub fn generate_example(
    class_label: usize,
    rng: &mut RngStream,
    config: &GeneratorConfig,
) -> Vec<f64> {
    let templates = prepared_templates(config);
    example_from_template(&templates[class_label], rng, config)
}

fn example_from_template(template: &[f64], rng: &mut RngStream, cfg: &GeneratorConfig) -> Vec<f64> {
    let total = rng.int_inclusive(cfg.pad_min as i64, cfg.pad_max as i64);
    let lo = rng.int_inclusive(0, total);
    let x = pad(template, lo as usize, (total - lo) as usize);

    let max_shift = (cfg.max_translation as i64).min(x.len() as i64);
    let shift = rng.int_inclusive(-max_shift, max_shift);
    let x = translate(&x, shift);

    let scale = rng.uniform_range(cfg.scale_min, cfg.scale_max);
    let x: Vec<f64> = x.iter().map(|v| v * scale).collect();

    let x = add_noise(
        &x,
        rng,
        cfg.iid_noise_scale,
        cfg.corr_noise_scale,
        cfg.gaussian_sigma,
    );

    let slope = rng.uniform_range(-cfg.shear_scale, cfg.shear_scale);
    let x = apply_shear(&x, slope);
    downsample(&x, cfg.final_seq_len)
}

fn generate_split(
    templates: &[Vec<f64>],
    cfg: &GeneratorConfig,
    count: usize,
    first_stream: u64,
) -> (Array, Vec<usize>) {
    let labels: Vec<usize> = (0..count).map(|i| i % NUM_CLASSES).collect();
    let rows: Vec<Vec<f64>> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let mut rng = RngStream::new(cfg.seed, first_stream + i as u64);
            example_from_template(&templates[y], &mut rng, cfg)
        })
        .collect();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    let x = Array::new(vec![count, cfg.final_seq_len], data).expect("row lengths are fixed");
    (x, labels)
}

/// Generate both splits. Labels cycle through 0..=9, so per-class counts
/// differ by at most one in each split.
pub fn generate_dataset(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let templates = prepared_templates(config);
    let (x_train, y_train) = generate_split(&templates, config, config.train_count, 0);
    let (x_test, y_test) = generate_split(
        &templates,
        config,
        config.test_count,
        config.train_count as u64,
    );
    let data = Dataset {
        x_train,
        y_train,
        x_test,
        y_test,
        config: config.clone(),
        permutation: None,
    };
    if config.shuffle_seq {
        let perm = RngStream::new(config.seed, PERMUTATION_STREAM).permutation(config.final_seq_len);
        let mut shuffled = data.permuted(&perm);
        shuffled.permutation = Some(perm);
        Ok(shuffled)
    } else {
        Ok(data)
    }
}
