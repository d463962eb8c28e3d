//! Experiment drivers. Each `run_*` function takes a [`Config`], returns the
//! resolved settings, the CSV records and a typed summary.

pub mod a2c;
pub mod approx;
pub mod dominance;
pub mod learner;
pub mod reacher;
pub mod timing;
pub mod train;

use std::path::PathBuf;

use hesscale::{Activation, Tensor};

use crate::config::{Reader, Resolved};
use crate::data::{load_mnist_idx, synth_blobs_with, BlobParams, Dataset};
use crate::error::{fail, Result};
use crate::records::TrialRecord;

pub use a2c::{run_a2c, A2cSummary};
pub use approx::{run_approx_quality, ApproxSummary};
pub use dominance::{run_diag_dominance, DominanceSummary};
pub use timing::{run_timing, TimingSummary};
pub use train::{run_train, TrainSummary};

/// Output of one experiment run.
#[derive(Debug, Clone)]
pub struct Outcome<S> {
    pub resolved: Resolved,
    pub records: Vec<TrialRecord>,
    pub summary: S,
}

/// Hidden-layer widths from `mlp:32,32,32` (or `mlp:` for none).
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let Some(rest) = s.strip_prefix("mlp:") else {
        fail!(Config, "architecture {s:?} must look like mlp:32,32");
    };
    rest.split(',')
        .filter(|w| !w.trim().is_empty())
        .map(|w| match w.trim().parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(crate::BenchError::Config(format!("bad layer width {w:?} in {s:?}"))),
        })
        .collect()
}

pub fn format_arch(hidden: &[usize]) -> String {
    let w: Vec<String> = hidden.iter().map(ToString::to_string).collect();
    format!("mlp:{}", w.join(","))
}

pub(crate) fn read_arch(r: &mut Reader<'_>, default: &[usize]) -> Result<Vec<usize>> {
    parse_arch(&r.string("arch", &format_arch(default))?)
}

pub(crate) fn read_act(r: &mut Reader<'_>, default: Activation) -> Result<Activation> {
    let act: Activation = r.string("act", &default.to_string())?.parse()?;
    if !act.is_elementwise() {
        fail!(Config, "hidden activation must be elementwise, got {act}");
    }
    Ok(act)
}

/// Where samples come from: seeded Gaussian blobs or an MNIST IDX pair.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Blobs(BlobParams),
    Mnist { images: PathBuf, labels: PathBuf },
}

impl DataSource {
    /// `n` samples; `seed` only affects blobs.
    pub fn load(&self, seed: u64, n: usize) -> Result<Dataset> {
        match self {
            DataSource::Blobs(p) => synth_blobs_with(BlobParams { seed, n, ..*p }),
            DataSource::Mnist { images, labels } => {
                let ds = load_mnist_idx(images, labels)?;
                if ds.len() < n {
                    fail!(Config, "mnist file holds {} samples, {n} requested", ds.len());
                }
                Ok(ds.slice(0, n))
            }
        }
    }

    /// `(dim, classes)` of the samples.
    pub fn extent(&self) -> Result<(usize, usize)> {
        match self {
            DataSource::Blobs(p) => Ok((p.dim, p.classes)),
            DataSource::Mnist { .. } => {
                let ds = self.load(0, 0)?;
                Ok((ds.dim, ds.classes))
            }
        }
    }
}

/// Reads `dataset` (`blobs` or `mnist`) and the keys it needs.
pub(crate) fn read_dataset(r: &mut Reader<'_>, blobs: BlobParams) -> Result<DataSource> {
    match r.string("dataset", "blobs")?.as_str() {
        "blobs" => Ok(DataSource::Blobs(BlobParams {
            classes: r.value("classes", blobs.classes)?,
            dim: r.value("dim", blobs.dim)?,
            separation: r.value("separation", blobs.separation)?,
            ..blobs
        })),
        "mnist" => Ok(DataSource::Mnist {
            images: r.string("mnist_images", "data/train-images-idx3-ubyte")?.into(),
            labels: r.string("mnist_labels", "data/train-labels-idx1-ubyte")?.into(),
        }),
        other => fail!(Config, "unknown dataset {other:?}"),
    }
}

pub(crate) fn input(ds: &Dataset, i: usize) -> (Tensor, usize) {
    let (x, y) = ds.sample(i);
    (Tensor::vector(x.to_vec()), y)
}

/// Mixes a run seed with a trial index into an independent seed.
pub(crate) fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
