//! Weighted averaging of two checkpoints that share a structure.

mod archive;

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::parallel::try_map_ordered;

pub use archive::{load_archive, save_archive, Dtype, Tensor, TensorArchive};

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt archive{}: {message}", tensor.as_ref().map(|t| format!(" (tensor {t:?})")).unwrap_or_default())]
    Corrupt {
        tensor: Option<String>,
        message: String,
    },
    #[error("tensor {tensor:?}: size mismatch: {message}")]
    SizeMismatch { tensor: String, message: String },
    #[error("tensor names differ: only in fine {only_in_fine:?}, only in base {only_in_base:?}")]
    NameMismatch {
        only_in_fine: Vec<String>,
        only_in_base: Vec<String>,
    },
    #[error("tensor {tensor:?}: shape {fine:?} vs {base:?}")]
    ShapeMismatch {
        tensor: String,
        fine: Vec<usize>,
        base: Vec<usize>,
    },
    #[error("tensor {tensor:?}: dtype {fine:?} vs {base:?}")]
    DtypeMismatch { tensor: String, fine: Dtype, base: Dtype },
    #[error("non-float tensor {0:?} differs between fine and base")]
    NonWeightDiffers(String),
    #[error("alpha must lie in [0, 1], got {0}")]
    Alpha(f64),
}

impl MergeError {
    /// The two archives cannot be merged because their layouts differ.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            MergeError::NameMismatch { .. }
                | MergeError::ShapeMismatch { .. }
                | MergeError::DtypeMismatch { .. }
                | MergeError::NonWeightDiffers(_)
        )
    }
}

/// Weight on the fine-tuned archive; 0.5 averages equally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeSpec {
    alpha: f64,
}

impl MergeSpec {
    pub const EQUAL: MergeSpec = MergeSpec { alpha: 0.5 };

    pub fn new(alpha: f64) -> Result<Self, MergeError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(MergeError::Alpha(alpha));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

pub const META_ALPHA: &str = "merge.alpha";
pub const META_FINE_DIGEST: &str = "merge.fine_sha256";
pub const META_BASE_DIGEST: &str = "merge.base_sha256";

/// `alpha * fine + (1 - alpha) * base` element-wise, in f64, stored back
/// in each tensor's dtype.
///
/// Equal elements are copied unchanged, alpha 0 and 1 return base and fine
/// exactly, and results are clamped to the closed interval between the two
/// inputs. Non-float tensors must be identical and are copied from base.
/// Output metadata is base's plus the alpha and both input digests.
pub fn merge_archives(fine: &TensorArchive, base: &TensorArchive, spec: MergeSpec) -> Result<TensorArchive, MergeError> {
    check_structure(fine, base)?;
    let names: Vec<&String> = base.tensors.keys().collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let merged = try_map_ordered(&names, workers, |name| {
        merge_tensor(name, &fine.tensors[*name], &base.tensors[*name], spec.alpha)
    })
    .map_err(|(_, e)| e)?;

    let mut out = TensorArchive::new();
    for (name, t) in names.into_iter().zip(merged) {
        out.insert(name.clone(), t);
    }
    out.metadata = base.metadata.clone();
    out.metadata.insert(META_ALPHA.into(), spec.alpha.to_string());
    out.metadata.insert(META_FINE_DIGEST.into(), fine.digest());
    out.metadata.insert(META_BASE_DIGEST.into(), base.digest());
    Ok(out)
}

fn check_structure(fine: &TensorArchive, base: &TensorArchive) -> Result<(), MergeError> {
    let f: BTreeSet<&String> = fine.tensors.keys().collect();
    let b: BTreeSet<&String> = base.tensors.keys().collect();
    if f != b {
        return Err(MergeError::NameMismatch {
            only_in_fine: f.difference(&b).map(|s| s.to_string()).collect(),
            only_in_base: b.difference(&f).map(|s| s.to_string()).collect(),
        });
    }
    for (name, ft) in &fine.tensors {
        let bt = &base.tensors[name];
        if ft.shape != bt.shape {
            return Err(MergeError::ShapeMismatch {
                tensor: name.clone(),
                fine: ft.shape.clone(),
                base: bt.shape.clone(),
            });
        }
        if ft.dtype != bt.dtype {
            return Err(MergeError::DtypeMismatch {
                tensor: name.clone(),
                fine: ft.dtype,
                base: bt.dtype,
            });
        }
        if !ft.dtype.is_float() && ft.bytes() != bt.bytes() {
            return Err(MergeError::NonWeightDiffers(name.clone()));
        }
    }
    Ok(())
}

fn merge_tensor(name: &str, fine: &Tensor, base: &Tensor, alpha: f64) -> Result<Tensor, MergeError> {
    if !fine.dtype.is_float() || alpha == 0.0 {
        return Ok(base.clone());
    }
    if alpha == 1.0 {
        return Ok(fine.clone());
    }
    let f = fine.to_f64().expect("float dtype");
    let b = base.to_f64().expect("float dtype");
    let beta = 1.0 - alpha;
    let values: Vec<f64> = f
        .iter()
        .zip(&b)
        .map(|(&x, &y)| {
            if x.to_bits() == y.to_bits() {
                return x;
            }
            let v = alpha * x + beta * y;
            v.clamp(x.min(y), x.max(y))
        })
        .collect();
    let out = Tensor::from_f64(base.dtype, base.shape.clone(), &values).map_err(|m| MergeError::SizeMismatch {
        tensor: name.to_string(),
        message: m,
    })?;
    // Equal elements must survive the narrowing untouched.
    debug_assert_eq!(out.numel(), base.numel());
    Ok(out)
}
