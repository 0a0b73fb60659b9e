//! Saving and loading benchmark instances for reproducible runs.
//!
//! An instance directory holds one `instance.json` manifest plus DMAT1
//! files for each array. The manifest records the instance kind, the file
//! names and the scalar parameters.

use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kernels::io::{load_matrix, load_vector, write_dmat, write_dmat_vector};
use crate::kernels::{DenseVector, IndexSet};

use super::{
    ConstraintLoss, FairnessInstance, JointProbInstance, NnlsInstance, Regularizer, SvmInstance,
};

/// Any of the built-in benchmark instances.
#[derive(Debug, Clone)]
pub enum Instance {
    Nnls(NnlsInstance),
    Svm(SvmInstance),
    JointProb(JointProbInstance),
    Fairness(FairnessInstance),
}

const MANIFEST: &str = "instance.json";

/// Writes the instance and its manifest into `dir` (which must exist).
pub fn save_instance(dir: &Path, instance: &Instance) -> Result<()> {
    let manifest = match instance {
        Instance::Nnls(i) => {
            write_dmat(&dir.join("a.dmat"), &i.a)?;
            write_dmat_vector(&dir.join("b.dmat"), &i.b)?;
            write_dmat_vector(&dir.join("x_true.dmat"), &i.x_true)?;
            json!({
                "kind": "nnls",
                "files": {"a": "a.dmat", "b": "b.dmat", "x_true": "x_true.dmat"},
                "params": {},
            })
        }
        Instance::Svm(i) => {
            write_dmat(&dir.join("kernel.dmat"), &i.kernel)?;
            write_dmat_vector(&dir.join("labels.dmat"), &i.labels)?;
            json!({
                "kind": "svm",
                "files": {"kernel": "kernel.dmat", "labels": "labels.dmat"},
                "params": {"c": i.c},
            })
        }
        Instance::JointProb(i) => {
            write_dmat_vector(&dir.join("u.dmat"), &i.u)?;
            write_dmat_vector(&dir.join("v.dmat"), &i.v)?;
            write_dmat(&dir.join("cost.dmat"), &i.cost)?;
            json!({
                "kind": "joint-prob",
                "files": {"u": "u.dmat", "v": "v.dmat", "cost": "cost.dmat"},
                "params": {"lambda": i.lambda, "regularizer": i.regularizer.to_string()},
            })
        }
        Instance::Fairness(i) => {
            write_dmat(&dir.join("features.dmat"), &i.features)?;
            write_dmat_vector(&dir.join("labels.dmat"), &i.labels)?;
            let group = DenseVector::from_fn(i.group_a.len(), |r| {
                if i.group_a.contains(r) {
                    1.0
                } else {
                    0.0
                }
            });
            write_dmat_vector(&dir.join("group.dmat"), &group)?;
            json!({
                "kind": "fairness",
                "files": {
                    "features": "features.dmat",
                    "labels": "labels.dmat",
                    "group": "group.dmat",
                },
                "params": {
                    "lambda_reg": i.lambda_reg,
                    "constraint_loss": i.constraint_loss.to_string(),
                },
            })
        }
    };
    std::fs::write(
        dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(())
}

fn field<'a>(value: &'a Value, path: &str, key: &str) -> Result<&'a Value> {
    value
        .get(key)
        .ok_or_else(|| Error::InvalidData(format!("{path}: manifest missing {key:?}")))
}

fn file_name(files: &Value, path: &str, key: &str) -> Result<String> {
    Ok(field(files, path, key)?
        .as_str()
        .ok_or_else(|| Error::InvalidData(format!("{path}: {key:?} must be a file name")))?
        .to_string())
}

fn number(params: &Value, path: &str, key: &str) -> Result<f64> {
    field(params, path, key)?
        .as_f64()
        .ok_or_else(|| Error::InvalidData(format!("{path}: {key:?} must be a number")))
}

/// Reads `instance.json` from `dir` and loads the referenced arrays.
pub fn load_instance_manifest(dir: &Path) -> Result<Instance> {
    let manifest_path = dir.join(MANIFEST);
    let display = manifest_path.display().to_string();
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::InvalidData(format!("{display}: {e}")))?;
    let kind = field(&manifest, &display, "kind")?
        .as_str()
        .unwrap_or_default()
        .to_string();
    let files = field(&manifest, &display, "files")?.clone();
    let params = manifest.get("params").cloned().unwrap_or(json!({}));

    match kind.as_str() {
        "nnls" => Ok(Instance::Nnls(NnlsInstance {
            a: load_matrix(&dir.join(file_name(&files, &display, "a")?))?,
            b: load_vector(&dir.join(file_name(&files, &display, "b")?))?,
            x_true: load_vector(&dir.join(file_name(&files, &display, "x_true")?))?,
        })),
        "svm" => Ok(Instance::Svm(SvmInstance {
            kernel: load_matrix(&dir.join(file_name(&files, &display, "kernel")?))?,
            labels: load_vector(&dir.join(file_name(&files, &display, "labels")?))?,
            c: number(&params, &display, "c")?,
        })),
        "joint-prob" => {
            let reg = match field(&params, &display, "regularizer")?.as_str() {
                Some("entropy") => Regularizer::Entropy,
                Some("gaussian") => Regularizer::Gaussian,
                other => {
                    return Err(Error::InvalidData(format!(
                        "{display}: unknown regularizer {other:?}"
                    )))
                }
            };
            Ok(Instance::JointProb(JointProbInstance::new(
                load_vector(&dir.join(file_name(&files, &display, "u")?))?,
                load_vector(&dir.join(file_name(&files, &display, "v")?))?,
                load_matrix(&dir.join(file_name(&files, &display, "cost")?))?,
                number(&params, &display, "lambda")?,
                reg,
            )?))
        }
        "fairness" => {
            let loss = match field(&params, &display, "constraint_loss")?.as_str() {
                Some("logistic") => ConstraintLoss::Logistic,
                Some("linear") => ConstraintLoss::Linear,
                other => {
                    return Err(Error::InvalidData(format!(
                        "{display}: unknown constraint loss {other:?}"
                    )))
                }
            };
            let group = load_vector(&dir.join(file_name(&files, &display, "group")?))?;
            let in_a: Vec<bool> = group.iter().map(|&g| g == 1.0).collect();
            let instance = FairnessInstance {
                features: load_matrix(&dir.join(file_name(&files, &display, "features")?))?,
                labels: load_vector(&dir.join(file_name(&files, &display, "labels")?))?,
                group_a: IndexSet::new(in_a.clone()),
                group_b: IndexSet::new(in_a.iter().map(|&b| !b).collect()),
                lambda_reg: number(&params, &display, "lambda_reg")?,
                constraint_loss: loss,
            };
            instance.validate()?;
            Ok(Instance::Fairness(instance))
        }
        other => Err(Error::InvalidData(format!(
            "{display}: unknown instance kind {other:?}"
        ))),
    }
}
