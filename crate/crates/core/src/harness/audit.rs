//! Gradient audit: finite-difference checks of every primitive and every
//! backbone × head combination, cross-task gradient isolation, and
//! forward equivalence of the blocked and unblocked heads.

use std::sync::Arc;
use std::time::Instant;

use dml_autodiff::{
    finite_difference_check_with, Bags, FdOptions, FdReport, Graph, NodeId, ParameterStore,
    Result as AdResult, Tensor,
};
use rand::Rng;

use crate::backbones::BackboneKind;
use crate::data::{Batch, DatasetKind, TaskKind, TaskSpec};
use crate::dml::{DmlHead, HeadVariant};
use crate::error::{Error, Result};
use crate::model::{FieldSpec, ModelConfig, MultiTaskModel};
use crate::nn::{keyed_rng, task_loss, ParamBuilder};

pub const FD_EPS: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct AuditCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl AuditCheck {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64, label: &str) -> Tensor {
    let mut rng = keyed_rng(seed, label);
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).expect("positive shape")
}

/// `sum(out ⊙ R)` for a fixed random `R`, so every output element matters.
fn weighted_sum(g: &mut Graph<'_>, out: NodeId, seed: u64) -> AdResult<NodeId> {
    let s = g.shape(out);
    let w = g.constant(uniform(s.rows, s.cols, -1.0, 1.0, seed, "readout"))?;
    let prod = g.hadamard(out, w)?;
    g.sum(prod)
}

fn fd_options() -> FdOptions {
    FdOptions {
        eps: FD_EPS,
        exclude: Vec::new(),
        max_elements_per_param: None,
        pin_stop_gradients: true,
    }
}

type PrimitiveFn = fn(&mut Graph<'_>) -> AdResult<NodeId>;

fn primitive_cases() -> Vec<(&'static str, PrimitiveFn)> {
    fn p(g: &mut Graph<'_>, name: &str) -> AdResult<NodeId> {
        g.param(name)
    }
    vec![
        ("matmul", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "b42")?);
            g.matmul(a, b)
        }),
        ("add", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "c34")?);
            g.add(a, b)
        }),
        ("add_bias", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "r14")?);
            g.add(a, b)
        }),
        ("sub", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "c34")?);
            g.sub(a, b)
        }),
        ("scale", |g| {
            let a = p(g, "a34")?;
            g.scale(a, -1.7)
        }),
        ("hadamard", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "c34")?);
            g.hadamard(a, b)
        }),
        ("scale_rows", |g| {
            let (a, c) = (p(g, "a34")?, p(g, "k31")?);
            g.scale_rows(a, c)
        }),
        ("relu", |g| {
            let a = p(g, "a34")?;
            g.relu(a)
        }),
        ("sigmoid", |g| {
            let a = p(g, "a34")?;
            g.sigmoid(a)
        }),
        ("log", |g| {
            let a = p(g, "pos34")?;
            g.log(a)
        }),
        ("square", |g| {
            let a = p(g, "a34")?;
            g.square(a)
        }),
        ("clamp", |g| {
            let a = p(g, "a34")?;
            g.clamp(a, -0.55, 0.45)
        }),
        ("row_softmax", |g| {
            let a = p(g, "a34")?;
            g.row_softmax(a)
        }),
        ("transpose", |g| {
            let a = p(g, "a34")?;
            g.transpose(a)
        }),
        ("concat_cols", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "k31")?);
            g.concat_cols(&[a, b])
        }),
        ("slice_cols", |g| {
            let a = p(g, "a34")?;
            g.slice_cols(a, 1, 2)
        }),
        ("slice_rows", |g| {
            let a = p(g, "a34")?;
            g.slice_rows(a, 1, 2)
        }),
        ("row_stack", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "c34")?);
            g.row_stack(&[a, b])
        }),
        ("split_rows", |g| {
            let (a, b) = (p(g, "a34")?, p(g, "c34")?);
            let s = g.row_stack(&[a, b])?;
            let parts = g.split_rows(s, 3)?;
            let x = g.scale(parts[0], 2.0)?;
            g.add(x, parts[2])
        }),
        ("mean", |g| {
            let a = p(g, "a34")?;
            let sq = g.square(a)?;
            g.mean(sq)
        }),
        ("sum", |g| {
            let a = p(g, "a34")?;
            let sq = g.square(a)?;
            g.sum(sq)
        }),
        ("row_sum", |g| {
            let a = p(g, "a34")?;
            g.row_sum(a)
        }),
        ("lookup", |g| {
            let t = p(g, "table53")?;
            let bags = Bags::from_lists(vec![vec![0, 3], vec![], vec![4], vec![1, 1, 2]]);
            g.lookup(t, Arc::new(bags))
        }),
        ("stop_gradient", |g| {
            let a = p(g, "a34")?;
            let s = g.stop_gradient(a)?;
            let t = g.sigmoid(s)?;
            g.hadamard(a, t)
        }),
    ]
}

fn primitive_store(seed: u64) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for (name, r, c, lo, hi) in [
        ("a34", 3, 4, -1.0, 1.0),
        ("b42", 4, 2, -1.0, 1.0),
        ("c34", 3, 4, -1.0, 1.0),
        ("r14", 1, 4, -1.0, 1.0),
        ("k31", 3, 1, -1.0, 1.0),
        ("pos34", 3, 4, 0.5, 2.0),
        ("table53", 5, 3, -1.0, 1.0),
    ] {
        store.insert(name, uniform(r, c, lo, hi, seed, name))?;
    }
    Ok(store)
}

/// Finite-difference report for each primitive under a random readout.
pub fn primitive_fd_checks(seed: u64) -> Result<Vec<(String, FdReport)>> {
    let store = primitive_store(seed)?;
    primitive_cases()
        .into_iter()
        .map(|(name, build)| {
            let f = |g: &mut Graph<'_>| {
                let out = build(g)?;
                weighted_sum(g, out, seed)
            };
            Ok((
                name.to_string(),
                finite_difference_check_with(f, &store, &fd_options())?,
            ))
        })
        .collect()
}

/// Two tasks: a classification and a regression head.
pub fn audit_tasks() -> Vec<TaskSpec> {
    DatasetKind::MovieLens1M.tasks()
}

pub fn audit_fields() -> Vec<FieldSpec> {
    vec![
        FieldSpec::new("user", 7),
        FieldSpec::new("item", 9),
        FieldSpec::new("genres", 5),
    ]
}

/// Reduced widths keep the full-element finite-difference sweep cheap.
pub fn audit_model_config(backbone: BackboneKind, variant: HeadVariant) -> ModelConfig {
    let mut c = ModelConfig::new(backbone, variant);
    c.embedding_dim = 3;
    c.backbone = c.backbone.with_expert_dim(6);
    c.tower_hidden = vec![5, 4];
    c
}

pub fn audit_batch(seed: u64) -> Batch {
    let mut rng = keyed_rng(seed, "audit_batch");
    let n = AUDIT_BATCH;
    let users = Bags::singletons((0..n).map(|_| rng.random_range(0..7)));
    let items = Bags::singletons((0..n).map(|_| rng.random_range(0..9)));
    let genres = Bags::from_lists(
        (0..n)
            .map(|i| {
                (0..1 + i % 3)
                    .map(|_| rng.random_range(0..5))
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>(),
    );
    let ratings: Vec<u8> = (0..n).map(|i| 1 + (i % 5) as u8).collect();
    Batch {
        indices: (0..n as u32).collect(),
        fields: vec![Arc::new(users), Arc::new(items), Arc::new(genres)],
        labels: vec![
            ratings
                .iter()
                .map(|&r| f64::from(u8::from(r >= 4)))
                .collect(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        ],
        ratings,
    }
}

/// Replaces every parameter with `U(-AUDIT_PARAM_BOUND, AUDIT_PARAM_BOUND)`
/// draws keyed by name. Training initialisation zeroes biases, which
/// puts dead relu layers exactly on the kink where one-sided and central
/// differences disagree.
pub fn generic_params(store: &ParameterStore, seed: u64, bound: f64) -> Result<ParameterStore> {
    let mut out = ParameterStore::new();
    for (name, t) in store.iter() {
        out.insert(name, uniform(t.rows(), t.cols(), -bound, bound, seed, name))?;
    }
    Ok(out)
}

pub const AUDIT_PARAM_BOUND: f64 = 0.8;
pub const AUDIT_SEED: u64 = 5;
pub const AUDIT_BATCH: usize = 16;

/// Finite-difference check of the summed task loss of a full model.
pub fn composite_fd_check(
    backbone: BackboneKind,
    variant: HeadVariant,
    seed: u64,
) -> Result<FdReport> {
    composite_fd_check_with(backbone, variant, seed, AUDIT_PARAM_BOUND)
}

pub fn composite_fd_check_with(
    backbone: BackboneKind,
    variant: HeadVariant,
    seed: u64,
    bound: f64,
) -> Result<FdReport> {
    let model = MultiTaskModel::new(
        audit_model_config(backbone, variant),
        audit_tasks(),
        &audit_fields(),
    )?;
    let params = generic_params(&model.init(seed)?, seed, bound)?;
    let batch = audit_batch(seed);
    let f = |g: &mut Graph<'_>| -> AdResult<NodeId> {
        let run = |g: &mut Graph<'_>| -> Result<NodeId> {
            let nodes = model.forward(g, &batch, None)?;
            model.loss(g, &batch, nodes.predictions())
        };
        run(g).map_err(|e| match e {
            Error::Autodiff(inner) => inner,
            other => dml_autodiff::AutodiffError::Check(other.to_string()),
        })
    };
    Ok(finite_difference_check_with(f, &params, &fd_options())?)
}

/// Largest absolute cross-task and own-task adjoints of per-task losses,
/// taken on a head built over random leaf inputs `l^k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsolationReport {
    /// max |∂L_k/∂l^j|, j ≠ k.
    pub cross_input: f64,
    /// max |∂L_k/∂h^j|, j ≠ k.
    pub cross_hidden: f64,
    /// min over k of max |∂L_k/∂l^k|.
    pub own_input: f64,
    /// min over k of max |∂L_k/∂h^k|.
    pub own_hidden: f64,
}

fn max_abs(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn isolation_check(variant: HeadVariant, seed: u64) -> Result<IsolationReport> {
    let tasks: Vec<TaskKind> = audit_tasks().iter().map(|t| t.kind).collect();
    let (d0, batch) = (6, 5);
    let head = DmlHead::new(variant, tasks.clone(), d0, vec![5, 4])?;
    let mut store = ParameterStore::new();
    head.init(&mut ParamBuilder::new(&mut store, seed))?;
    let mut g = Graph::new(&store);
    let l = (0..tasks.len())
        .map(|k| g.leaf(uniform(batch, d0, -1.0, 1.0, seed, &format!("l{k}"))))
        .collect::<AdResult<Vec<_>>>()?;
    let nodes = head.forward_detailed(&mut g, &l)?;
    let mut report = IsolationReport {
        cross_input: 0.0,
        cross_hidden: 0.0,
        own_input: f64::INFINITY,
        own_hidden: f64::INFINITY,
    };
    for (k, &kind) in tasks.iter().enumerate() {
        let labels: Vec<f64> = match kind {
            TaskKind::Classification => (0..batch).map(|i| (i % 2) as f64).collect(),
            TaskKind::Regression => (0..batch).map(|i| 1.0 + i as f64).collect(),
        };
        let loss = task_loss(&mut g, kind.loss(), nodes.predictions[k], &labels)?;
        let grads = g.backward(loss)?;
        for (j, (&lj, &hj)) in l.iter().zip(&nodes.hidden).enumerate() {
            let input = max_abs(&grads.wrt(lj));
            let hidden = max_abs(&grads.wrt(hj));
            if j == k {
                report.own_input = report.own_input.min(input);
                report.own_hidden = report.own_hidden.min(hidden);
            } else {
                report.cross_input = report.cross_input.max(input);
                report.cross_hidden = report.cross_hidden.max(hidden);
            }
        }
    }
    Ok(report)
}

/// Whether the blocked and unblocked heads give bit-identical
/// predictions on shared parameters.
pub fn forward_equivalence(backbone: BackboneKind, seed: u64) -> Result<bool> {
    let full = MultiTaskModel::new(
        audit_model_config(backbone, HeadVariant::Full),
        audit_tasks(),
        &audit_fields(),
    )?;
    let v0 = MultiTaskModel::new(
        audit_model_config(backbone, HeadVariant::V0),
        audit_tasks(),
        &audit_fields(),
    )?;
    let params = full.init(seed)?;
    let batch = audit_batch(seed);
    let a = full.predict(&params, &batch)?;
    let b = v0.predict(&params, &batch)?;
    Ok(a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .all(|(x, y)| x.to_bits() == y.to_bits()))
}

/// Runs the whole audit and returns one line item per check.
pub fn grad_audit(seed: u64) -> Result<Vec<AuditCheck>> {
    let mut checks = Vec::new();
    for (name, r) in primitive_fd_checks(seed)? {
        checks.push(AuditCheck::new(
            format!("fd/primitive/{name}"),
            r.max_rel_err < FD_TOLERANCE,
            format!(
                "max rel err {:.3e} over {} elements",
                r.max_rel_err, r.checked
            ),
        ));
    }
    for backbone in BackboneKind::ALL {
        for variant in HeadVariant::ALL {
            let started = Instant::now();
            let r = composite_fd_check(backbone, variant, seed)?;
            checks.push(AuditCheck::new(
                format!("fd/model/{backbone}+{variant}"),
                r.max_rel_err < FD_TOLERANCE,
                format!(
                    "max rel err {:.3e} over {} elements in {:.2}s",
                    r.max_rel_err,
                    r.checked,
                    started.elapsed().as_secs_f64()
                ),
            ));
        }
    }
    let full = isolation_check(HeadVariant::Full, seed)?;
    checks.push(AuditCheck::new(
        "isolation/full",
        full.cross_input == 0.0 && full.cross_hidden == 0.0 && full.own_input > 0.0,
        format!(
            "cross |dL/dl| {:e}, cross |dL/dh| {:e}, own |dL/dl| {:.3e}",
            full.cross_input, full.cross_hidden, full.own_input
        ),
    ));
    let v0 = isolation_check(HeadVariant::V0, seed)?;
    checks.push(AuditCheck::new(
        "isolation/v0_leaks",
        v0.cross_input > 0.0,
        format!("cross |dL/dl| {:.3e}", v0.cross_input),
    ));
    for backbone in BackboneKind::ALL {
        checks.push(AuditCheck::new(
            format!("forward_equivalence/{backbone}"),
            forward_equivalence(backbone, seed)?,
            "full vs v0 predictions compared bitwise",
        ));
    }
    Ok(checks)
}
