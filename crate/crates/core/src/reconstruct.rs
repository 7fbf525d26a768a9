//! Final factors and per-matrix singular values from a merged factor match
//! graph.

use std::collections::{BTreeMap, BTreeSet};

use faer::Mat;
use serde::Serialize;

use crate::datamodel::{EdgeKey, ViewId, ViewLayout};
use crate::denoise::DenoiseResult;
use crate::error::{Error, Result};
use crate::fmgraph::{classify_sharing, FactorMatchGraph, MergeStats, NodeKey, SharingClass};
use crate::linalg;

/// Where a column of a view's factor matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnSource {
    /// The factor does not involve the view; the column holds NaN.
    Empty,
    /// Column of the view's joint left singular vectors.
    Joint(usize),
    /// Singular vector of one individual matrix, for factors only seen from
    /// one side.
    Individual { edge: EdgeKey, factor_index: usize },
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct PhaseTimings {
    pub standardize_ms: f64,
    pub svd_pass1_ms: f64,
    pub assemble_ms: f64,
    pub svd_pass2_ms: f64,
    pub matching_ms: f64,
    pub merging_ms: f64,
    pub reconstruct_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MatrixDiagnostics {
    pub row_view: String,
    pub col_view: String,
    pub layer: u32,
    pub rows: usize,
    pub cols: usize,
    /// Noise standard deviation in the input's units.
    pub noise_scale: Option<f64>,
    pub beta: f64,
    pub rank: usize,
    /// Divisor applied during standardization.
    pub scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct JointDiagnostics {
    pub view: String,
    pub rows: usize,
    pub cols: usize,
    pub beta: f64,
    pub rank: usize,
    pub pass_through: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorRef {
    pub row_view: String,
    pub col_view: String,
    pub layer: u32,
    pub factor_index: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub matrices: Vec<MatrixDiagnostics>,
    pub joints: Vec<JointDiagnostics>,
    pub overlap_merges: usize,
    /// Individual factors discarded because no joint factor matched them.
    pub unmatched: Vec<FactorRef>,
    pub warnings: Vec<String>,
    pub timings: PhaseTimings,
}

impl Diagnostics {
    pub fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }
}

#[derive(Debug, Clone)]
pub struct IntegrationResult {
    pub layout: ViewLayout,
    /// `p_i x r` per view; columns marked [`ColumnSource::Empty`] hold NaN.
    pub factors: BTreeMap<ViewId, Mat<f64>>,
    pub column_sources: BTreeMap<ViewId, Vec<ColumnSource>>,
    /// Signed singular values per matrix, length `r`, zero where a factor is
    /// absent from the matrix.
    pub values: BTreeMap<EdgeKey, Vec<f64>>,
    /// Merged graph; hyperedge `l` is factor `l`.
    pub graph: FactorMatchGraph,
    pub classes: Vec<SharingClass>,
    /// Standardization divisor per matrix.
    pub scales: BTreeMap<EdgeKey, f64>,
    pub diagnostics: Diagnostics,
}

impl IntegrationResult {
    pub fn n_factors(&self) -> usize {
        self.classes.len()
    }

    /// Number of factors per sharing class.
    pub fn class_counts(&self) -> BTreeMap<SharingClass, usize> {
        crate::fmgraph::class_counts(&self.classes)
    }
}

/// Inputs to [`assemble_result`], all from one run on standardized data.
pub struct AssemblyInputs<'a> {
    pub layout: &'a ViewLayout,
    pub view_graphs: &'a [FactorMatchGraph],
    pub joints: &'a BTreeMap<ViewId, DenoiseResult>,
    pub individuals: &'a BTreeMap<EdgeKey, DenoiseResult>,
    pub scales: &'a BTreeMap<EdgeKey, f64>,
}

/// Vectors of `view` in an individual result for `edge`.
fn side_vectors<'a>(result: &'a DenoiseResult, edge: &EdgeKey, view: ViewId) -> faer::MatRef<'a, f64> {
    if edge.row_view == view {
        result.left_vectors.as_ref()
    } else {
        result.right_vectors.as_ref()
    }
}

pub fn assemble_result(
    inputs: AssemblyInputs<'_>,
    mut merged: FactorMatchGraph,
    merge_stats: MergeStats,
) -> Result<IntegrationResult> {
    let AssemblyInputs {
        layout,
        view_graphs,
        joints,
        individuals,
        scales,
    } = inputs;
    let mut diagnostics = Diagnostics {
        overlap_merges: merge_stats.overlap_merges,
        ..Diagnostics::default()
    };

    let shrunk = |key: &NodeKey| -> Result<f64> {
        individuals
            .get(&key.edge)
            .and_then(|r| r.shrunk_values.get(key.factor_index).copied())
            .ok_or_else(|| {
                Error::Internal(format!(
                    "factor {} of {} has no denoising result",
                    key.factor_index,
                    layout.describe(&key.edge)
                ))
            })
    };

    // strongest factors first
    let mut weights = Vec::with_capacity(merged.hyperedges().len());
    for (h, edge) in merged.hyperedges().iter().enumerate() {
        let mut w = 0.0;
        for k in &edge.members {
            w += shrunk(k)?.powi(2);
        }
        weights.push((h, w, *edge.members.first().expect("non-empty")));
    }
    weights.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    let order: Vec<usize> = weights.iter().map(|w| w.0).collect();
    merged.reorder(&order);

    let graph_of: BTreeMap<ViewId, &FactorMatchGraph> =
        view_graphs.iter().filter_map(|g| g.owner().map(|o| (o, g))).collect();
    let r = merged.hyperedges().len();

    let mut factors: BTreeMap<ViewId, Mat<f64>> = layout
        .view_ids()
        .map(|v| (v, Mat::from_fn(layout.dim(v), r, |_, _| f64::NAN)))
        .collect();
    let mut sources: BTreeMap<ViewId, Vec<ColumnSource>> =
        layout.view_ids().map(|v| (v, vec![ColumnSource::Empty; r])).collect();
    let mut values: BTreeMap<EdgeKey, Vec<f64>> =
        layout.edges().iter().map(|e| (*e, vec![0.0; r])).collect();

    for l in 0..r {
        // one node per matrix; on collisions the larger shrunk value wins
        let mut chosen: BTreeMap<EdgeKey, (NodeKey, f64)> = BTreeMap::new();
        for key in &merged.hyperedges()[l].members {
            let s = shrunk(key)?;
            match chosen.get(&key.edge) {
                Some((kept, ks)) => {
                    let (winner, loser) = if s > *ks { (*key, *kept) } else { (*kept, *key) };
                    diagnostics.warn(format!(
                        "factor {l}: dropping factor {} of {} in favour of factor {}",
                        loser.factor_index,
                        layout.describe(&key.edge),
                        winner.factor_index
                    ));
                    if s > *ks {
                        chosen.insert(key.edge, (*key, s));
                    }
                }
                None => {
                    chosen.insert(key.edge, (*key, s));
                }
            }
        }

        let views: BTreeSet<ViewId> = chosen
            .keys()
            .flat_map(|e| [e.row_view, e.col_view])
            .collect();
        for view in views {
            let involved: Vec<&(NodeKey, f64)> = chosen.values().filter(|(k, _)| k.edge.involves(view)).collect();
            let anchored = involved.iter().find_map(|(k, _)| {
                graph_of
                    .get(&view)
                    .and_then(|g| g.anchor_of(k))
                    .map(|a| (*k, a))
            });
            let column = factors.get_mut(&view).expect("view in layout");
            let source = match anchored {
                Some((_, a)) => {
                    let joint = joints
                        .get(&view)
                        .ok_or_else(|| Error::Internal(format!("no joint result for view `{}`", layout.view_name(view))))?;
                    if a >= joint.rank {
                        return Err(Error::Internal(format!(
                            "anchor {a} exceeds joint rank {} of view `{}`",
                            joint.rank,
                            layout.view_name(view)
                        )));
                    }
                    column.col_mut(l).copy_from(joint.left_vectors.col(a));
                    ColumnSource::Joint(a)
                }
                None => {
                    let (key, _) = involved
                        .iter()
                        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                        .expect("view touched by the factor");
                    let ind = &individuals[&key.edge];
                    column
                        .col_mut(l)
                        .copy_from(side_vectors(ind, &key.edge, view).col(key.factor_index));
                    ColumnSource::Individual {
                        edge: key.edge,
                        factor_index: key.factor_index,
                    }
                }
            };
            sources.get_mut(&view).expect("view in layout")[l] = source;
        }

        for (edge, (key, s)) in &chosen {
            let ind = &individuals[edge];
            let k = key.factor_index;
            let d1 = linalg::column_dot(
                factors[&edge.row_view].as_ref(),
                l,
                ind.left_vectors.as_ref(),
                k,
            );
            let d2 = linalg::column_dot(
                factors[&edge.col_view].as_ref(),
                l,
                ind.right_vectors.as_ref(),
                k,
            );
            if d1.abs() < 1e-8 || d2.abs() < 1e-8 {
                diagnostics.warn(format!(
                    "factor {l} is nearly orthogonal to factor {k} of {} (dots {d1:.3e}, {d2:.3e})",
                    layout.describe(edge)
                ));
            }
            let sign = if (d1 < 0.0) != (d2 < 0.0) { -1.0 } else { 1.0 };
            values.get_mut(edge).expect("edge in layout")[l] = sign * s;
        }
    }

    let classes = classify_sharing(&merged, layout);
    Ok(IntegrationResult {
        layout: layout.clone(),
        factors,
        column_sources: sources,
        values,
        graph: merged,
        classes,
        scales: scales.clone(),
        diagnostics,
    })
}

/// `sum_l x_l v_il v_jlᵀ` on the standardized scale.
pub fn reconstruct_standardized(result: &IntegrationResult, edge: &EdgeKey) -> Result<Mat<f64>> {
    let values = result
        .values
        .get(edge)
        .ok_or_else(|| Error::UnknownEdge(format!("{edge:?}")))?;
    let vi = &result.factors[&edge.row_view];
    let vj = &result.factors[&edge.col_view];
    let active: Vec<usize> = (0..values.len()).filter(|&l| values[l] != 0.0).collect();
    let left = Mat::from_fn(vi.nrows(), active.len(), |r, c| vi[(r, active[c])] * values[active[c]]);
    let right = Mat::from_fn(vj.nrows(), active.len(), |r, c| vj[(r, active[c])]);
    Ok(linalg::product(left.as_ref(), right.transpose()))
}

/// Estimated signal of one matrix in the units of the input data.
pub fn reconstruct_signal(result: &IntegrationResult, edge: &EdgeKey) -> Result<Mat<f64>> {
    let mut out = reconstruct_standardized(result, edge)?;
    let scale = result.scales.get(edge).copied().unwrap_or(1.0);
    for c in 0..out.ncols() {
        out.col_mut(c).iter_mut().for_each(|x| *x *= scale);
    }
    Ok(out)
}
