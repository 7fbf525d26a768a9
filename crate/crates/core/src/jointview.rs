//! Joint matrices: for a fixed view, every standardized matrix involving it,
//! rescaled back to unit noise, oriented with the view in the rows,
//! concatenated column-wise and divided by `sqrt(max(rows, cols))`.

use std::collections::BTreeMap;
use std::ops::Range;

use faer::Mat;

use crate::datamodel::{EdgeKey, ObservedMatrix, ViewId, ViewLayout};
use crate::error::{Error, LayoutError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointSource {
    pub edge: EdgeKey,
    /// The view sits in the columns of this edge's matrix, so its block is
    /// the transpose.
    pub transposed: bool,
}

#[derive(Debug, Clone)]
pub struct JointAssembly {
    pub view: ViewId,
    pub source_edges: Vec<JointSource>,
    /// `p_i`
    pub n_rows: usize,
    /// `c_i`, the sum of partner dimensions.
    pub n_cols: usize,
    /// `d_i = max(p_i, c_i)`
    pub d: usize,
    /// `n_i`, number of matrices involving the view.
    pub n_involved: usize,
    /// `gamma_i`, sum of `p_ij` over involved matrices.
    pub gamma: usize,
    /// `p_ij` for each source, in source order.
    pub max_dims: Vec<usize>,
    pub column_offsets: Vec<Range<usize>>,
    pub matrix: Mat<f64>,
}

impl JointAssembly {
    /// True when the joint matrix is exactly the single source matrix (or its
    /// transpose) with no rescaling.
    pub fn is_pass_through(&self) -> bool {
        self.n_involved == 1 && self.max_dims[0] == self.d
    }
}

/// Block layout of a joint matrix without materializing it.
fn plan(layout: &ViewLayout, view: ViewId) -> Result<(Vec<JointSource>, Vec<usize>, Vec<Range<usize>>)> {
    if view.0 >= layout.n_views() {
        return Err(LayoutError::UnknownView(format!("#{}", view.0)).into());
    }
    let mut sources = Vec::new();
    let mut max_dims = Vec::new();
    let mut offsets = Vec::new();
    let mut col = 0;
    for edge in layout.edges_of(view) {
        let transposed = edge.col_view == view;
        let partner = edge.partner(view).expect("edge involves view");
        let width = layout.dim(partner);
        sources.push(JointSource { edge, transposed });
        max_dims.push(layout.max_dim(&edge));
        offsets.push(col..col + width);
        col += width;
    }
    if sources.is_empty() {
        return Err(Error::Layout(LayoutError::Disconnected(
            layout.view_name(view).to_string(),
        )));
    }
    Ok((sources, max_dims, offsets))
}

/// Builds the joint matrix of `view` from standardized matrices.
pub fn assemble_joint(
    layout: &ViewLayout,
    standardized: &BTreeMap<EdgeKey, ObservedMatrix>,
    view: ViewId,
) -> Result<JointAssembly> {
    let (sources, max_dims, offsets) = plan(layout, view)?;
    let n_rows = layout.dim(view);
    let n_cols = offsets.last().map(|r| r.end).unwrap_or(0);
    let d = n_rows.max(n_cols);
    let inv_sqrt_d = (d as f64).sqrt().recip();
    let mut matrix = Mat::<f64>::zeros(n_rows, n_cols);
    for ((src, p), range) in sources.iter().zip(&max_dims).zip(&offsets) {
        let block = standardized
            .get(&src.edge)
            .ok_or_else(|| Error::UnknownEdge(layout.describe(&src.edge)))?;
        let data = block.data();
        let factor = if *p == d {
            1.0
        } else {
            (*p as f64).sqrt() * inv_sqrt_d
        };
        for (local, c) in range.clone().enumerate() {
            let mut dst = matrix.col_mut(c);
            if src.transposed {
                for r in 0..n_rows {
                    dst[r] = factor * data[(local, r)];
                }
            } else {
                let col = data.col(local);
                for r in 0..n_rows {
                    dst[r] = factor * col[r];
                }
            }
        }
    }
    Ok(JointAssembly {
        view,
        n_involved: sources.len(),
        gamma: max_dims.iter().sum(),
        source_edges: sources,
        n_rows,
        n_cols,
        d,
        max_dims,
        column_offsets: offsets,
        matrix,
    })
}

/// Signal singular value of one component in the joint matrix:
/// `sqrt(sum_j p_ij x_ij^2 / d_i)`.
pub fn joint_signal_sv(per_edge_values: &BTreeMap<EdgeKey, f64>, assembly: &JointAssembly) -> f64 {
    let total: f64 = assembly
        .source_edges
        .iter()
        .zip(&assembly.max_dims)
        .map(|(src, p)| {
            let x = per_edge_values.get(&src.edge).copied().unwrap_or(0.0);
            *p as f64 * x * x
        })
        .sum();
    (total / assembly.d as f64).sqrt()
}

/// Right singular vectors of the noiseless joint signal, built from the
/// partner views' factors: each block is `sqrt(p_ij) U_j diag(x_ij)`, and
/// the stacked result is normalized by `sqrt(d_i) x_i`. Components whose
/// joint value is zero give a zero column.
pub fn joint_right_factors(
    assembly: &JointAssembly,
    factors: &BTreeMap<ViewId, Mat<f64>>,
    values: &BTreeMap<EdgeKey, Vec<f64>>,
) -> Result<Mat<f64>> {
    let r = values.values().map(Vec::len).max().unwrap_or(0);
    let mut out = Mat::<f64>::zeros(assembly.n_cols, r);
    for l in 0..r {
        let per_edge: BTreeMap<EdgeKey, f64> = values
            .iter()
            .map(|(e, v)| (*e, v.get(l).copied().unwrap_or(0.0)))
            .collect();
        let xi = joint_signal_sv(&per_edge, assembly);
        if xi == 0.0 {
            continue;
        }
        let norm = (assembly.d as f64).sqrt() * xi;
        for ((src, p), range) in assembly
            .source_edges
            .iter()
            .zip(&assembly.max_dims)
            .zip(&assembly.column_offsets)
        {
            let partner = src.edge.partner(assembly.view).expect("edge involves view");
            let u = factors
                .get(&partner)
                .ok_or_else(|| Error::Internal(format!("no factors for view #{}", partner.0)))?;
            let x = per_edge[&src.edge];
            let w = (*p as f64).sqrt() * x / norm;
            for (local, c) in range.clone().enumerate() {
                out[(c, l)] = w * u[(local, l)];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ObservedMatrix;

    fn three_view_layout() -> ViewLayout {
        let mut layout = ViewLayout::new();
        layout.add_view("a", 6).unwrap();
        layout.add_view("b", 4).unwrap();
        layout.add_view("c", 3).unwrap();
        layout.add_edge("a", "b", 0).unwrap();
        layout.add_edge("c", "a", 0).unwrap();
        layout
    }

    fn filled(layout: &ViewLayout) -> BTreeMap<EdgeKey, ObservedMatrix> {
        layout
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let (r, c) = layout.shape(e);
                let m = Mat::from_fn(r, c, |i, j| (100 * k + 10 * i + j) as f64);
                (*e, ObservedMatrix::new(*e, m))
            })
            .collect()
    }

    #[test]
    fn blocks_are_scaled_and_transposed() {
        let layout = three_view_layout();
        let mats = filled(&layout);
        let a = layout.view_id("a").unwrap();
        let joint = assemble_joint(&layout, &mats, a).unwrap();
        assert_eq!((joint.n_rows, joint.n_cols, joint.d), (6, 7, 7));
        assert_eq!(joint.column_offsets, vec![0..4, 4..7]);
        assert_eq!(joint.n_involved, 2);
        assert_eq!(joint.gamma, 12);
        let ab = mats[&layout.edges()[0]].data();
        let ca = mats[&layout.edges()[1]].data();
        let f = (6.0f64 / 7.0).sqrt();
        assert!((joint.matrix[(2, 1)] - f * ab[(2, 1)]).abs() < 1e-12);
        // (c, a) enters transposed
        assert!((joint.matrix[(5, 4 + 2)] - f * ca[(2, 5)]).abs() < 1e-12);
    }

    #[test]
    fn single_edge_view_passes_through() {
        let layout = three_view_layout();
        let mats = filled(&layout);
        let b = layout.view_id("b").unwrap();
        let joint = assemble_joint(&layout, &mats, b).unwrap();
        assert!(joint.is_pass_through());
        let ab = mats[&layout.edges()[0]].data();
        for i in 0..4 {
            for j in 0..6 {
                assert_eq!(joint.matrix[(i, j)], ab[(j, i)]);
            }
        }
    }

    #[test]
    fn joint_signal_value_examples() {
        let mut layout = ViewLayout::new();
        layout.add_view("i", 10).unwrap();
        layout.add_view("j1", 2).unwrap();
        layout.add_view("j2", 2).unwrap();
        layout.add_edge("i", "j1", 0).unwrap();
        layout.add_edge("i", "j2", 0).unwrap();
        let mats = filled(&layout);
        let joint = assemble_joint(&layout, &mats, layout.view_id("i").unwrap()).unwrap();
        let zeros = layout.edges().iter().map(|e| (*e, 0.0)).collect();
        assert_eq!(joint_signal_sv(&zeros, &joint), 0.0);
        let both = layout.edges().iter().map(|e| (*e, 1.25)).collect();
        assert!((joint_signal_sv(&both, &joint) - 1.25 * 2f64.sqrt()).abs() < 1e-12);
    }
}
