//! View graph, observed matrices and standardization to the unit-noise model.

use std::collections::BTreeMap;
use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::denoise::{self, estimate_noise_scale};
use crate::error::{Error, LayoutError, Result};

/// Dense index of a view inside a [`ViewLayout`], in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ViewId(pub usize);

/// One observed relation: a matrix with `row_view` in the rows and
/// `col_view` in the columns. Layers distinguish repeated relations between
/// the same pair of views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub row_view: ViewId,
    pub col_view: ViewId,
    pub layer: u32,
}

impl EdgeKey {
    pub fn new(row_view: ViewId, col_view: ViewId, layer: u32) -> Self {
        Self {
            row_view,
            col_view,
            layer,
        }
    }

    pub fn involves(&self, view: ViewId) -> bool {
        self.row_view == view || self.col_view == view
    }

    /// The view on the other side of the edge.
    pub fn partner(&self, view: ViewId) -> Option<ViewId> {
        if self.row_view == view {
            Some(self.col_view)
        } else if self.col_view == view {
            Some(self.row_view)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
struct View {
    name: String,
    dim: usize,
}

/// The view graph: named views with their dimensions, and the observed edges.
#[derive(Debug, Clone, Default)]
pub struct ViewLayout {
    views: Vec<View>,
    edges: Vec<EdgeKey>,
}

impl ViewLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_view(&mut self, name: impl Into<String>, dim: usize) -> Result<ViewId, LayoutError> {
        let name = name.into();
        if self.views.iter().any(|v| v.name == name) {
            return Err(LayoutError::DuplicateView(name));
        }
        if dim == 0 {
            return Err(LayoutError::EmptyView(name));
        }
        self.views.push(View { name, dim });
        Ok(ViewId(self.views.len() - 1))
    }

    /// Adds an edge by view names. Rejects self-loops and repeated
    /// `(pair, layer)` combinations in either orientation.
    pub fn add_edge(&mut self, row: &str, col: &str, layer: u32) -> Result<EdgeKey, LayoutError> {
        let row_view = self.view_id(row)?;
        let col_view = self.view_id(col)?;
        let key = EdgeKey::new(row_view, col_view, layer);
        if row_view == col_view {
            return Err(LayoutError::SelfLoop(self.describe(&key)));
        }
        let mirrored = EdgeKey::new(col_view, row_view, layer);
        if self.edges.iter().any(|e| *e == key || *e == mirrored) {
            return Err(LayoutError::DuplicateEdge(self.describe(&key)));
        }
        self.edges.push(key);
        self.edges.sort();
        Ok(key)
    }

    pub fn view_id(&self, name: &str) -> Result<ViewId, LayoutError> {
        self.views
            .iter()
            .position(|v| v.name == name)
            .map(ViewId)
            .ok_or_else(|| LayoutError::UnknownView(name.to_string()))
    }

    pub fn view_name(&self, view: ViewId) -> &str {
        &self.views[view.0].name
    }

    pub fn dim(&self, view: ViewId) -> usize {
        self.views[view.0].dim
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn view_ids(&self) -> impl Iterator<Item = ViewId> + '_ {
        (0..self.views.len()).map(ViewId)
    }

    /// Edges in their fixed total order.
    pub fn edges(&self) -> &[EdgeKey] {
        &self.edges
    }

    pub fn contains_edge(&self, edge: &EdgeKey) -> bool {
        self.edges.binary_search(edge).is_ok()
    }

    pub fn edges_of(&self, view: ViewId) -> impl Iterator<Item = EdgeKey> + '_ {
        self.edges.iter().copied().filter(move |e| e.involves(view))
    }

    pub fn shape(&self, edge: &EdgeKey) -> (usize, usize) {
        (self.dim(edge.row_view), self.dim(edge.col_view))
    }

    /// `p_ij = max(p_i, p_j)`.
    pub fn max_dim(&self, edge: &EdgeKey) -> usize {
        let (r, c) = self.shape(edge);
        r.max(c)
    }

    /// Human-readable `(row, col, layer)` label.
    pub fn describe(&self, edge: &EdgeKey) -> String {
        EdgeLabel { layout: self, edge }.to_string()
    }

    /// Checks that every view is reachable from every other through edges.
    pub fn check_connected(&self) -> Result<(), LayoutError> {
        if self.edges.is_empty() {
            return Err(LayoutError::Empty);
        }
        let n = self.views.len();
        let mut seen = vec![false; n];
        let mut stack = vec![self.edges[0].row_view.0];
        seen[stack[0]] = true;
        while let Some(v) = stack.pop() {
            for e in self.edges_of(ViewId(v)) {
                let w = e.partner(ViewId(v)).expect("edge involves view").0;
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(v) => Err(LayoutError::Disconnected(self.views[v].name.clone())),
            None => Ok(()),
        }
    }
}

struct EdgeLabel<'a> {
    layout: &'a ViewLayout,
    edge: &'a EdgeKey,
}

impl fmt::Display for EdgeLabel<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |v: ViewId| {
            self.layout
                .views
                .get(v.0)
                .map(|v| v.name.as_str())
                .unwrap_or("?")
        };
        write!(
            f,
            "({}, {}, layer {})",
            name(self.edge.row_view),
            name(self.edge.col_view),
            self.edge.layer
        )
    }
}

/// A data matrix attached to an edge. After standardization `scale_applied`
/// holds the divisor `sqrt(p_ij) * sigma_hat` that was applied.
#[derive(Debug, Clone)]
pub struct ObservedMatrix {
    pub key: EdgeKey,
    data: Mat<f64>,
    pub scale_applied: Option<f64>,
    /// Singular values of `data` when already known.
    pub(crate) spectrum: Option<Vec<f64>>,
}

impl ObservedMatrix {
    pub fn new(key: EdgeKey, data: Mat<f64>) -> Self {
        Self {
            key,
            data,
            scale_applied: None,
            spectrum: None,
        }
    }

    pub fn data(&self) -> &Mat<f64> {
        &self.data
    }

    /// Mutable access; drops any cached spectrum.
    pub fn data_mut(&mut self) -> &mut Mat<f64> {
        self.spectrum = None;
        &mut self.data
    }

    pub fn into_data(self) -> Mat<f64> {
        self.data
    }

    /// Computes and caches the singular values of the current data.
    pub fn compute_spectrum(&mut self) -> Result<&[f64]> {
        if self.spectrum.is_none() {
            denoise::check_finite(self.data.as_ref())?;
            self.spectrum = Some(denoise::spectrum_of(self.data.as_ref())?);
        }
        Ok(self.spectrum.as_deref().expect("just computed"))
    }
}

/// Succeeds iff every edge has exactly one matrix of the declared shape and
/// the view graph is connected.
pub fn validate_layout(layout: &ViewLayout, matrices: &[ObservedMatrix]) -> Result<(), LayoutError> {
    let mut count: BTreeMap<EdgeKey, usize> = BTreeMap::new();
    for m in matrices {
        if !layout.contains_edge(&m.key) {
            return Err(LayoutError::UndeclaredEdge(layout.describe(&m.key)));
        }
        let c = count.entry(m.key).or_insert(0);
        *c += 1;
        if *c > 1 {
            return Err(LayoutError::DuplicateMatrix(layout.describe(&m.key)));
        }
        let (rows, cols) = layout.shape(&m.key);
        if m.data.nrows() != rows || m.data.ncols() != cols {
            return Err(LayoutError::ShapeMismatch {
                edge: layout.describe(&m.key),
                expected_rows: rows,
                expected_cols: cols,
                found_rows: m.data.nrows(),
                found_cols: m.data.ncols(),
            });
        }
    }
    if let Some(missing) = layout.edges().iter().find(|e| !count.contains_key(e)) {
        return Err(LayoutError::MissingMatrix(layout.describe(missing)));
    }
    layout.check_connected()
}

/// Scales a matrix so that its noise entries have standard deviation
/// `1 / sqrt(max(p_i, p_j))`.
///
/// The noise scale is estimated in the wide orientation, which is the same as
/// estimating on the transpose when the matrix is tall. Standardizing an
/// already standardized matrix composes the divisors.
pub fn standardize(matrix: &ObservedMatrix) -> Result<ObservedMatrix> {
    let mut work = matrix.clone();
    work.compute_spectrum()?;
    standardize_owned(work)
}

pub(crate) fn standardize_owned(mut matrix: ObservedMatrix) -> Result<ObservedMatrix> {
    let (rows, cols) = (matrix.data.nrows(), matrix.data.ncols());
    let spectrum = matrix.compute_spectrum()?.to_vec();
    if spectrum.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate("cannot standardize an all-zero matrix".into()));
    }
    let sigma = estimate_noise_scale(&spectrum, rows, cols)?;
    let divisor = (rows.max(cols) as f64).sqrt() * sigma;
    let inv = divisor.recip();
    for c in 0..cols {
        matrix.data.col_mut(c).iter_mut().for_each(|x| *x *= inv);
    }
    matrix.spectrum = Some(spectrum.iter().map(|v| v * inv).collect());
    matrix.scale_applied = Some(matrix.scale_applied.unwrap_or(1.0) * divisor);
    Ok(matrix)
}

/// How to center a matrix before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centering {
    Rows,
    Columns,
    Both,
}

/// Subtracts row and/or column means in place.
pub fn center(data: &mut Mat<f64>, mode: Centering) {
    let (rows, cols) = (data.nrows(), data.ncols());
    if matches!(mode, Centering::Columns | Centering::Both) && rows > 0 {
        for c in 0..cols {
            let mean = data.col(c).iter().sum::<f64>() / rows as f64;
            data.col_mut(c).iter_mut().for_each(|x| *x -= mean);
        }
    }
    if matches!(mode, Centering::Rows | Centering::Both) && cols > 0 {
        for r in 0..rows {
            let mean = (0..cols).map(|c| data[(r, c)]).sum::<f64>() / cols as f64;
            for c in 0..cols {
                data[(r, c)] -= mean;
            }
        }
    }
}
