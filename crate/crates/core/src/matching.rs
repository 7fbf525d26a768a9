//! Geometric factor matching between individual and joint factors.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;

use faer::{Col, ColRef, MatRef};

use crate::datamodel::{EdgeKey, ViewId};
use crate::denoise::{self, AspectRatio, DenoiseResult, Side};
use crate::error::{Error, Result};
use crate::fmgraph::{FactorMatchGraph, FactorNode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleEstimate {
    /// Radians in `[0, pi/2]`.
    pub theta: f64,
    pub cosine: f64,
    pub source_beta: AspectRatio,
    pub source_sv: f64,
}

impl AngleEstimate {
    /// An exactly known angle, not derived from a singular value.
    pub fn exact(theta: f64) -> Self {
        let theta = theta.clamp(0.0, FRAC_PI_2);
        Self {
            theta,
            cosine: theta.cos(),
            source_beta: AspectRatio::new(1.0).expect("valid ratio"),
            source_sv: f64::INFINITY,
        }
    }
}

/// Angle between an empirical singular vector with data singular value
/// `data_sv` and its signal vector.
pub fn estimate_angle(data_sv: f64, beta: AspectRatio, side: Side) -> Result<AngleEstimate> {
    let x = denoise::invert_data_sv(data_sv, beta)?;
    let cosine = denoise::asymptotic_cosine(x, beta, side).clamp(0.0, 1.0);
    Ok(AngleEstimate {
        theta: cosine.acos().clamp(0.0, FRAC_PI_2),
        cosine,
        source_beta: beta,
        source_sv: data_sv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchBounds {
    /// `l = cos(theta1 + theta2)`: smallest `|dot|` for two estimates of one
    /// signal vector.
    pub lower_match: f64,
    /// `u = cos(theta1 - theta2)`, largest `|dot|` for a match. Not used to
    /// reject.
    pub upper_match: f64,
    /// `U = sin(theta1 + theta2) + sin(theta1) sin(theta2)`: largest `|dot|`
    /// for estimates of two orthogonal signal vectors.
    pub upper_nonmatch: f64,
    pub feasible: bool,
}

pub fn match_bounds(theta1: f64, theta2: f64) -> MatchBounds {
    let lower_match = (theta1 + theta2).cos();
    let upper_nonmatch = (theta1 + theta2).sin() + theta1.sin() * theta2.sin();
    MatchBounds {
        lower_match,
        upper_match: (theta1 - theta2).cos(),
        upper_nonmatch,
        feasible: upper_nonmatch <= lower_match,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchDecision {
    pub dot: f64,
    pub lower_match: f64,
    pub upper_nonmatch: f64,
    pub feasible: bool,
    pub matched: bool,
}

/// Rounding error allowed on a dot product of computed unit vectors. Only
/// matters when both angles are near zero and the match bound is 1 - O(eps).
const DOT_SLACK: f64 = 1e-12;

fn decide_from_dot(dot: f64, theta1: f64, theta2: f64) -> MatchDecision {
    let b = match_bounds(theta1, theta2);
    let matched = b.feasible && dot.abs() + DOT_SLACK >= b.lower_match.max(b.upper_nonmatch);
    MatchDecision {
        dot,
        lower_match: b.lower_match,
        upper_nonmatch: b.upper_nonmatch,
        feasible: b.feasible,
        matched,
    }
}

pub fn decide_match(
    a1: ColRef<'_, f64>,
    a2: ColRef<'_, f64>,
    theta1: &AngleEstimate,
    theta2: &AngleEstimate,
) -> Result<MatchDecision> {
    if a1.nrows() != a2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare vectors of length {} and {}",
            a1.nrows(),
            a2.nrows()
        )));
    }
    let dot: f64 = a1.iter().zip(a2.iter()).map(|(x, y)| x * y).sum();
    Ok(decide_from_dot(dot, theta1.theta, theta2.theta))
}

/// Plane rotation turning `u1` towards `u2` by `theta` while fixing the
/// orthogonal complement of their span.
#[derive(Debug, Clone)]
pub struct SimpleRotation {
    u1: Col<f64>,
    u2: Col<f64>,
    sin: f64,
    cos_minus_one: f64,
}

impl SimpleRotation {
    pub fn new(u1: ColRef<'_, f64>, u2: ColRef<'_, f64>, theta: f64) -> Result<Self> {
        if u1.nrows() != u2.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "rotation plane vectors have lengths {} and {}",
                u1.nrows(),
                u2.nrows()
            )));
        }
        let n1 = u1.norm_l2();
        let n2 = u2.norm_l2();
        let dot: f64 = u1.iter().zip(u2.iter()).map(|(x, y)| x * y).sum();
        let tol = 1e-10;
        if (n1 - 1.0).abs() > tol || (n2 - 1.0).abs() > tol || dot.abs() > tol {
            return Err(Error::NotOrthonormal(format!(
                "norms {n1}, {n2}, inner product {dot}"
            )));
        }
        Ok(Self {
            u1: u1.to_owned(),
            u2: u2.to_owned(),
            sin: theta.sin(),
            // cos(t) - 1 without cancellation
            cos_minus_one: -2.0 * (0.5 * theta).sin().powi(2),
        })
    }

    pub fn apply(&self, v: ColRef<'_, f64>) -> Result<Col<f64>> {
        if v.nrows() != self.u1.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "rotation of dimension {} applied to a vector of length {}",
                self.u1.nrows(),
                v.nrows()
            )));
        }
        let d1: f64 = self.u1.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
        let d2: f64 = self.u2.iter().zip(v.iter()).map(|(x, y)| x * y).sum();
        let c1 = -self.sin * d2 + self.cos_minus_one * d1;
        let c2 = self.sin * d1 + self.cos_minus_one * d2;
        Ok(Col::from_fn(v.nrows(), |i| v[i] + c1 * self.u1[i] + c2 * self.u2[i]))
    }
}

/// One individual matrix entering a view graph.
#[derive(Debug, Clone, Copy)]
pub struct IndividualFactors<'a> {
    pub edge: EdgeKey,
    pub result: &'a DenoiseResult,
}

/// Vectors of `view` in a result for `edge`, and the asymptotic side they lie on.
fn view_vectors<'a>(result: &'a DenoiseResult, edge: &EdgeKey, view: ViewId) -> (MatRef<'a, f64>, Side) {
    if edge.row_view == view {
        (result.left_vectors.as_ref(), Side::of_rows(result.n_rows, result.n_cols))
    } else {
        (result.right_vectors.as_ref(), Side::of_cols(result.n_rows, result.n_cols))
    }
}

struct Candidate {
    abs_dot: f64,
    edge_pos: usize,
    k: usize,
    l: usize,
}

/// Builds the view-specific factor match graph of `view`.
///
/// `joint` must hold the denoised joint matrix of `view`, whose rows are the
/// view. Every individual factor is compared to every joint factor; accepted
/// pairs are assigned greedily by decreasing `|dot|`, one-to-one per matrix.
/// Hyperedge `l` of the result is anchored at joint column `l`; individual
/// factors left without a partner become unanchored singletons.
pub fn build_view_graph(
    view: ViewId,
    joint: &DenoiseResult,
    individuals: &[IndividualFactors<'_>],
) -> Result<FactorMatchGraph> {
    let joint_side = Side::of_rows(joint.n_rows, joint.n_cols);
    let joint_angles = joint
        .data_values
        .iter()
        .map(|&y| estimate_angle(y, joint.aspect, joint_side))
        .collect::<Result<Vec<_>>>()?;

    let mut members: Vec<Vec<FactorNode>> = vec![Vec::new(); joint.rank];
    let mut unanchored = Vec::new();

    for (edge_pos, ind) in individuals.iter().enumerate() {
        let edge = ind.edge;
        if !edge.involves(view) {
            return Err(Error::Internal(format!(
                "matrix #{}-#{} does not involve view #{}",
                edge.row_view.0, edge.col_view.0, view.0
            )));
        }
        let (vectors, side) = view_vectors(ind.result, &edge, view);
        if vectors.nrows() != joint.left_vectors.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "view #{} has {} rows in the joint matrix but {} in matrix #{}-#{}",
                view.0,
                joint.left_vectors.nrows(),
                vectors.nrows(),
                edge.row_view.0,
                edge.col_view.0
            )));
        }
        let mut candidates = Vec::new();
        for (k, &y) in ind.result.data_values.iter().enumerate() {
            let angle = estimate_angle(y, ind.result.aspect, side)?;
            for (l, jangle) in joint_angles.iter().enumerate() {
                let d = decide_match(vectors.col(k), joint.left_vectors.col(l), &angle, jangle)?;
                if d.matched {
                    candidates.push(Candidate {
                        abs_dot: d.dot.abs(),
                        edge_pos,
                        k,
                        l,
                    });
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.abs_dot
                .partial_cmp(&a.abs_dot)
                .unwrap_or(Ordering::Equal)
                .then(a.edge_pos.cmp(&b.edge_pos))
                .then(a.k.cmp(&b.k))
                .then(a.l.cmp(&b.l))
        });
        let mut used_k = vec![false; ind.result.rank];
        let mut used_l = vec![false; joint.rank];
        for c in candidates {
            if used_k[c.k] || used_l[c.l] {
                continue;
            }
            used_k[c.k] = true;
            used_l[c.l] = true;
            members[c.l].push(FactorNode {
                edge,
                factor_index: c.k,
                home_view: view,
            });
        }
        for (k, used) in used_k.iter().enumerate() {
            if !used {
                unanchored.push(FactorNode {
                    edge,
                    factor_index: k,
                    home_view: view,
                });
            }
        }
    }

    let mut graph = FactorMatchGraph::new(Some(view));
    for (l, nodes) in members.iter().enumerate() {
        if !nodes.is_empty() {
            graph.add_hyperedge(nodes, Some(l));
        }
    }
    for node in unanchored {
        graph.add_hyperedge(&[node], None);
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_6};

    fn beta(b: f64) -> AspectRatio {
        AspectRatio::new(b).unwrap()
    }

    fn unit(n: usize, i: usize) -> Col<f64> {
        Col::from_fn(n, |k| if k == i { 1.0 } else { 0.0 })
    }

    #[test]
    fn angle_examples() {
        // x = 2 at beta = 1/4 gives y = sqrt((2.5)(2 + 1/8))
        let y = (2.5f64 * 2.125).sqrt();
        let a = estimate_angle(y, beta(0.25), Side::Right).unwrap();
        assert!((a.cosine - (15.75f64 / 20.0).sqrt()).abs() < 1e-12);
        assert!((a.theta - 0.479_096_089_373_137).abs() < 1e-12);
        assert!((a.theta.cos() - a.cosine).abs() < 1e-12);

        // formula composition at beta = 1, y = 2.5
        let x = (0.5 * (6.25 - 2.0 + (4.25f64 * 4.25 - 4.0).sqrt())).sqrt();
        let expect = ((x.powi(4) - 1.0) / (x.powi(4) + x * x)).sqrt().acos();
        let a = estimate_angle(2.5, beta(1.0), Side::Left).unwrap();
        assert!((a.theta - expect).abs() < 1e-12);

        let strong = estimate_angle(1e6, beta(0.3), Side::Left).unwrap();
        assert!(strong.theta < 1e-5);
        assert!(matches!(
            estimate_angle(1.5, beta(0.3), Side::Left),
            Err(Error::Subcritical { .. })
        ));
    }

    #[test]
    fn bound_examples() {
        let b = match_bounds(0.0, 0.0);
        assert_eq!((b.lower_match, b.upper_nonmatch, b.feasible), (1.0, 0.0, true));

        let b = match_bounds(FRAC_PI_4, 0.0);
        assert!((b.lower_match - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((b.upper_nonmatch - 0.5f64.sqrt()).abs() < 1e-15);

        let b = match_bounds(FRAC_PI_6, FRAC_PI_6);
        assert!((b.lower_match - 0.5).abs() < 1e-15);
        assert!((b.upper_nonmatch - (3f64.sqrt() / 2.0 + 0.25)).abs() < 1e-15);
        assert!(!b.feasible);
        assert!((match_bounds(0.3, 0.1).upper_match - 0.2f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn decision_examples() {
        let t = AngleEstimate::exact(0.2);
        let e0 = unit(3, 0);
        let d = decide_match(e0.as_ref(), e0.as_ref(), &t, &t).unwrap();
        assert!(d.matched);
        let d = decide_match(e0.as_ref(), unit(3, 1).as_ref(), &t, &t).unwrap();
        assert!(!d.matched);

        let at = |c: f64| Col::from_fn(2, |i| if i == 0 { c } else { (1.0 - c * c).sqrt() });
        let d = decide_match(at(0.95).as_ref(), e0.subrows(0, 2), &t, &t).unwrap();
        assert!((d.lower_match - 0.4f64.cos()).abs() < 1e-15);
        assert!((d.upper_nonmatch - (0.4f64.sin() + 0.2f64.sin().powi(2))).abs() < 1e-15);
        assert!(d.matched);
        let d = decide_match(at(0.90).as_ref(), e0.subrows(0, 2), &t, &t).unwrap();
        assert!(!d.matched);

        assert!(decide_match(e0.as_ref(), unit(4, 0).as_ref(), &t, &t).is_err());
    }

    #[test]
    fn rotation_properties() {
        let (u1, u2) = (unit(4, 0), unit(4, 2));
        let r = SimpleRotation::new(u1.as_ref(), u2.as_ref(), 0.7).unwrap();
        let v = r.apply(u1.as_ref()).unwrap();
        assert!((v[0] - 0.7f64.cos()).abs() < 1e-15);
        assert!((v[2] - 0.7f64.sin()).abs() < 1e-15);
        let w = Col::from_fn(4, |i| [0.0, 3.0, 0.0, -1.0][i]);
        assert_eq!(r.apply(w.as_ref()).unwrap(), w);
        assert!(SimpleRotation::new(u1.as_ref(), u1.as_ref(), 0.1).is_err());
    }

    fn result_from(vectors: &[Col<f64>], data_values: &[f64], other_dim: usize, aspect: f64) -> DenoiseResult {
        let n = vectors[0].nrows();
        let r = vectors.len();
        let left = faer::Mat::from_fn(n, r, |i, j| vectors[j][i]);
        let right = faer::Mat::from_fn(other_dim, r, |i, j| if i == j { 1.0 } else { 0.0 });
        DenoiseResult {
            shrunk_values: data_values.to_vec(),
            data_values: data_values.to_vec(),
            rank: r,
            left_vectors: left,
            right_vectors: right,
            noise_scale: Some(1.0),
            aspect: beta(aspect),
            n_rows: n,
            n_cols: other_dim,
            spectrum: data_values.to_vec(),
        }
    }

    #[test]
    fn noiseless_factors_match_their_joint_partner() {
        let n = 8;
        let e = |i| unit(n, i);
        let joint = result_from(&[e(0), e(1), e(2)], &[50.0, 40.0, 30.0], 12, 8.0 / 12.0);
        let a = result_from(&[e(1), e(0)], &[60.0, 55.0], 6, 0.75);
        let b = result_from(&[e(2)], &[45.0], 6, 0.75);
        let c = result_from(&[e(5)], &[45.0], 6, 0.75);
        let ea = EdgeKey::new(ViewId(0), ViewId(1), 0);
        let eb = EdgeKey::new(ViewId(0), ViewId(2), 0);
        let ec = EdgeKey::new(ViewId(0), ViewId(3), 0);
        let g = build_view_graph(
            ViewId(0),
            &joint,
            &[
                IndividualFactors { edge: ea, result: &a },
                IndividualFactors { edge: eb, result: &b },
                IndividualFactors { edge: ec, result: &c },
            ],
        )
        .unwrap();
        let h = g.hyperedges();
        assert_eq!(h.len(), 4);
        assert_eq!(h[0].anchor, Some(0));
        assert!(h[0].members.iter().all(|k| k.edge == ea && k.factor_index == 1));
        assert_eq!(h[2].anchor, Some(2));
        assert_eq!(h[3].anchor, None);
        assert_eq!(h[3].members.first().unwrap().edge, ec);
    }

    #[test]
    fn conflicting_candidates_are_assigned_one_to_one() {
        let n = 4;
        // both individual factors sit near the same joint vector
        let s = 0.02f64;
        let v1 = Col::from_fn(n, |i| [1.0, 0.0, 0.0, 0.0][i]);
        let v2 = Col::from_fn(n, |i| [(1.0 - s * s).sqrt(), s, 0.0, 0.0][i]);
        let joint = result_from(&[unit(n, 0)], &[1e4], 20, 0.2);
        let ind = result_from(&[v2, v1], &[1e4, 1e4], 20, 0.2);
        let edge = EdgeKey::new(ViewId(0), ViewId(1), 0);
        let g = build_view_graph(ViewId(0), &joint, &[IndividualFactors { edge, result: &ind }]).unwrap();
        let h = g.hyperedges();
        assert_eq!(h.len(), 2);
        assert_eq!(h[0].members.first().unwrap().factor_index, 1);
        assert_eq!(h[1].anchor, None);
    }
}
