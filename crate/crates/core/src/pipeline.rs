//! End-to-end fit of a matrix collection.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;

use crate::datamodel::{self, Centering, EdgeKey, ObservedMatrix, ViewId, ViewLayout};
use crate::denoise::{self, DenoiseResult};
use crate::error::Result;
use crate::fmgraph::{self, NodeKey};
use crate::jointview::{self, JointAssembly};
use crate::matching::{self, IndividualFactors};
use crate::reconstruct::{self, AssemblyInputs, IntegrationResult, JointDiagnostics, MatrixDiagnostics, PhaseTimings};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitOptions {
    /// Optional centering applied before anything else.
    pub centering: Option<Centering>,
    /// Estimate the noise level of each matrix and rescale it to the
    /// unit-noise model. Disable only for inputs that are already scaled.
    pub standardize: bool,
    /// Keep individual factors that matched no joint factor in either of
    /// their views as factors of their own. Off by default: such factors are
    /// almost always noise values just above the bulk edge.
    pub keep_unmatched: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            centering: None,
            standardize: true,
            keep_unmatched: false,
        }
    }
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

pub fn fit(layout: &ViewLayout, matrices: Vec<ObservedMatrix>, options: &FitOptions) -> Result<IntegrationResult> {
    let total = Instant::now();
    let mut timings = PhaseTimings::default();
    datamodel::validate_layout(layout, &matrices)?;

    let mut matrices = matrices;
    if let Some(mode) = options.centering {
        for m in &mut matrices {
            datamodel::center(m.data_mut(), mode);
        }
    }

    let t = Instant::now();
    matrices
        .par_iter_mut()
        .map(|m| m.compute_spectrum().map(|_| ()))
        .collect::<Result<()>>()?;
    timings.svd_pass1_ms += ms(t);

    let t = Instant::now();
    let noise: BTreeMap<EdgeKey, Option<f64>> = matrices
        .iter()
        .map(|m| {
            let (r, c) = layout.shape(&m.key);
            let s = m.spectrum.as_deref().expect("computed above");
            (m.key, denoise::estimate_noise_scale(s, r, c).ok())
        })
        .collect();
    let standardized: BTreeMap<EdgeKey, ObservedMatrix> = if options.standardize {
        matrices
            .into_par_iter()
            .map(|m| datamodel::standardize_owned(m).map(|s| (s.key, s)))
            .collect::<Result<_>>()?
    } else {
        matrices.into_iter().map(|m| (m.key, m)).collect()
    };
    let scales: BTreeMap<EdgeKey, f64> = standardized
        .iter()
        .map(|(k, m)| (*k, m.scale_applied.unwrap_or(1.0)))
        .collect();
    timings.standardize_ms = ms(t);

    let t = Instant::now();
    let views: Vec<ViewId> = layout.view_ids().collect();
    let assemblies: Vec<JointAssembly> = views
        .par_iter()
        .map(|v| jointview::assemble_joint(layout, &standardized, *v))
        .collect::<Result<_>>()?;
    timings.assemble_ms = ms(t);

    let t = Instant::now();
    let joint_spectra: Vec<Option<Vec<f64>>> = assemblies
        .par_iter()
        .map(|a| {
            if a.is_pass_through() {
                Ok(None)
            } else {
                denoise::spectrum_of(a.matrix.as_ref()).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    timings.svd_pass1_ms += ms(t);

    let t = Instant::now();
    let individuals: BTreeMap<EdgeKey, DenoiseResult> = standardized
        .par_iter()
        .map(|(k, m)| {
            let spectrum = m.spectrum.clone().expect("cached by standardization");
            denoise::denoise_with_spectrum(m.data().as_ref(), spectrum).map(|r| (*k, r))
        })
        .collect::<Result<_>>()?;
    let joints: BTreeMap<ViewId, DenoiseResult> = assemblies
        .par_iter()
        .zip(joint_spectra)
        .map(|(a, spectrum)| {
            let result = match spectrum {
                None => {
                    let src = a.source_edges[0];
                    let ind = &individuals[&src.edge];
                    if src.transposed {
                        ind.transposed()
                    } else {
                        ind.clone()
                    }
                }
                Some(s) => denoise::denoise_with_spectrum(a.matrix.as_ref(), s)?,
            };
            Ok((a.view, result))
        })
        .collect::<Result<_>>()?;
    timings.svd_pass2_ms = ms(t);

    let t = Instant::now();
    let view_graphs: Vec<fmgraph::FactorMatchGraph> = views
        .par_iter()
        .map(|v| {
            let inds: Vec<IndividualFactors<'_>> = layout
                .edges_of(*v)
                .map(|edge| IndividualFactors {
                    edge,
                    result: &individuals[&edge],
                })
                .collect();
            matching::build_view_graph(*v, &joints[v], &inds)
        })
        .collect::<Result<_>>()?;
    timings.matching_ms = ms(t);

    let t = Instant::now();
    let (mut merged, stats) = fmgraph::merge_all_with_stats(view_graphs.clone());
    let mut unmatched = Vec::new();
    if !options.keep_unmatched {
        let anchored: BTreeSet<NodeKey> = view_graphs
            .iter()
            .flat_map(|g| g.hyperedges().iter().filter(|h| h.anchor.is_some()))
            .flat_map(|h| h.members.iter().copied())
            .collect();
        unmatched = merged.retain_hyperedges(|h| h.members.iter().any(|k| anchored.contains(k)));
    }
    timings.merging_ms = ms(t);

    let t = Instant::now();
    let mut result = reconstruct::assemble_result(
        AssemblyInputs {
            layout,
            view_graphs: &view_graphs,
            joints: &joints,
            individuals: &individuals,
            scales: &scales,
        },
        merged,
        stats,
    )?;
    timings.reconstruct_ms = ms(t);

    let diag = &mut result.diagnostics;
    for h in unmatched {
        for k in h.members {
            log::info!(
                "dropping factor {} of {}: no joint factor matched it",
                k.factor_index,
                layout.describe(&k.edge)
            );
            diag.unmatched.push(reconstruct::FactorRef {
                row_view: layout.view_name(k.edge.row_view).to_string(),
                col_view: layout.view_name(k.edge.col_view).to_string(),
                layer: k.edge.layer,
                factor_index: k.factor_index,
            });
        }
    }
    for edge in layout.edges() {
        let ind = &individuals[edge];
        diag.matrices.push(MatrixDiagnostics {
            row_view: layout.view_name(edge.row_view).to_string(),
            col_view: layout.view_name(edge.col_view).to_string(),
            layer: edge.layer,
            rows: ind.n_rows,
            cols: ind.n_cols,
            noise_scale: noise[edge],
            beta: ind.aspect.value(),
            rank: ind.rank,
            scale: scales[edge],
        });
    }
    for a in &assemblies {
        let j = &joints[&a.view];
        diag.joints.push(JointDiagnostics {
            view: layout.view_name(a.view).to_string(),
            rows: a.n_rows,
            cols: a.n_cols,
            beta: j.aspect.value(),
            rank: j.rank,
            pass_through: a.is_pass_through(),
        });
    }
    timings.total_ms = ms(total);
    diag.timings = timings;
    Ok(result)
}
