//! Synthetic data with planted shared structure, and scoring of recovered
//! rank partitions.

use std::collections::BTreeMap;
use std::io::Write;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::datamodel::{EdgeKey, ObservedMatrix, ViewId, ViewLayout};
use crate::error::{Error, Result};
use crate::fmgraph::SharingClass;
use crate::linalg;
use crate::pipeline::{self, FitOptions};
use crate::reconstruct::{IntegrationResult, PhaseTimings};

/// Noise level of generated matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// `||X_ij||_F / (sigma sqrt(p_i p_j)) = snr`; infinite means no noise.
    Snr(f64),
    /// `sigma = 1 / sqrt(max(p_i, p_j))`, so planted values are directly on
    /// the unit-noise scale.
    UnitModel,
}

#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    /// View dimensions already include `dim_scale`.
    pub layout: ViewLayout,
    pub planted_values: BTreeMap<EdgeKey, Vec<f64>>,
    pub noise: Noise,
    pub dim_scale: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(
        layout: ViewLayout,
        planted_values: BTreeMap<EdgeKey, Vec<f64>>,
        noise: Noise,
        dim_scale: usize,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            layout,
            planted_values,
            noise,
            dim_scale,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rank(&self) -> usize {
        self.planted_values.values().next().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let r = self.rank();
        if self.dim_scale == 0 {
            return Err(Error::InvalidScenario("dimension scale must be positive".into()));
        }
        if let Noise::Snr(s) = self.noise {
            if !(s > 0.0) {
                return Err(Error::InvalidScenario(format!("SNR must be positive, got {s}")));
            }
        }
        for edge in self.layout.edges() {
            let x = self
                .planted_values
                .get(edge)
                .ok_or_else(|| Error::InvalidScenario(format!("no values for {}", self.layout.describe(edge))))?;
            if x.len() != r {
                return Err(Error::InvalidScenario("planted vectors differ in length".into()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidScenario("planted values must be finite".into()));
            }
        }
        if self.planted_values.len() != self.layout.edges().len() {
            return Err(Error::InvalidScenario("values given for undeclared matrices".into()));
        }
        if let Some(v) = self.layout.view_ids().find(|v| self.layout.dim(*v) < r) {
            return Err(Error::InvalidScenario(format!(
                "rank {r} exceeds the dimension of view `{}`",
                self.layout.view_name(v)
            )));
        }
        self.layout.check_connected()?;
        Ok(())
    }
}

/// Generated matrices together with the hidden truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub matrices: Vec<ObservedMatrix>,
    pub factors: BTreeMap<ViewId, Mat<f64>>,
    pub signals: BTreeMap<EdgeKey, Mat<f64>>,
    pub noise_sd: BTreeMap<EdgeKey, f64>,
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent generator for a named stream: ChaCha8 seeded with
/// `seed ^ fnv1a(label)`.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label))
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(rows, cols);
    // row-major fill so that the stream does not depend on storage order
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = StandardNormal.sample(rng);
        }
    }
    m
}

/// Orthonormal `p x r` factors from the QR factorization of a Gaussian matrix.
pub fn random_orthonormal(p: usize, r: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
    if r == 0 {
        return Mat::zeros(p, 0);
    }
    let g = gaussian(p, r, rng);
    g.qr().compute_thin_Q()
}

pub fn generate(spec: &ScenarioSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let layout = &spec.layout;
    let r = spec.rank();
    let factors: BTreeMap<ViewId, Mat<f64>> = layout
        .view_ids()
        .map(|v| {
            let mut rng = stream_rng(spec.seed, &format!("U:{}", layout.view_name(v)));
            (v, random_orthonormal(layout.dim(v), r, &mut rng))
        })
        .collect();

    let mut matrices = Vec::new();
    let mut signals = BTreeMap::new();
    let mut noise_sd = BTreeMap::new();
    for edge in layout.edges() {
        let x = &spec.planted_values[edge];
        let ui = &factors[&edge.row_view];
        let uj = &factors[&edge.col_view];
        let scaled = Mat::from_fn(ui.nrows(), r, |i, l| ui[(i, l)] * x[l]);
        let signal = linalg::product(scaled.as_ref(), uj.transpose());
        let (p_i, p_j) = (ui.nrows() as f64, uj.nrows() as f64);
        let sigma = match spec.noise {
            Noise::Snr(snr) if snr.is_infinite() => 0.0,
            Noise::Snr(snr) => linalg::frobenius_norm(signal.as_ref()) / (snr * (p_i * p_j).sqrt()),
            Noise::UnitModel => p_i.max(p_j).sqrt().recip(),
        };
        let mut data = signal.clone();
        if sigma > 0.0 {
            let label = format!(
                "Z:{}:{}:{}",
                layout.view_name(edge.row_view),
                layout.view_name(edge.col_view),
                edge.layer
            );
            let mut rng = stream_rng(spec.seed, &label);
            for i in 0..data.nrows() {
                for j in 0..data.ncols() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data[(i, j)] += sigma * z;
                }
            }
        }
        matrices.push(ObservedMatrix::new(*edge, data));
        signals.insert(*edge, signal);
        noise_sd.insert(*edge, sigma);
    }
    Ok(GeneratedData {
        matrices,
        factors,
        signals,
        noise_sd,
    })
}

fn scenario_layout(dims: &[usize], edges: &[(&str, &str)], dim_scale: usize) -> ViewLayout {
    let mut layout = ViewLayout::new();
    for (i, d) in dims.iter().enumerate() {
        layout.add_view((i + 1).to_string(), d * dim_scale).expect("distinct views");
    }
    for (a, b) in edges {
        layout.add_edge(a, b, 0).expect("valid edge");
    }
    layout
}

/// The three evaluation scenarios with SNR 1.
pub fn builtin_scenario(which: u32, dim_scale: usize, seed: u64) -> Result<ScenarioSpec> {
    let (dims, edges, values): (&[usize], &[(&str, &str)], Vec<Vec<f64>>) = match which {
        1 => (
            &[100, 25, 25],
            &[("1", "2"), ("1", "3")],
            vec![vec![6.0, 7.0, 0.0, 8.0], vec![5.0, 5.5, 6.0, 0.0]],
        ),
        2 => (
            &[100, 25, 25, 25],
            &[("1", "2"), ("1", "3"), ("1", "4")],
            vec![
                vec![1.5, 1.3, 0.9, 0.6, 0.0, 0.0, 0.0],
                vec![1.5, 1.3, 0.0, 0.0, 0.8, 0.5, 0.0],
                vec![1.5, 1.3, 1.0, 0.0, 0.0, 0.0, 0.7],
            ],
        ),
        3 => (
            &[100, 100, 100],
            &[("1", "2"), ("1", "3"), ("2", "3")],
            vec![
                vec![0.0, 3.5, 2.5, 0.0, 1.9, 0.0],
                vec![4.9, 3.5, 2.5, 0.0, 0.0, 2.2],
                vec![4.9, 3.5, 0.0, 2.5, 0.0, 0.0],
            ],
        ),
        other => return Err(Error::InvalidScenario(format!("unknown scenario {other}; expected 1, 2 or 3"))),
    };
    if dim_scale == 0 {
        return Err(Error::InvalidScenario("dimension scale must be positive".into()));
    }
    let layout = scenario_layout(dims, edges, dim_scale);
    let planted = edges
        .iter()
        .zip(values)
        .map(|((a, b), x)| {
            let key = EdgeKey::new(
                layout.view_id(a).expect("declared"),
                layout.view_id(b).expect("declared"),
                0,
            );
            (key, x)
        })
        .collect();
    ScenarioSpec::new(layout, planted, Noise::Snr(1.0), dim_scale, seed)
}

/// Sharing classes of the planted components, read off the zero patterns of
/// the planted values.
pub fn true_partition(spec: &ScenarioSpec) -> BTreeMap<SharingClass, usize> {
    let mut out = BTreeMap::new();
    for l in 0..spec.rank() {
        let edges = spec
            .planted_values
            .iter()
            .filter(|(_, x)| x[l] != 0.0)
            .map(|(e, _)| *e)
            .collect();
        if spec.planted_values.values().all(|x| x[l] == 0.0) {
            continue;
        }
        *out.entry(SharingClass::from_edges(&edges, &spec.layout)).or_insert(0) += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveryScore {
    pub true_partition: BTreeMap<SharingClass, usize>,
    pub estimated_partition: BTreeMap<SharingClass, usize>,
    pub exact_match: bool,
}

pub fn score(spec: &ScenarioSpec, result: &IntegrationResult) -> Result<RecoveryScore> {
    let same_views = spec.layout.n_views() == result.layout.n_views()
        && spec
            .layout
            .view_ids()
            .all(|v| spec.layout.dim(v) == result.layout.dim(v) && spec.layout.view_name(v) == result.layout.view_name(v));
    if !same_views || spec.layout.edges() != result.layout.edges() {
        return Err(Error::InvalidScenario("result was fitted on a different layout".into()));
    }
    let truth = true_partition(spec);
    let estimated = result.class_counts();
    Ok(RecoveryScore {
        exact_match: truth == estimated,
        true_partition: truth,
        estimated_partition: estimated,
    })
}

/// Per-class median over replicates, counting an absent class as zero.
/// Classes whose median is zero are omitted.
pub fn median_partition(partitions: &[BTreeMap<SharingClass, usize>]) -> BTreeMap<SharingClass, usize> {
    let mut classes: Vec<&SharingClass> = partitions.iter().flat_map(|p| p.keys()).collect();
    classes.sort();
    classes.dedup();
    let mut out = BTreeMap::new();
    for c in classes {
        let mut counts: Vec<usize> = partitions.iter().map(|p| p.get(c).copied().unwrap_or(0)).collect();
        counts.sort_unstable();
        let m = counts[(counts.len() - 1) / 2];
        if m > 0 {
            out.insert(c.clone(), m);
        }
    }
    out
}

/// Renders a partition as `label=count` pairs joined by `;`.
pub fn partition_label(partition: &BTreeMap<SharingClass, usize>, layout: &ViewLayout) -> String {
    partition
        .iter()
        .map(|(c, n)| format!("{}={n}", c.label(layout)))
        .collect::<Vec<_>>()
        .join(";")
}

#[derive(Debug, Clone)]
pub struct ReplicateRecord {
    pub scenario: u32,
    pub dim_scale: usize,
    pub seed: u64,
    pub timings: PhaseTimings,
    pub score: RecoveryScore,
    pub partition: String,
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scenario: u32,
    dim_scale: usize,
    seed: u64,
    standardize_ms: f64,
    svd_pass1_ms: f64,
    assemble_ms: f64,
    svd_pass2_ms: f64,
    matching_ms: f64,
    merging_ms: f64,
    reconstruct_ms: f64,
    total_ms: f64,
    n_global: usize,
    n_partial: usize,
    n_individual: usize,
    partition: &'a str,
    exact_match: bool,
}

/// Generates and fits one replicate of a built-in scenario.
pub fn run_replicate(scenario: u32, dim_scale: usize, seed: u64) -> Result<ReplicateRecord> {
    let spec = builtin_scenario(scenario, dim_scale, seed)?;
    let data = generate(&spec)?;
    let result = pipeline::fit(&spec.layout, data.matrices, &FitOptions::default())?;
    let score = score(&spec, &result)?;
    Ok(ReplicateRecord {
        scenario,
        dim_scale,
        seed,
        timings: result.diagnostics.timings.clone(),
        partition: partition_label(&score.estimated_partition, &spec.layout),
        score,
    })
}

/// Writes replicate rows as CSV; `header` controls whether the header line is
/// emitted (it should be skipped when appending to a non-empty file).
pub fn write_records<W: Write>(writer: W, records: &[ReplicateRecord], header: bool) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(header).from_writer(writer);
    for r in records {
        let count = |kind: &str| {
            r.score
                .estimated_partition
                .iter()
                .filter(|(c, _)| c.kind() == kind)
                .map(|(_, n)| n)
                .sum()
        };
        let t = &r.timings;
        wtr.serialize(CsvRow {
            scenario: r.scenario,
            dim_scale: r.dim_scale,
            seed: r.seed,
            standardize_ms: t.standardize_ms,
            svd_pass1_ms: t.svd_pass1_ms,
            assemble_ms: t.assemble_ms,
            svd_pass2_ms: t.svd_pass2_ms,
            matching_ms: t.matching_ms,
            merging_ms: t.merging_ms,
            reconstruct_ms: t.reconstruct_ms,
            total_ms: t.total_ms,
            n_global: count("global"),
            n_partial: count("partial"),
            n_individual: count("individual"),
            partition: &r.partition,
            exact_match: r.score.exact_match,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub const CSV_TIMING_COLUMNS: [&str; 8] = [
    "standardize_ms",
    "svd_pass1_ms",
    "assemble_ms",
    "svd_pass2_ms",
    "matching_ms",
    "merging_ms",
    "reconstruct_ms",
    "total_ms",
];
