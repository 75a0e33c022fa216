//! Grid-sweep experiment harness: run the geodesic / multiplier / Goh
//! / classification pipeline over a box of targets and aggregate the
//! per-sample diagnostics into a reproducible report.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geodesic::{solve_geodesic, GeodesicOpts};
use crate::nonsmooth::{classify_point, ClassifyOpts, LipschitzClass};
use crate::srgeom::PolyFrame;
use crate::{Error, Result};

/// Cap rayon's global pool from SRLAB_THREADS (first call wins).
pub fn init_thread_cap() {
    if let Ok(v) = std::env::var("SRLAB_THREADS") {
        if let Ok(k) = v.trim().parse::<usize>() {
            if k >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Solver knobs carried by a probe configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub segments: usize,
    pub restarts: usize,
    pub tol: f64,
    pub stencil_radius: f64,
    pub stencil_restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            segments: 32,
            restarts: 4,
            tol: 1e-7,
            stencil_radius: 0.08,
            stencil_restarts: 2,
        }
    }
}

/// A probe run: frame, start point, sampling box and shape, solver
/// options, tolerances, seed and output paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// preset name, or inline frame JSON under `frame`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<serde_json::Value>,
    pub x0: Vec<f64>,
    pub box_lo: Vec<f64>,
    pub box_hi: Vec<f64>,
    pub grid_shape: Vec<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_blowup")]
    pub blowup: f64,
    #[serde(default = "default_goh_tol")]
    pub goh_tol: f64,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_out: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_out: Option<String>,
}

fn default_blowup() -> f64 {
    crate::flow::DEFAULT_BLOWUP
}

fn default_goh_tol() -> f64 {
    crate::GOH_TOL
}

fn default_seed() -> u64 {
    1234
}

impl ProbeConfig {
    pub fn frame(&self) -> Result<PolyFrame> {
        if let Some(name) = &self.preset {
            return PolyFrame::preset(name);
        }
        if let Some(raw) = &self.frame {
            return PolyFrame::from_json(&raw.to_string());
        }
        Err(Error::InvalidFrame("config needs `preset` or `frame`".into()))
    }

    fn validate(&self) -> Result<()> {
        let n = self.x0.len();
        if self.box_lo.len() != n || self.box_hi.len() != n || self.grid_shape.len() != n {
            return Err(Error::DimensionMismatch(
                "x0, box_lo, box_hi and grid_shape must share the dimension".into(),
            ));
        }
        if self.grid_shape.iter().any(|&g| g == 0) {
            return Err(Error::PreconditionViolated("grid shape entries must be positive".into()));
        }
        if self
            .box_lo
            .iter()
            .zip(&self.box_hi)
            .any(|(lo, hi)| !(hi > lo))
        {
            return Err(Error::PreconditionViolated("box must be nondegenerate".into()));
        }
        Ok(())
    }

    /// Deterministic sample list: row-major grid over the box, with
    /// optional seeded jitter.
    pub fn samples(&self) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        let n = self.x0.len();
        let total: usize = self.grid_shape.iter().product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rest = flat;
            let mut y = DVector::zeros(n);
            for d in (0..n).rev() {
                let g = self.grid_shape[d];
                let i = rest % g;
                rest /= g;
                let t = if g == 1 { 0.5 } else { i as f64 / (g - 1) as f64 };
                y[d] = self.box_lo[d] + (self.box_hi[d] - self.box_lo[d]) * t;
            }
            if self.jitter > 0.0 {
                use rand::Rng;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    self.seed ^ (flat as u64).wrapping_mul(0x9E3779B97F4A7C15),
                );
                for d in 0..n {
                    let span = (self.box_hi[d] - self.box_lo[d]) * self.jitter;
                    y[d] += rng.gen_range(-0.5..0.5) * span;
                }
            }
            out.push(y);
        }
        Ok(out)
    }

    pub fn geodesic_opts(&self) -> GeodesicOpts {
        GeodesicOpts {
            segments: self.solver.segments,
            restarts: self.solver.restarts,
            tol: self.solver.tol,
            seed: self.seed,
            blowup: self.blowup,
            goh_tol: self.goh_tol,
            ..Default::default()
        }
    }
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

/// One probed target. Failed solves carry `None` numeric fields and
/// the `failed` class.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeRow {
    pub y: Vec<f64>,
    pub distance: Option<f64>,
    pub corank: Option<usize>,
    pub goh_rank: Option<usize>,
    pub goh_residual: Option<f64>,
    pub multiplier_norm: Option<f64>,
    pub lipschitz_class: String,
}

/// Aggregates over the successful samples.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeAggregates {
    pub n_samples: usize,
    pub n_failed: usize,
    pub fraction_suspected_nonlipschitz: f64,
    pub fraction_corank_positive: f64,
    /// suspected-nonlipschitz samples with no Goh abnormal evidence
    pub consistency_violations: usize,
}

/// Full report: per-sample rows plus aggregates and the config echo.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    pub aggregates: ProbeAggregates,
    pub config: ProbeConfig,
}

/// Run the probe: per sample solve_geodesic -> multiplier -> Goh
/// diagnostics -> classification, deterministically parallel (stable
/// ordering by sample index).
pub fn run_probe(config: &ProbeConfig) -> Result<ProbeReport> {
    init_thread_cap();
    let frame = config.frame()?;
    let x0 = DVector::from_vec(config.x0.clone());
    let samples = config.samples()?;
    let gopts = config.geodesic_opts();
    let copts = ClassifyOpts {
        solver: gopts.clone(),
        stencil_restarts: config.solver.stencil_restarts,
        stencil_radius: config.solver.stencil_radius,
        ..Default::default()
    };

    let rows: Vec<ProbeRow> = samples
        .par_iter()
        .map(|y| {
            let solved = solve_geodesic(&frame, &x0, y, &gopts);
            match solved {
                Ok(res) => {
                    let class = classify_point(&frame, &x0, y, &copts)
                        .map(|est| est.lipschitz_class)
                        .unwrap_or(LipschitzClass::Undecided);
                    let multiplier_norm = res
                        .multiplier
                        .as_ref()
                        .map(|p| p.norm())
                        .unwrap_or(f64::NAN);
                    ProbeRow {
                        y: y.iter().copied().collect(),
                        distance: Some(res.distance),
                        corank: Some(res.corank),
                        goh_rank: Some(res.goh.goh_rank),
                        goh_residual: Some(res.goh.normalized),
                        multiplier_norm: multiplier_norm.is_finite().then_some(multiplier_norm),
                        lipschitz_class: class.to_string(),
                    }
                }
                Err(_) => ProbeRow {
                    y: y.iter().copied().collect(),
                    distance: None,
                    corank: None,
                    goh_rank: None,
                    goh_residual: None,
                    multiplier_norm: None,
                    lipschitz_class: "failed".into(),
                },
            }
        })
        .collect();

    let ok_rows: Vec<&ProbeRow> = rows.iter().filter(|r| r.distance.is_some()).collect();
    let n_ok = ok_rows.len();
    let suspected = ok_rows
        .iter()
        .filter(|r| r.lipschitz_class == "suspected-nonlipschitz")
        .count();
    let corank_pos = ok_rows.iter().filter(|r| r.corank.unwrap_or(0) > 0).count();
    let violations = ok_rows
        .iter()
        .filter(|r| {
            r.lipschitz_class == "suspected-nonlipschitz" && r.goh_rank.unwrap_or(0) == 0
        })
        .count();
    let aggregates = ProbeAggregates {
        n_samples: rows.len(),
        n_failed: rows.len() - n_ok,
        fraction_suspected_nonlipschitz: ratio(suspected, n_ok),
        fraction_corank_positive: ratio(corank_pos, n_ok),
        consistency_violations: violations,
    };
    Ok(ProbeReport { rows, aggregates, config: config.clone() })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

// ---------------------------------------------------------------------------
// Export / import
// ---------------------------------------------------------------------------

fn opt_cell<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| format!("{x}")).unwrap_or_default()
}

impl ProbeReport {
    /// CSV schema: y_1..y_n, distance, corank, goh_rank, goh_residual,
    /// multiplier_norm, lipschitz_class.
    pub fn to_csv(&self) -> String {
        let n = self.config.x0.len();
        let mut out = String::new();
        let mut header: Vec<String> = (1..=n).map(|i| format!("y_{i}")).collect();
        header.extend(
            ["distance", "corank", "goh_rank", "goh_residual", "multiplier_norm", "lipschitz_class"]
                .map(String::from),
        );
        out.push_str(&header.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut cells: Vec<String> = row.y.iter().map(|v| format!("{v}")).collect();
            cells.push(opt_cell(&row.distance));
            cells.push(opt_cell(&row.corank));
            cells.push(opt_cell(&row.goh_rank));
            cells.push(opt_cell(&row.goh_residual));
            cells.push(opt_cell(&row.multiplier_norm));
            cells.push(row.lipschitz_class.clone());
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ProbeReport> {
        Ok(serde_json::from_str(text)?)
    }

    /// Write the report in the requested format.
    pub fn export(&self, format: ExportFormat, path: &std::path::Path) -> Result<()> {
        let text = match format {
            ExportFormat::Csv => self.to_csv(),
            ExportFormat::Json => self.to_json()?,
        };
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            other => Err(Error::Serde(format!("unknown export format '{other}'"))),
        }
    }
}
