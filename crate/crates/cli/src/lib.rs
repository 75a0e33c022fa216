//! srlab command-line interface: geodesics, shooting, abnormal and Goh
//! diagnostics, index reports, probe sweeps, 1-D scans, the comparison
//! verifier, the openness experiment and bracket-span reports.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use srlab_core::flow::{Control, IntegrateOpts};
use srlab_core::geodesic::GeodesicOpts;
use srlab_core::index::{openness_experiment, OpennessOpts, OscProbe};
use srlab_core::nonsmooth::{comparison_check, dichotomy_scan, function_preset, ScanOpts};
use srlab_core::probe::{run_probe, ExportFormat, ProbeConfig};
use srlab_core::srgeom::PolyFrame;
use srlab_core::{extremal, Error};

#[derive(Parser)]
#[command(name = "srlab", version, about = "sub-Riemannian numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct FrameArgs {
    /// preset name: heisenberg, martinet, engel, flat-rn, flat-r<k>
    #[arg(long)]
    preset: Option<String>,
    /// frame definition JSON file
    #[arg(long)]
    frame: Option<PathBuf>,
}

impl FrameArgs {
    fn load(&self) -> Result<PolyFrame, Error> {
        match (&self.preset, &self.frame) {
            (Some(name), None) => PolyFrame::preset(name),
            (None, Some(path)) => PolyFrame::from_json(&std::fs::read_to_string(path)?),
            _ => Err(Error::InvalidFrame(
                "give exactly one of --preset or --frame".into(),
            )),
        }
    }
}

#[derive(Args, Debug)]
struct ControlArgs {
    /// control CSV file (header u1,...,um)
    #[arg(long)]
    control: Option<PathBuf>,
    /// constant control value, comma separated
    #[arg(long, value_name = "V1,..,VM")]
    constant: Option<String>,
    /// segments for --constant controls
    #[arg(long, default_value_t = 64)]
    segments: usize,
}

impl ControlArgs {
    fn load(&self, m: usize) -> Result<Control, Error> {
        match (&self.control, &self.constant) {
            (Some(path), None) => Control::from_csv(&std::fs::read_to_string(path)?),
            (None, Some(text)) => {
                let vals = parse_vec(text)?;
                if vals.len() != m {
                    return Err(Error::DimensionMismatch(format!(
                        "constant control has {} components, frame rank is {m}",
                        vals.len()
                    )));
                }
                Ok(Control::constant(self.segments, &vals))
            }
            _ => Err(Error::PreconditionViolated(
                "give exactly one of --control or --constant".into(),
            )),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve the constrained energy minimization between two points
    Geodesic {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, value_name = "X1,..,XN")]
        from: String,
        #[arg(long, value_name = "Y1,..,YN")]
        to: String,
        #[arg(long, default_value_t = 64)]
        segments: usize,
        #[arg(long, default_value_t = 8)]
        restarts: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// write the result JSON here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a normal extremal from an initial covector
    Shoot {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, value_name = "X1,..,XN")]
        from: String,
        #[arg(long, value_name = "P1,..,PN")]
        covector: String,
        #[arg(long, default_value_t = 256)]
        substeps: usize,
        /// extremal CSV path (a .meta.json sidecar carries the header)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Abnormal covectors and Goh diagnostics of a control
    Abnormal {
        #[command(flatten)]
        frame: FrameArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_name = "X1,..,XN")]
        from: Option<String>,
    },
    /// Index report with an oscillatory probe comparison
    GohForm {
        #[command(flatten)]
        frame: FrameArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_name = "L1,..,LN")]
        lambda: String,
        #[arg(long, default_value_t = 0.5)]
        tbar: f64,
        #[arg(long, default_value_t = 0.25)]
        delta: f64,
        /// probe coefficients a_1..a_K
        #[arg(long, default_value = "1")]
        coeffs: String,
        /// 1-indexed field pair carrying the cos/sin series
        #[arg(long, default_value = "1,2")]
        pair: String,
        #[arg(long, default_value_t = 40)]
        kernel_cap: usize,
    },
    /// Negative index of the restricted second differential
    Index {
        #[command(flatten)]
        frame: FrameArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_name = "L1,..,LN")]
        lambda: String,
        #[arg(long, default_value_t = 40)]
        kernel_cap: usize,
    },
    /// Run a probe sweep from a JSON config file
    Probe {
        #[arg(long)]
        config: PathBuf,
        /// override the config's preset
        #[arg(long)]
        preset: Option<String>,
    },
    /// Dichotomy scan of a 1-D function preset
    Scan1d {
        /// abs, neg-abs, sqrt-abs, sin, xsin-inv, weierstrass
        #[arg(long)]
        function: String,
        #[arg(long, value_name = "A,B")]
        interval: String,
        #[arg(long, default_value_t = 200)]
        points: usize,
        #[arg(long, default_value_t = 1e-2)]
        window: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Comparison verifier on sampled 1-D data
    Compare {
        /// CSV file with columns s,h (no header)
        #[arg(long)]
        samples: Option<PathBuf>,
        /// or a function preset evaluated on the interval
        #[arg(long)]
        function: Option<String>,
        #[arg(long, value_name = "A,B", default_value = "0,1")]
        interval: String,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 128)]
        grid: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Quantified-openness experiment around a control
    Openness {
        #[command(flatten)]
        frame: FrameArgs,
        #[command(flatten)]
        control: ControlArgs,
        #[arg(long, value_name = "X1,..,XN")]
        from: Option<String>,
        #[arg(long, default_value_t = 8)]
        targets: usize,
        #[arg(long, default_value = "0.08,0.04,0.02,0.01")]
        radii: String,
    },
    /// Bracket-span report and pre-medium-fat scan at a point
    Premedium {
        #[command(flatten)]
        frame: FrameArgs,
        #[arg(long, value_name = "X1,..,XN")]
        point: String,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
}

fn parse_vec(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Serde(format!("bad number '{s}'")))
        })
        .collect()
}

fn parse_point(text: &str, n: usize) -> Result<DVector<f64>, Error> {
    let v = parse_vec(text)?;
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected {n} components, got {}",
            v.len()
        )));
    }
    Ok(DVector::from_vec(v))
}

fn parse_pair(text: &str, m: usize) -> Result<(usize, usize), Error> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Serde(format!("bad index '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    if parts.len() != 2 || parts[0] == 0 || parts[1] == 0 || parts[0] > m || parts[1] > m {
        return Err(Error::IndexOutOfRange { index: *parts.iter().max().unwrap_or(&0), rank: m });
    }
    Ok((parts[0] - 1, parts[1] - 1))
}

fn emit(json: String, out: &Option<PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

/// Entry point shared by the binary and the tests: 0 on success, 1 on
/// domain errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    srlab_core::probe::init_thread_cap();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders help/version as "errors" with success status
            if e.use_stderr() {
                eprintln!("{e}");
                return 2;
            }
            print!("{e}");
            return 0;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Geodesic { frame, from, to, segments, restarts, tol, seed, out } => {
            let frame = frame.load()?;
            let x0 = parse_point(&from, frame.dim_n())?;
            let y = parse_point(&to, frame.dim_n())?;
            let opts = GeodesicOpts { segments, restarts, tol, seed, ..Default::default() };
            let res = srlab_core::geodesic::solve_geodesic(&frame, &x0, &y, &opts)?;
            emit(serde_json::to_string_pretty(&res.to_json_struct()).unwrap(), &out)
        }
        Command::Shoot { frame, from, covector, substeps, out } => {
            let frame = frame.load()?;
            let x0 = parse_point(&from, frame.dim_n())?;
            let p0 = parse_point(&covector, frame.dim_n())?;
            let ext = extremal::shoot_normal(&frame, &x0, &p0, substeps)?;
            let header = serde_json::json!({
                "kind": ext.kind,
                "multiplier0": ext.multiplier0,
                "hamiltonian": extremal::hamiltonian(&frame, &x0, &p0),
            });
            match out {
                Some(path) => {
                    std::fs::write(&path, ext.to_csv())?;
                    let meta = path.with_extension("meta.json");
                    std::fs::write(meta, serde_json::to_string_pretty(&header).unwrap())?;
                }
                None => {
                    println!("{}", serde_json::to_string_pretty(&header).unwrap());
                    print!("{}", ext.to_csv());
                }
            }
            Ok(())
        }
        Command::Abnormal { frame, control, from } => {
            let frame = frame.load()?;
            let u = control.load(frame.rank_m())?;
            let x0 = match from {
                Some(text) => parse_point(&text, frame.dim_n())?,
                None => DVector::zeros(frame.dim_n()),
            };
            let bundle = srlab_core::flow::integrate(&frame, &u, &x0, IntegrateOpts::default())?;
            let op = srlab_core::endpoint::d_endpoint_operator(&bundle);
            let covectors = extremal::abnormal_covectors(&op, None);
            let goh = match covectors.first() {
                Some(q) => {
                    let lift = extremal::reconstruct(&bundle, q, 0)?;
                    Some(extremal::goh_diagnostics(&bundle, &lift, &op, None)?)
                }
                None => None,
            };
            let report = serde_json::json!({
                "corank": op.corank,
                "singular_values": op.singular_values,
                "abnormal_covectors": covectors
                    .iter()
                    .map(|q| q.iter().copied().collect::<Vec<f64>>())
                    .collect::<Vec<_>>(),
                "goh": goh,
            });
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
        Command::GohForm { frame, control, lambda, tbar, delta, coeffs, pair, kernel_cap } => {
            let frame = frame.load()?;
            let u = control.load(frame.rank_m())?;
            let lambda = parse_point(&lambda, frame.dim_n())?;
            let (i_bar, j_bar) = parse_pair(&pair, frame.rank_m())?;
            let probe = OscProbe { t_bar: tbar, delta, i_bar, j_bar, coeffs: parse_vec(&coeffs)? };
            let report = srlab_core::index::index_report(
                &frame,
                &u,
                &DVector::zeros(frame.dim_n()),
                &lambda,
                kernel_cap,
                Some(&probe),
                IntegrateOpts::default(),
            )?;
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
        Command::Index { frame, control, lambda, kernel_cap } => {
            let frame = frame.load()?;
            let u = control.load(frame.rank_m())?;
            let lambda = parse_point(&lambda, frame.dim_n())?;
            let report = srlab_core::index::index_report(
                &frame,
                &u,
                &DVector::zeros(frame.dim_n()),
                &lambda,
                kernel_cap,
                None,
                IntegrateOpts::default(),
            )?;
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
        Command::Probe { config, preset } => {
            let mut cfg: ProbeConfig = serde_json::from_str(&std::fs::read_to_string(&config)?)?;
            if let Some(name) = preset {
                cfg.preset = Some(name);
                cfg.frame = None;
            }
            let report = run_probe(&cfg)?;
            if let Some(path) = &cfg.csv_out {
                report.export(ExportFormat::Csv, std::path::Path::new(path))?;
            }
            if let Some(path) = &cfg.json_out {
                report.export(ExportFormat::Json, std::path::Path::new(path))?;
            }
            if cfg.csv_out.is_none() && cfg.json_out.is_none() {
                println!("{}", report.to_json()?);
            } else {
                println!("{}", serde_json::to_string_pretty(&report.aggregates).unwrap());
            }
            Ok(())
        }
        Command::Scan1d { function, interval, points, window, out } => {
            let f = function_preset(&function)?;
            let (a, b) = {
                let v = parse_vec(&interval)?;
                if v.len() != 2 {
                    return Err(Error::Serde("interval must be A,B".into()));
                }
                (v[0], v[1])
            };
            let opts = ScanOpts { window, ..Default::default() };
            let g = |x: f64| f(x);
            let pts = dichotomy_scan(&g, (a, b), points, &opts)?;
            let csv = srlab_core::nonsmooth::scan_to_csv(&pts);
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Compare { samples, function, interval, eps, sigma, grid, tol } => {
            let (a, b) = {
                let v = parse_vec(&interval)?;
                if v.len() != 2 {
                    return Err(Error::Serde("interval must be A,B".into()));
                }
                (v[0], v[1])
            };
            let report = match (samples, function) {
                (Some(path), None) => {
                    let text = std::fs::read_to_string(path)?;
                    let mut xs = Vec::new();
                    let mut hs = Vec::new();
                    for line in text.lines().filter(|l| !l.trim().is_empty()) {
                        let v = parse_vec(line)?;
                        if v.len() != 2 {
                            return Err(Error::Serde("sample rows must be s,h".into()));
                        }
                        xs.push(v[0]);
                        hs.push(v[1]);
                    }
                    if xs.len() < 3 {
                        return Err(Error::Serde("need at least 3 samples".into()));
                    }
                    let (lo, hi) = (xs[0], *xs.last().unwrap());
                    let interp = move |s: f64| -> f64 {
                        // piecewise-linear interpolation of the samples
                        let t = ((s - lo) / (hi - lo) * (xs.len() - 1) as f64)
                            .clamp(0.0, (xs.len() - 1) as f64);
                        let i = (t.floor() as usize).min(xs.len() - 2);
                        let frac = t - i as f64;
                        hs[i] * (1.0 - frac) + hs[i + 1] * frac
                    };
                    comparison_check(interp, lo, hi, eps, sigma, grid, tol)?
                }
                (None, Some(name)) => {
                    let f = function_preset(&name)?;
                    comparison_check(|s| f(s), a, b, eps, sigma, grid, tol)?
                }
                _ => {
                    return Err(Error::PreconditionViolated(
                        "give exactly one of --samples or --function".into(),
                    ))
                }
            };
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
        Command::Openness { frame, control, from, targets, radii } => {
            let frame = frame.load()?;
            let u = control.load(frame.rank_m())?;
            let x0 = match from {
                Some(text) => parse_point(&text, frame.dim_n())?,
                None => DVector::zeros(frame.dim_n()),
            };
            let opts = OpennessOpts {
                n_targets: targets,
                radii: parse_vec(&radii)?,
                ..Default::default()
            };
            let report = openness_experiment(&frame, &u, &x0, &opts)?;
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
        Command::Premedium { frame, point, samples } => {
            let frame = frame.load()?;
            let x = parse_point(&point, frame.dim_n())?;
            let scan = frame.pre_medium_fat_scan(&x, samples)?;
            let worst = DVector::from_vec(scan.worst_section.clone());
            let span = frame.bracket_span(&x, &worst)?;
            let report = serde_json::json!({
                "bracket_span": span,
                "scan": scan,
            });
            emit(serde_json::to_string_pretty(&report).unwrap(), &None)
        }
    }
}
