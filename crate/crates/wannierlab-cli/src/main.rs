use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wannierlab::diagnostics::topology;
use wannierlab::error::Error;
use wannierlab::frame1d::frame_1d;
use wannierlab::frame2d::frame_2d;
use wannierlab::grid::Grid1;
use wannierlab::magnetic::{sweep, Field, Setup};
use wannierlab::model::{build_bloch, check_cs, TightBindingModel};
use wannierlab::output::frame_csv;
use wannierlab::spectral::{spectral_projection, ProjectionSampler, Window};
use wannierlab::tol::Tolerances;
use wannierlab::transport::Mode;
use wannierlab::wannier::{decay_fit, wannier_transform};
use wannierlab::{par, presets};

#[derive(Parser)]
#[command(name = "wannierlab", version, about = "Bloch frames and composite Wannier functions for tight-binding models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Periodic frame of a 1D model, Wannier functions and decay fit.
    Wannier1d(Common),
    /// Doubly periodic conjugation-symmetric frame of a 2D model.
    Wannier2d(Common),
    /// Peierls-dressed basis and b-sweep on a finite patch.
    Magnetic(Common),
    /// Chern number, Berry phases and matching-matrix winding.
    Diagnose(Common),
}

#[derive(Clone, Copy, ValueEnum, Default)]
enum Transport {
    #[default]
    Midpoint,
    Chain,
}

#[derive(Args)]
struct Common {
    /// Model JSON file.
    #[arg(long, conflicts_with = "preset")]
    model: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    preset: Option<String>,
    /// Nodes per axis, `n` or `n1,n2`; powers of two ≥ 16.
    #[arg(long)]
    grid: Option<String>,
    /// Band window: `lower`, `upper`, 1-based list `1,2` or `1-3`, or `e:<lo>:<hi>`.
    #[arg(long, alias = "band")]
    bands: Option<String>,
    /// Tolerance override `name=value`, repeatable.
    #[arg(long = "tol", value_name = "NAME=VALUE")]
    tols: Vec<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Coupling list for `magnetic`.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.002,0.004,0.008")]
    b: Vec<f64>,
    /// Wannier box radius in cells, or the patch half-width for `magnetic`.
    #[arg(long = "box")]
    radius: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    transport: Transport,
    /// Preset parameter `name=value`, repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    w: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
}

struct Failure {
    error: Error,
    extra: Value,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let extra = match &error {
            Error::CsGate { chern, residual } => {
                json!({ "chern_report": { "chern": if *chern == i64::MIN { Value::Null } else { json!(chern) }, "cs_residual": residual } })
            }
            _ => Value::Null,
        };
        Failure { error, extra }
    }
}

type Run<T> = std::result::Result<T, Failure>;

fn io(e: std::io::Error) -> Failure {
    Error::Io(e.to_string()).into()
}

fn parse_pair(s: &str) -> Run<(String, f64)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Input(format!("expected name=value, got {s:?}")))?;
    let v: f64 = v.trim().parse().map_err(|_| Error::Input(format!("not a number in {s:?}")))?;
    Ok((k.trim().to_string(), v))
}

impl Common {
    fn tolerances(&self) -> Run<Tolerances> {
        let mut t = Tolerances::default();
        for s in &self.tols {
            let (k, v) = parse_pair(s)?;
            t.set(&k, v)?;
        }
        Ok(t)
    }

    fn model(&self, tol: &Tolerances) -> Run<(TightBindingModel, usize)> {
        match (&self.model, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(io)?;
                let m = TightBindingModel::from_json(&text, tol.herm)?;
                Ok((m, 0))
            }
            (None, Some(name)) => {
                let mut params = BTreeMap::new();
                for s in &self.params {
                    let (k, v) = parse_pair(s)?;
                    params.insert(k, v);
                }
                for (k, v) in [("v", self.v), ("w", self.w), ("m", self.m), ("t", self.t), ("c", self.c)] {
                    if let Some(v) = v {
                        params.insert(k.to_string(), v);
                    }
                }
                Ok((presets::by_name(name, &params)?, presets::default_bands(name)))
            }
            (None, None) => Err(Error::Input("one of --model or --preset is required".into()).into()),
        }
    }

    fn grids(&self, d: usize, default: usize) -> Run<Vec<Grid1>> {
        let sizes: Vec<usize> = match &self.grid {
            None => vec![default; d],
            Some(s) => {
                let v: Vec<usize> = s
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Input(format!("bad grid {s:?}"))))
                    .collect::<Result<_, _>>()?;
                match v.len() {
                    1 => vec![v[0]; d],
                    n if n == d => v,
                    _ => return Err(Error::Input(format!("grid {s:?} does not match dimension {d}")).into()),
                }
            }
        };
        sizes
            .into_iter()
            .map(|n| {
                if n < 16 || !n.is_power_of_two() {
                    return Err(Error::Input(format!("grid size {n} must be a power of two >= 16")).into());
                }
                Ok(Grid1::new(n)?)
            })
            .collect()
    }

    fn window(&self, dim: usize, default_bands: usize) -> Run<Window> {
        Ok(match &self.bands {
            Some(s) => Window::parse(s, dim)?,
            None if default_bands > 0 => Window::lowest(default_bands),
            None => Window::parse("lower", dim)?,
        })
    }

    fn mode(&self) -> Mode {
        match self.transport {
            Transport::Midpoint => Mode::Midpoint,
            Transport::Chain => Mode::SzNagyChain,
        }
    }

    fn sampler(&self, d: usize, default_grid: usize) -> Run<(ProjectionSampler, Tolerances)> {
        let tol = self.tolerances()?;
        let (model, nb) = self.model(&tol)?;
        if model.dimension != d {
            return Err(Error::Input(format!("this command needs a {d}D model, got {}D", model.dimension)).into());
        }
        let grids = self.grids(d, default_grid)?;
        let window = self.window(model.num_sites(), nb)?;
        let mut h = build_bloch(model);
        check_cs(&mut h, &grids, tol.cs);
        Ok((spectral_projection(&h, &window, &grids, tol.gap)?, tol))
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Run<()> {
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(name), text).map_err(io)
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

fn wannier(c: &Common, d: usize) -> Run<()> {
    let (p, tol) = c.sampler(d, if d == 1 { 256 } else { 64 })?;
    let (frame, extra) = match d {
        1 => (frame_1d(&p, None, &tol, c.mode())?, json!({})),
        _ => {
            let f = frame_2d(&p, &tol, c.mode())?;
            let chern = wannierlab::diagnostics::chern_number(&p)?;
            let extra = json!({
                "chern": chern,
                "straightening": { "s": f.field.s, "nu": f.field.nu, "boundary_residual": f.field.boundary_residual(&f.beta) },
            });
            (f.frame, extra)
        }
    };
    let res = frame.residuals(&p)?;
    let limit = if d == 1 { tol.frame } else { tol.frame2 };
    let radius = c.radius.unwrap_or(if d == 1 { 20 } else { 10 });
    let w = wannier_transform(&frame, radius)?;
    let decay = decay_fit(&w)?;
    write(&c.out, "frame.csv", &frame_csv(&frame))?;
    write(&c.out, "wannier.csv", &w.to_csv())?;
    let report = json!({
        "decay": decay,
        "frame_residuals": {
            "orthonormality": res.orthonormality,
            "periodicity": res.periodicity,
            "range": res.range,
            "cs": res.cs,
            "tolerance": limit,
        },
        "wannier": {
            "radius": radius,
            "orthonormality": w.orthonormality(),
            "max_imag": w.max_imag(),
            "centers": (0..w.rank).map(|j| w.center(j)).collect::<Vec<_>>(),
            "tolerance": tol.wannier,
        },
        "extra": extra,
    });
    write(&c.out, "decay.json", &pretty(&report))
}

fn magnetic(c: &Common) -> Run<()> {
    let tol = c.tolerances()?;
    let (model, nb) = c.model(&tol)?;
    let rank = match c.window(model.num_sites(), nb)? {
        Window::Bands(b) if b.iter().enumerate().all(|(i, &x)| i == x) => b.len(),
        _ => return Err(Error::Input("magnetic runs take the lowest bands only (e.g. --bands 1-2)".into()).into()),
    };
    let radius = c.radius.unwrap_or(20) as i64;
    let setup = Setup::new(model, rank, radius, Field::Constant, tol.mag_trunc)?;
    let (report, w, transfers) = sweep(&setup, &c.b)?;
    write(&c.out, "basis_b0.csv", &w.to_csv([0, 0]))?;
    for (b, t) in c.b.iter().zip(&transfers) {
        write(&c.out, &format!("basis_b{b}.csv"), &t.xi.to_csv([0, 0]))?;
    }
    write(&c.out, "sweep.json", &pretty(&report))
}

fn diagnose(c: &Common) -> Run<()> {
    let tol = c.tolerances()?;
    let (model, _) = c.model(&tol)?;
    let d = model.dimension;
    let (p, tol) = c.sampler(d, if d == 1 { 256 } else { 64 })?;
    write(&c.out, "topology.json", &pretty(&topology(&p, tol.pd)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("WANNIERLAB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        par::set_threads(n);
    }
    let result = match &cli.command {
        Command::Wannier1d(c) => wannier(c, 1),
        Command::Wannier2d(c) => wannier(c, 2),
        Command::Magnetic(c) => magnetic(c),
        Command::Diagnose(c) => diagnose(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let mut v = json!({
                "error": f.error.to_string(),
                "stage": f.error.stage(),
                "node": f.error.node(),
            });
            if let (Value::Object(m), Value::Object(extra)) = (&mut v, f.extra) {
                m.extend(extra);
            }
            eprintln!("{}", serde_json::to_string(&v).expect("error serializes"));
            ExitCode::FAILURE
        }
    }
}
