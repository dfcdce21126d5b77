//! Parameter sweeps over the system geometry, CSV output and plot scripts.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::baseline::baseline_solution;
use crate::channel::ChannelStatistics;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{c, frobenius_sq, CMat, CVec};
use crate::net::{self, csv_io, TrainConfig};
use crate::probing::PkgSolution;
use crate::skr::skr_closed_form;

/// UE location at which every sweep point is evaluated.
pub const EVAL_UE: [f64; 3] = [10.0, 10.0, 0.0];
pub const CSV_HEADER: [&str; 5] = ["variable", "value", "method", "skr_bits", "std_error"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    Antennas,
    Elements,
    PowerDbm,
    Eta,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Antennas => "antennas",
            SweepVariable::Elements => "elements",
            SweepVariable::PowerDbm => "power_dbm",
            SweepVariable::Eta => "eta",
        }
    }

    fn axis_label(self) -> &'static str {
        match self {
            SweepVariable::Antennas => "BS antennas M",
            SweepVariable::Elements => "IRS elements L",
            SweepVariable::PowerDbm => "transmit power P (dBm)",
            SweepVariable::Eta => "BS correlation coefficient",
        }
    }

    /// Returns `base` with this variable set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a positive integer, got {v}", self.name())))
            }
        };
        let cfg = match self {
            SweepVariable::Antennas => SystemConfig { m: as_count(value)?, ..base.clone() },
            SweepVariable::Elements => base.clone().with_square_irs(as_count(value)?)?,
            SweepVariable::PowerDbm => base.clone().with_power_dbm(value),
            SweepVariable::Eta => SystemConfig { eta: value, ..base.clone() },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "antennas" | "m" => Ok(SweepVariable::Antennas),
            "elements" | "l" => Ok(SweepVariable::Elements),
            "power" | "power_dbm" | "p" => Ok(SweepVariable::PowerDbm),
            "eta" | "correlation" => Ok(SweepVariable::Eta),
            _ => Err(Error::InvalidConfig(format!("unknown sweep variable {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    PkgNet,
    Baseline,
    Random,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::PkgNet => "pkg_net",
            Method::Baseline => "baseline",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pkg_net" | "pkgnet" | "pkg-net" => Ok(Method::PkgNet),
            "baseline" => Ok(Method::Baseline),
            "random" => Ok(Method::Random),
            _ => Err(Error::InvalidConfig(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub methods: Vec<Method>,
    /// Draws averaged by the random method.
    pub trials: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.values.is_empty() {
            return bad("sweep has no values".into());
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("sweep values must be finite".into());
        }
        if self.values.windows(2).any(|w| w[1] <= w[0]) {
            return bad("sweep values must be strictly increasing".into());
        }
        if self.methods.is_empty() {
            return bad("sweep has no methods".into());
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return bad(format!("method {m} listed twice"));
            }
        }
        if self.methods.contains(&Method::Random) && self.trials < 2 {
            return bad("random method needs at least 2 trials".into());
        }
        if self.variable == SweepVariable::Elements {
            for &v in &self.values {
                let side = v.sqrt().round();
                if v < 1.0 || v.fract() != 0.0 || side * side != v {
                    return bad(format!("IRS size {v} is not a perfect square"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub variable: SweepVariable,
    pub value: f64,
    pub method: Method,
    pub skr_bits: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn series(&self, method: Method) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| r.method == method).map(|r| (r.value, r.skr_bits)).collect()
    }
}

/// Random precoder with i.i.d. CN(0,1) entries scaled to `Tr(PPᴴ) = P_a·M`
/// and phases uniform on `[0, 2π)`.
pub fn random_solution<R: Rng + ?Sized>(config: &SystemConfig, rng: &mut R) -> PkgSolution {
    let m = config.m;
    let mut p = CMat::from_fn(m, m, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    });
    let scale = (m as f64 * config.p_a / frobenius_sq(&p)).sqrt();
    p *= c(scale, 0.0);
    let theta = CVec::from_fn(config.l(), |_, _| {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        c(phase.cos(), phase.sin())
    });
    PkgSolution::new(p, theta)
}

/// Mean and standard error of the closed-form key rate over `trials` random configurations.
pub fn random_benchmark<R: Rng + ?Sized>(config: &SystemConfig, stats: &ChannelStatistics, trials: usize, rng: &mut R) -> Result<(f64, f64)> {
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        let sol = random_solution(config, rng);
        values.push(skr_closed_form(&sol, stats, config.p_b, config.noise_power)?.skr_bits);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Runs every (value, method) pair; rows come back in spec order.
///
/// The pkg_net method trains a network per sweep point with `train`.
pub fn run_sweep(spec: &SweepSpec, base: &SystemConfig, train: &TrainConfig) -> Result<SweepResult> {
    spec.validate()?;
    if spec.methods.contains(&Method::PkgNet) {
        train.validate()?;
    }
    let configs: Vec<SystemConfig> = spec
        .values
        .iter()
        .map(|&v| spec.variable.apply(base, v).map(|c| c.with_ue(EVAL_UE)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|i| (0..spec.methods.len()).map(move |j| (i, j)))
        .collect();
    let rows: Vec<Result<SweepRow>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let cfg = &configs[i];
            let method = spec.methods[j];
            let stats = ChannelStatistics::new(cfg)?;
            let (skr_bits, std_error) = match method {
                Method::Baseline => {
                    let sol = baseline_solution(cfg, &stats)?;
                    (skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power)?.skr_bits, None)
                }
                Method::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                    rng.set_stream(i as u64);
                    let (mean, se) = random_benchmark(cfg, &stats, spec.trials, &mut rng)?;
                    (mean, Some(se))
                }
                Method::PkgNet => {
                    let outcome = net::train(train, cfg)?;
                    let sol = net::infer(&outcome.params, &EVAL_UE, cfg)?;
                    (skr_closed_form(&sol, &stats, cfg.p_b, cfg.noise_power)?.skr_bits, None)
                }
            };
            Ok(SweepRow {
                variable: spec.variable,
                value: spec.values[i],
                method,
                skr_bits,
                std_error,
            })
        })
        .collect();
    Ok(SweepResult {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, csv_io(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in &result.rows {
        w.write_record([
            r.variable.name().to_string(),
            r.value.to_string(),
            r.method.name().to_string(),
            r.skr_bits.to_string(),
            r.std_error.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_csv(path: &Path) -> Result<SweepResult> {
    let io = |e: csv::Error| Error::io(path, csv_io(e));
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let header = r.headers().map_err(io)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::InvalidConfig(format!("unexpected CSV header in {}", path.display())));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::InvalidConfig(format!("bad number {s:?}"))) };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(io)?;
        rows.push(SweepRow {
            variable: rec[0].parse()?,
            value: num(&rec[1])?,
            method: rec[2].parse()?,
            skr_bits: num(&rec[3])?,
            std_error: if rec[4].is_empty() { None } else { Some(num(&rec[4])?) },
        });
    }
    Ok(SweepResult { rows })
}

/// Writes a standalone matplotlib script with the data inlined.
pub fn emit_plot_script(result: &SweepResult, path: &Path) -> Result<()> {
    let mut methods: Vec<Method> = Vec::new();
    for r in &result.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let label = result.rows.first().map(|r| r.variable.axis_label()).unwrap_or("value");
    let mut s = String::new();
    s.push_str("#!/usr/bin/env python3\nimport matplotlib.pyplot as plt\n\nseries = {\n");
    for m in &methods {
        let pts: Vec<String> = result
            .rows
            .iter()
            .filter(|r| r.method == *m)
            .map(|r| format!("({:?}, {:?}, {})", r.value, r.skr_bits, r.std_error.map(|e| format!("{e:?}")).unwrap_or("None".into())))
            .collect();
        s.push_str(&format!("    {:?}: [{}],\n", m.name(), pts.join(", ")));
    }
    s.push_str("}\n\nfig, ax = plt.subplots()\n");
    s.push_str("for name, pts in series.items():\n");
    s.push_str("    xs = [p[0] for p in pts]\n    ys = [p[1] for p in pts]\n");
    s.push_str("    errs = [p[2] or 0.0 for p in pts]\n");
    s.push_str("    ax.errorbar(xs, ys, yerr=errs, marker=\"o\", capsize=3, label=name)\n");
    s.push_str(&format!("ax.set_xlabel({label:?})\n"));
    s.push_str("ax.set_ylabel(\"secret key rate (bits per probe)\")\nax.grid(True)\nax.legend()\n");
    s.push_str("fig.tight_layout()\nfig.savefig(__file__.rsplit(\".\", 1)[0] + \".png\", dpi=150)\n");
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}
