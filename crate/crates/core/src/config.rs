//! System parameters and the TOML config file.
//!
//! Internally every power and gain is linear (milliwatts for powers). The
//! config file speaks dBm / dB and is converted on load.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiments::{Method, SweepSpec, SweepVariable};
use crate::net::TrainConfig;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub type Point3 = [f64; 3];

pub fn distance(a: &Point3, b: &Point3) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Physical and protocol parameters of the IRS-assisted link.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// BS antennas.
    pub m: usize,
    /// IRS elements per row.
    pub l_h: usize,
    /// IRS elements per column.
    pub l_v: usize,
    /// IRS element spacing in wavelengths.
    pub delta_over_lambda: f64,
    /// BS antenna correlation coefficient, `0 <= eta < 1`.
    pub eta: f64,
    pub pos_bs: Point3,
    pub pos_irs: Point3,
    pub pos_ue: Point3,
    /// Alice (BS) transmit power, mW.
    pub p_a: f64,
    /// Bob (UE) transmit power, mW.
    pub p_b: f64,
    /// Noise power, mW.
    pub noise_power: f64,
    pub beta_0_db: f64,
    pub d_0: f64,
    pub alpha_h: f64,
    pub alpha_g: f64,
    pub alpha_f: f64,
}

impl Default for SystemConfig {
    /// Desk-scale reproduction setup: BS at (5,-35,0), IRS at the origin,
    /// UE at (10,10,0), M=4, 5×5 IRS, P=10 dBm, noise -90 dBm.
    fn default() -> Self {
        SystemConfig {
            m: 4,
            l_h: 5,
            l_v: 5,
            delta_over_lambda: 0.5,
            eta: 0.3,
            pos_bs: [5.0, -35.0, 0.0],
            pos_irs: [0.0, 0.0, 0.0],
            pos_ue: [10.0, 10.0, 0.0],
            p_a: db_to_linear(10.0),
            p_b: db_to_linear(10.0),
            noise_power: db_to_linear(-90.0),
            beta_0_db: -30.0,
            d_0: 1.0,
            alpha_h: 3.67,
            alpha_g: 2.0,
            alpha_f: 2.0,
        }
    }
}

impl SystemConfig {
    pub fn l(&self) -> usize {
        self.l_h * self.l_v
    }

    /// Sets both transmit powers from a dBm value.
    pub fn with_power_dbm(mut self, dbm: f64) -> Self {
        self.p_a = db_to_linear(dbm);
        self.p_b = self.p_a;
        self
    }

    pub fn with_ue(mut self, pos: Point3) -> Self {
        self.pos_ue = pos;
        self
    }

    /// Square IRS with `l` elements; `l` must be a perfect square.
    pub fn with_square_irs(mut self, l: usize) -> Result<Self> {
        let side = (l as f64).sqrt().round() as usize;
        if side * side != l || l == 0 {
            return Err(Error::InvalidConfig(format!(
                "IRS size {l} is not a positive perfect square"
            )));
        }
        self.l_h = side;
        self.l_v = side;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 {
            return bad("M must be at least 1".into());
        }
        if self.l_h == 0 || self.l_v == 0 {
            return bad("L_H and L_V must be at least 1".into());
        }
        if !(self.delta_over_lambda > 0.0 && self.delta_over_lambda.is_finite()) {
            return bad(format!("element spacing {} must be positive", self.delta_over_lambda));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return bad(format!("eta = {} must lie in [0, 1)", self.eta));
        }
        for (name, v) in [("P_a", self.p_a), ("P_b", self.p_b), ("noise power", self.noise_power)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be strictly positive"));
            }
        }
        if !(self.d_0 > 0.0) {
            return bad(format!("reference distance {} must be positive", self.d_0));
        }
        for (name, v) in [("alpha_h", self.alpha_h), ("alpha_G", self.alpha_g), ("alpha_f", self.alpha_f)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    m: Option<usize>,
    l_h: Option<usize>,
    l_v: Option<usize>,
    delta_over_lambda: Option<f64>,
    eta: Option<f64>,
    pos_bs: Option<Point3>,
    pos_irs: Option<Point3>,
    pos_ue: Option<Point3>,
    power_dbm: Option<f64>,
    p_a_dbm: Option<f64>,
    p_b_dbm: Option<f64>,
    noise_dbm: Option<f64>,
    beta_0_db: Option<f64>,
    d_0: Option<f64>,
    alpha_h: Option<f64>,
    alpha_g: Option<f64>,
    alpha_f: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    epochs: Option<usize>,
    samples_per_epoch: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    adam_beta1: Option<f64>,
    adam_beta2: Option<f64>,
    adam_eps: Option<f64>,
    ue_x: Option<[f64; 2]>,
    ue_y: Option<[f64; 2]>,
    ue_z: Option<f64>,
    fixed_locations: Option<bool>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    variable: String,
    values: Vec<f64>,
    methods: Option<Vec<String>>,
    trials: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    system: SystemSection,
    #[serde(default)]
    train: TrainSection,
    sweep: Option<SweepSection>,
}

/// Contents of a config file with sections `[system]`, `[train]`, `[sweep]`.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub sweep: Option<SweepSpec>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawFile = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let system = convert_system(raw.system)?;
        let train = convert_train(raw.train)?;
        let sweep = raw.sweep.map(convert_sweep).transpose()?;
        Ok(ConfigFile { system, train, sweep })
    }
}

fn convert_system(s: SystemSection) -> Result<SystemConfig> {
    let mut cfg = SystemConfig::default();
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = s.$field {
                cfg.$field = v;
            }
        };
    }
    take!(m);
    take!(l_h);
    take!(l_v);
    take!(delta_over_lambda);
    take!(eta);
    take!(pos_bs);
    take!(pos_irs);
    take!(pos_ue);
    take!(beta_0_db);
    take!(d_0);
    take!(alpha_h);
    take!(alpha_g);
    take!(alpha_f);
    if let Some(p) = s.power_dbm {
        cfg.p_a = db_to_linear(p);
        cfg.p_b = db_to_linear(p);
    }
    if let Some(p) = s.p_a_dbm {
        cfg.p_a = db_to_linear(p);
    }
    if let Some(p) = s.p_b_dbm {
        cfg.p_b = db_to_linear(p);
    }
    if let Some(n) = s.noise_dbm {
        cfg.noise_power = db_to_linear(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn convert_train(t: TrainSection) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = t.$field {
                cfg.$field = v;
            }
        };
    }
    take!(epochs);
    take!(samples_per_epoch);
    take!(batch_size);
    take!(learning_rate);
    take!(adam_beta1);
    take!(adam_beta2);
    take!(adam_eps);
    take!(seed);
    take!(fixed_locations);
    if let Some(x) = t.ue_x {
        cfg.ue_region.x = x;
    }
    if let Some(y) = t.ue_y {
        cfg.ue_region.y = y;
    }
    if let Some(z) = t.ue_z {
        cfg.ue_region.z = z;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn convert_sweep(s: SweepSection) -> Result<SweepSpec> {
    let variable: SweepVariable = s.variable.parse()?;
    let methods = match s.methods {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<Method>>>()?,
        None => vec![Method::Baseline, Method::Random],
    };
    let spec = SweepSpec {
        variable,
        values: s.values,
        methods,
        trials: s.trials.unwrap_or(100),
        seed: s.seed.unwrap_or(0),
    };
    spec.validate()?;
    Ok(spec)
}
