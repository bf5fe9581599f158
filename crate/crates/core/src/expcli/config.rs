//! Flat `key = value` experiment configs.
//!
//! A config file is a TOML document without tables. Every key is optional;
//! missing keys take the defaults of [`ExperimentConfig::default`]. Values
//! may be written as TOML numbers, booleans or strings. Command-line flags
//! are applied on top of the file through [`ExperimentConfig::set`].

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dynamics::{IntegratorConfig, Scheme, ADAPTIVE_ALPHA, OVERFLOW_GUARD};
use crate::error::{Error, Result};
use crate::rng::RNG_NAME;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitShape {
    Identity,
    /// Balanced random factors with `‖W(0)‖_F = init_scale`.
    Random,
    /// `init_scale · u₁u₁ᵀ` for the top eigenvector `u₁` of `−∇f(0)`.
    Rank1TopEig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossChoice {
    /// Random low-rank ground truth with entries observed with probability `p`.
    Completion,
    /// `½‖W − W*‖²_F` for the same random ground truth.
    FullObservation,
    /// The 4×4 counterexample with parameter `counterexample_r`.
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gd,
    Glrl,
    DeepGlrl,
    R1mp,
    NuclearMin,
    KernelDepth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeChoice {
    Euler,
    Rk4,
    Adaptive,
    Relative,
    /// Per-depth presets of [`IntegratorConfig::table1`].
    Table1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    None,
    GroundTruth,
    /// Nearest recorded state of a GLRL run on the same loss.
    Glrl,
}

macro_rules! keyword_enum {
    ($ty:ident { $($name:literal => $variant:ident),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}', expected one of: ", $($name, " "),+),
                        s
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $name,)+ })
            }
        }
    };
}

keyword_enum!(InitShape { "identity" => Identity, "random" => Random, "rank1" => Rank1TopEig });
keyword_enum!(LossChoice { "completion" => Completion, "full" => FullObservation, "counterexample" => Counterexample });
keyword_enum!(Algorithm {
    "gd" => Gd,
    "glrl" => Glrl,
    "deep-glrl" => DeepGlrl,
    "r1mp" => R1mp,
    "nuclear-min" => NuclearMin,
    "kernel-depth" => KernelDepth,
});
keyword_enum!(SchemeChoice {
    "euler" => Euler,
    "rk4" => Rk4,
    "adaptive" => Adaptive,
    "relative" => Relative,
    "table1" => Table1,
});
keyword_enum!(Reference { "none" => None, "ground-truth" => GroundTruth, "glrl" => Glrl });

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dim: usize,
    pub rank: usize,
    pub observe_prob: f64,
    pub frob_norm: f64,
    pub loss: LossChoice,
    pub counterexample_r: f64,
    pub algorithm: Algorithm,
    /// For `kernel-depth`, 0 means infinite depth.
    pub depth: usize,
    pub init: InitShape,
    pub init_scale: f64,
    pub scheme: SchemeChoice,
    pub step: f64,
    pub adaptive_alpha: f64,
    pub adaptive_epsilon: f64,
    pub relative_fraction: f64,
    pub max_steps: usize,
    pub stop_grad_norm: f64,
    pub record_every: usize,
    pub overflow_guard: f64,
    pub horizon: f64,
    pub epsilon: f64,
    /// 0 means the matrix dimension.
    pub max_rank: usize,
    pub exit_tol: f64,
    pub reference: Reference,
    /// Also write the full state matrices (`states.csv`).
    pub save_states: bool,
    /// Empty means `$GLRL_OUT/<algorithm>-seed<seed>`.
    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 20,
            rank: 3,
            observe_prob: 0.3,
            frob_norm: 20.0,
            loss: LossChoice::Completion,
            counterexample_r: 100.0,
            algorithm: Algorithm::Gd,
            depth: 2,
            init: InitShape::Random,
            init_scale: 1e-3,
            scheme: SchemeChoice::Euler,
            step: 1e-3,
            adaptive_alpha: ADAPTIVE_ALPHA,
            adaptive_epsilon: 1e-3,
            relative_fraction: 1e-2,
            max_steps: 1_000_000,
            stop_grad_norm: 0.0,
            record_every: 100,
            overflow_guard: OVERFLOW_GUARD,
            horizon: f64::INFINITY,
            epsilon: 1e-7,
            max_rank: 0,
            exit_tol: 1e-6,
            reference: Reference::None,
            save_states: false,
            out_dir: String::new(),
        }
    }
}

/// Every key accepted by [`ExperimentConfig::set`], in output order.
pub const KEYS: [&str; 27] = [
    "seed",
    "dim",
    "rank",
    "observe_prob",
    "frob_norm",
    "loss",
    "counterexample_r",
    "algorithm",
    "depth",
    "init",
    "init_scale",
    "scheme",
    "step",
    "adaptive_alpha",
    "adaptive_epsilon",
    "relative_fraction",
    "max_steps",
    "stop_grad_norm",
    "record_every",
    "overflow_guard",
    "horizon",
    "epsilon",
    "max_rank",
    "exit_tol",
    "reference",
    "save_states",
    "out_dir",
];

/// Environment variable naming the root of default output directories.
pub const OUT_ENV: &str = "GLRL_OUT";

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    match value.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        v => parse(key, v),
    }
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "rank" => self.rank = parse(key, value)?,
            "observe_prob" => self.observe_prob = parse_f64(key, value)?,
            "frob_norm" => self.frob_norm = parse_f64(key, value)?,
            "loss" => self.loss = value.trim().parse()?,
            "counterexample_r" => self.counterexample_r = parse_f64(key, value)?,
            "algorithm" => self.algorithm = value.trim().parse()?,
            "depth" => self.depth = parse(key, value)?,
            "init" => self.init = value.trim().parse()?,
            "init_scale" => self.init_scale = parse_f64(key, value)?,
            "scheme" => self.scheme = value.trim().parse()?,
            "step" => self.step = parse_f64(key, value)?,
            "adaptive_alpha" => self.adaptive_alpha = parse_f64(key, value)?,
            "adaptive_epsilon" => self.adaptive_epsilon = parse_f64(key, value)?,
            "relative_fraction" => self.relative_fraction = parse_f64(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "stop_grad_norm" => self.stop_grad_norm = parse_f64(key, value)?,
            "record_every" => self.record_every = parse(key, value)?,
            "overflow_guard" => self.overflow_guard = parse_f64(key, value)?,
            "horizon" => self.horizon = parse_f64(key, value)?,
            "epsilon" => self.epsilon = parse_f64(key, value)?,
            "max_rank" => self.max_rank = parse(key, value)?,
            "exit_tol" => self.exit_tol = parse_f64(key, value)?,
            "reference" => self.reference = value.trim().parse()?,
            "save_states" => self.save_states = parse(key, value)?,
            "out_dir" => self.out_dir = value.to_string(),
            "rng" => {
                if value.trim() != RNG_NAME {
                    return Err(Error::Config(format!("config was written for rng '{value}', this build uses '{RNG_NAME}'")));
                }
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_toml_str(text)?;
        Ok(cfg)
    }

    pub fn apply_toml_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for (key, value) in &table {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(Error::Config(format!("'{key}' must be a number, boolean or string"))),
            };
            self.set(key, &text)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn value_of(&self, key: &str) -> String {
        let num = |x: f64| if x.is_infinite() { "\"inf\"".to_string() } else { format!("{x:e}") };
        let s = |x: &dyn fmt::Display| format!("\"{x}\"");
        match key {
            "seed" => self.seed.to_string(),
            "dim" => self.dim.to_string(),
            "rank" => self.rank.to_string(),
            "observe_prob" => num(self.observe_prob),
            "frob_norm" => num(self.frob_norm),
            "loss" => s(&self.loss),
            "counterexample_r" => num(self.counterexample_r),
            "algorithm" => s(&self.algorithm),
            "depth" => self.depth.to_string(),
            "init" => s(&self.init),
            "init_scale" => num(self.init_scale),
            "scheme" => s(&self.scheme),
            "step" => num(self.step),
            "adaptive_alpha" => num(self.adaptive_alpha),
            "adaptive_epsilon" => num(self.adaptive_epsilon),
            "relative_fraction" => num(self.relative_fraction),
            "max_steps" => self.max_steps.to_string(),
            "stop_grad_norm" => num(self.stop_grad_norm),
            "record_every" => self.record_every.to_string(),
            "overflow_guard" => num(self.overflow_guard),
            "horizon" => num(self.horizon),
            "epsilon" => num(self.epsilon),
            "max_rank" => self.max_rank.to_string(),
            "exit_tol" => num(self.exit_tol),
            "reference" => s(&self.reference),
            "save_states" => self.save_states.to_string(),
            "out_dir" => format!("{:?}", self.out_dir),
            _ => unreachable!("unknown key {key}"),
        }
    }

    /// Every key with its value, loadable by [`ExperimentConfig::from_toml_str`].
    pub fn to_toml_string(&self) -> String {
        let mut out = String::new();
        writeln!(out, "rng = \"{RNG_NAME}\"").unwrap();
        for key in KEYS {
            writeln!(out, "{key} = {}", self.value_of(key)).unwrap();
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if self.rank == 0 || self.rank > self.dim {
            return bad(format!("rank must lie in 1..={}, got {}", self.dim, self.rank));
        }
        if !(self.observe_prob > 0.0 && self.observe_prob <= 1.0) {
            return bad(format!("observe_prob must lie in (0, 1], got {}", self.observe_prob));
        }
        if !(self.frob_norm > 0.0 && self.frob_norm.is_finite()) {
            return bad(format!("frob_norm must be positive, got {}", self.frob_norm));
        }
        if self.loss == LossChoice::Counterexample && !(self.counterexample_r > 1.0) {
            return bad(format!("counterexample_r must exceed 1, got {}", self.counterexample_r));
        }
        if self.depth < 2 && self.algorithm != Algorithm::KernelDepth {
            return bad(format!("depth must be at least 2, got {}", self.depth));
        }
        if self.algorithm == Algorithm::DeepGlrl && self.depth < 3 {
            return bad("deep-glrl needs depth ≥ 3".into());
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!("init_scale must be positive, got {}", self.init_scale));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.max_rank > self.dim() {
            return bad(format!("max_rank must not exceed the dimension {}", self.dim()));
        }
        self.integrator()?.validate()
    }

    /// Matrix dimension of the configured loss.
    pub fn dim(&self) -> usize {
        match self.loss {
            LossChoice::Counterexample => 4,
            _ => self.dim,
        }
    }

    pub fn integrator(&self) -> Result<IntegratorConfig> {
        let base = match self.scheme {
            SchemeChoice::Table1 => return Ok(IntegratorConfig::table1(self.depth)?.with_max_steps(self.max_steps)
                .with_stop_grad_norm(self.stop_grad_norm)
                .with_record_every(self.record_every)
                .with_overflow_guard(self.overflow_guard)),
            SchemeChoice::Euler => IntegratorConfig::euler(self.step),
            SchemeChoice::Rk4 => IntegratorConfig::rk4(self.step),
            SchemeChoice::Adaptive => IntegratorConfig::adaptive_gd(self.step, self.adaptive_alpha, self.adaptive_epsilon),
            SchemeChoice::Relative => IntegratorConfig::relative_rk4(self.step, self.relative_fraction),
        };
        let cfg = base
            .with_max_steps(self.max_steps)
            .with_stop_grad_norm(self.stop_grad_norm)
            .with_record_every(self.record_every)
            .with_overflow_guard(self.overflow_guard);
        debug_assert!(matches!(
            cfg.scheme,
            Scheme::Euler | Scheme::Rk4 | Scheme::AdaptiveGd { .. } | Scheme::RelativeRk4 { .. }
        ));
        Ok(cfg)
    }

    /// `out_dir`, or `$GLRL_OUT/<algorithm>-seed<seed>` (`runs/…` without the variable).
    pub fn output_dir(&self) -> PathBuf {
        if !self.out_dir.is_empty() {
            return PathBuf::from(&self.out_dir);
        }
        let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("{}-seed{}", self.algorithm, self.seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_text() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("algorithm", "deep-glrl").unwrap();
        cfg.set("depth", "4").unwrap();
        cfg.set("observe_prob", "0.25").unwrap();
        cfg.set("out_dir", "some dir/x").unwrap();
        cfg.set("horizon", "12.5").unwrap();
        let text = cfg.to_toml_string();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_toml_str(&ExperimentConfig::default().to_toml_string()).unwrap(),
            ExperimentConfig::default());
    }

    #[test]
    fn file_values_of_any_scalar_type() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\nstep = 1e-4\nsave_states = true\nloss = \"full\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.step, 1e-4);
        assert!(cfg.save_states);
        assert_eq!(cfg.loss, LossChoice::FullObservation);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(ExperimentConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("[table]\nx = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml_str("seed = \"x\""), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.observe_prob = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::default();
        cfg.rank = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.step = -1.0;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn table1_scheme_follows_depth() {
        let mut cfg = ExperimentConfig::default();
        cfg.scheme = SchemeChoice::Table1;
        cfg.depth = 3;
        let ic = cfg.integrator().unwrap();
        assert_eq!(ic.step, 2e-5);
        assert_eq!(ic.record_every, cfg.record_every);
    }
}
