use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::backbone::ModelKind;
use crate::distill::{PckdConfig, PckdMethod};
use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::projector::TemperatureSchedule;

/// Which projector and regularizer a student run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistillMethod {
    /// Base loss only, no teacher.
    None,
    /// One MLP projector with feature distillation.
    Fitnet,
    /// Expert bank with feature distillation.
    De,
    PckdP,
    PckdL,
    PckdH,
}

impl DistillMethod {
    pub const NAMES: &'static str = "none|fitnet|de|pckd_p|pckd_l|pckd_h";

    pub fn name(self) -> &'static str {
        match self {
            DistillMethod::None => "none",
            DistillMethod::Fitnet => "fitnet",
            DistillMethod::De => "de",
            DistillMethod::PckdP => "pckd_p",
            DistillMethod::PckdL => "pckd_l",
            DistillMethod::PckdH => "pckd_h",
        }
    }

    pub fn regularizer(self) -> PckdMethod {
        match self {
            DistillMethod::PckdP => PckdMethod::Pair,
            DistillMethod::PckdL => PckdMethod::List,
            DistillMethod::PckdH => PckdMethod::Hybrid,
            _ => PckdMethod::None,
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != DistillMethod::None
    }
}

impl FromStr for DistillMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => DistillMethod::None,
            "fitnet" => DistillMethod::Fitnet,
            "de" => DistillMethod::De,
            "pckd_p" => DistillMethod::PckdP,
            "pckd_l" => DistillMethod::PckdL,
            "pckd_h" => DistillMethod::PckdH,
            other => {
                return Err(Error::config(format!(
                    "unknown method {other:?} ({})",
                    Self::NAMES
                )))
            }
        })
    }
}

/// Everything a teacher or student run needs. Read from `key=value` text;
/// keys are case-insensitive and `-` is accepted for `_`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub teacher: Option<PathBuf>,
    pub backbone: ModelKind,
    pub layers: usize,
    pub d_teacher: usize,
    pub d_student: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: Option<u64>,
    pub method: DistillMethod,
    pub experts: usize,
    pub gumbel: TemperatureSchedule,
    pub pckd: PckdConfig,
    pub diag_every: usize,
    pub diag_pairs: usize,
    pub diag_cell_pairs: usize,
    pub wall_clock: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            teacher: None,
            backbone: ModelKind::Mf,
            layers: 2,
            d_teacher: 64,
            d_student: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 1024,
            max_epochs: 1000,
            patience: 30,
            seed: None,
            method: DistillMethod::PckdL,
            experts: 4,
            gumbel: TemperatureSchedule::default(),
            pckd: PckdConfig::default(),
            diag_every: 5,
            diag_pairs: 100,
            diag_cell_pairs: 50,
            wall_clock: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {value:?} for {key}"))),
    }
}

/// Lower-cases a key and maps `-` to `_`.
pub fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").to_ascii_lowercase().replace('-', "_")
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_key_values(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let k = key.as_str();
        match k {
            "data" => self.data = Some(PathBuf::from(value.trim())),
            "teacher" => self.teacher = Some(PathBuf::from(value.trim())),
            "backbone" => self.backbone = parse(k, value)?,
            "layers" => self.layers = parse(k, value)?,
            "d_teacher" => self.d_teacher = parse(k, value)?,
            "d_student" => self.d_student = parse(k, value)?,
            "lr" => self.lr = parse(k, value)?,
            "weight_decay" => self.weight_decay = parse(k, value)?,
            "batch_size" => self.batch_size = parse(k, value)?,
            "max_epochs" => self.max_epochs = parse(k, value)?,
            "patience" => self.patience = parse(k, value)?,
            "seed" => self.seed = Some(parse(k, value)?),
            "method" => self.method = value.trim().parse()?,
            "experts" => self.experts = parse(k, value)?,
            "gumbel_start" => self.gumbel.start = parse(k, value)?,
            "gumbel_end" => self.gumbel.end = parse(k, value)?,
            "gumbel_decay" => self.gumbel.decay = parse(k, value)?,
            "t" => self.pckd.t = parse(k, value)?,
            "t1" => self.pckd.t1 = parse(k, value)?,
            "t2" => self.pckd.t2 = parse(k, value)?,
            "q" => self.pckd.q = parse(k, value)?,
            "alpha" => self.pckd.alpha = parse(k, value)?,
            "lambda_de" => self.pckd.lambda_de = parse(k, value)?,
            "lambda_pckd" => self.pckd.lambda_pckd = parse(k, value)?,
            "sampling" => self.pckd.sampling = value.trim().parse()?,
            "k" | "rank_refresh" => self.pckd.rank_refresh = parse(k, value)?,
            "fd_squared" => self.pckd.fd_squared = parse_bool(k, value)?,
            "diag_every" => self.diag_every = parse(k, value)?,
            "diag_pairs" => self.diag_pairs = parse(k, value)?,
            "diag_cell_pairs" => self.diag_cell_pairs = parse(k, value)?,
            "wall_clock" => self.wall_clock = parse_bool(k, value)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::config("a seed is required"))
    }

    /// Regularizer settings with the method implied by [`Self::method`].
    pub fn pckd_config(&self) -> PckdConfig {
        PckdConfig {
            method: self.method.regularizer(),
            ..self.pckd.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let positive = [
            (self.d_teacher, "d_teacher"),
            (self.d_student, "d_student"),
            (self.batch_size, "batch_size"),
            (self.experts, "experts"),
            (self.diag_pairs, "diag_pairs"),
            (self.diag_cell_pairs, "diag_cell_pairs"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        self.gumbel.validate()?;
        self.pckd_config().validate()
    }

    /// Every setting that influences results, one `key=value` per line in
    /// a fixed order. Paths are excluded so relocating inputs keeps the digest.
    pub fn canonical(&self) -> String {
        let p = &self.pckd;
        let mut s = String::new();
        let seed = self.seed.map_or_else(|| "unset".to_string(), |v| v.to_string());
        let pairs: Vec<(&str, String)> = vec![
            ("backbone", self.backbone.name().into()),
            ("layers", self.layers.to_string()),
            ("d_teacher", self.d_teacher.to_string()),
            ("d_student", self.d_student.to_string()),
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", seed),
            ("method", self.method.name().into()),
            ("experts", self.experts.to_string()),
            ("gumbel_start", self.gumbel.start.to_string()),
            ("gumbel_end", self.gumbel.end.to_string()),
            ("gumbel_decay", self.gumbel.decay.to_string()),
            ("t", p.t.to_string()),
            ("t1", p.t1.to_string()),
            ("t2", p.t2.to_string()),
            ("q", p.q.to_string()),
            ("alpha", p.alpha.to_string()),
            ("lambda_de", p.lambda_de.to_string()),
            ("lambda_pckd", p.lambda_pckd.to_string()),
            ("sampling", p.sampling.name().into()),
            ("rank_refresh", p.rank_refresh.to_string()),
            ("fd_squared", p.fd_squared.to_string()),
            ("diag_every", self.diag_every.to_string()),
            ("diag_pairs", self.diag_pairs.to_string()),
            ("diag_cell_pairs", self.diag_cell_pairs.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.canonical().as_bytes()).into()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_round_trips() {
        let cfg = RunConfig::from_text(
            "# run\nseed=7\nmethod=pckd_h\nT1=0.5\nlambda-pckd=0.01\nK=3\nbackbone=lightgcn\nfd_squared=false\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.method, DistillMethod::PckdH);
        assert_eq!(cfg.pckd.t1, 0.5);
        assert_eq!(cfg.pckd.lambda_pckd, 0.01);
        assert_eq!(cfg.pckd.rank_refresh, 3);
        assert_eq!(cfg.backbone, ModelKind::Gcn);
        assert!(!cfg.pckd.fd_squared);
        assert_eq!(cfg.pckd_config().method, PckdMethod::Hybrid);
        cfg.validate().unwrap();
        let again = RunConfig::from_text(&cfg.canonical()).unwrap();
        assert_eq!(again.canonical(), cfg.canonical());
        assert_eq!(again.digest(), cfg.digest());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::from_text("bogus=1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("lr=abc"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_text("method=bogus"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::default().validate(), Err(Error::Config(_))));
        let mut c = RunConfig {
            seed: Some(1),
            ..Default::default()
        };
        c.method = DistillMethod::PckdH;
        c.pckd.t1 = 10.0;
        c.pckd.t2 = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn digest_ignores_paths_but_not_settings() {
        let mut a = RunConfig {
            seed: Some(1),
            ..Default::default()
        };
        let d0 = a.digest();
        a.data = Some("/elsewhere".into());
        assert_eq!(a.digest(), d0);
        a.pckd.q = 5;
        assert_ne!(a.digest(), d0);
        assert_eq!(hex(&[0, 255, 16]), "00ff10");
    }
}
