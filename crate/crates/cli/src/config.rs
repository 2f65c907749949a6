//! Settings shared by every subcommand. Each field can come from a flag, from
//! the TOML file named by `--config` (same key names, snake_case), or from a
//! built-in default, in that order of precedence.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use dcra_core::harness::{Interval, ParamRanges, Scheme};
use dcra_core::TwoDeviceParams;
use serde::Deserialize;

pub const OUT_DIR_ENV: &str = "DCRA_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "dcra-out";

#[derive(Args, Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Output directory [env: DCRA_OUT_DIR; default: dcra-out]
    #[arg(long, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Arrival probability of the uncontrollable ALOHA device(s)
    #[arg(long)]
    pub p_b: Option<f64>,
    /// Arrival probability of the controllable device(s)
    #[arg(long)]
    pub p_b2: Option<f64>,
    /// Channel success probability of the ALOHA device(s)
    #[arg(long)]
    pub p_s: Option<f64>,
    /// Channel success probability of the controllable device(s)
    #[arg(long)]
    pub p_s2: Option<f64>,
    /// ALOHA transmit probability of the uncontrollable device(s)
    #[arg(long)]
    pub p_t: Option<f64>,

    /// Hard delay(s), comma separated
    #[arg(long = "deadline", value_delimiter = ',')]
    pub deadlines: Option<Vec<usize>>,
    /// Scheme(s), comma separated: tsra, hsra, fsra, fsqa, aloha,
    /// always-transmit, always-idle, bound-policy; suffixes -multi, -c<shift>,
    /// -literal (learners) and -p<prob> (aloha)
    #[arg(long = "scheme", value_delimiter = ',')]
    pub schemes: Option<Vec<String>>,
    /// Slots per run
    #[arg(long)]
    pub slots: Option<u64>,
    /// Evaluation window at the end of each run, in slots
    #[arg(long)]
    pub window: Option<usize>,
    /// Parameter groups per hard delay
    #[arg(long)]
    pub groups: Option<usize>,
    /// Block length of windowed-throughput series, in slots
    #[arg(long)]
    pub block: Option<usize>,
    /// Also solve the LP bound per group (two devices, D <= 4)
    #[arg(long)]
    pub bound: Option<bool>,

    /// Number of uncontrollable ALOHA devices (list for `congestion`)
    #[arg(long = "n1", value_delimiter = ',')]
    pub n1: Option<Vec<usize>>,
    /// Number of controllable devices (list for `congestion`)
    #[arg(long = "n2", value_delimiter = ',')]
    pub n2: Option<Vec<usize>>,

    /// Sampling range of arrival probabilities: lo,hi
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub arrival_range: Option<Vec<f64>>,
    /// Sampling range of success probabilities: lo,hi
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub success_range: Option<Vec<f64>>,
    /// Sampling range of ALOHA transmit probabilities: lo,hi
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub transmit_range: Option<Vec<f64>>,

    /// Read settings from a TOML file
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

macro_rules! overlay {
    ($lhs:ident, $rhs:ident; $($field:ident),*) => {
        Settings { $($field: $lhs.$field.or($rhs.$field),)* config: None }
    };
}

impl Settings {
    /// Flags over the config file.
    pub fn resolve(self) -> Result<Settings> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = load(&path)?;
        let flags = self;
        Ok(
            overlay!(flags, file; out, seed, p_b, p_b2, p_s, p_s2, p_t, deadlines, schemes, slots, window,
            groups, block, bound, n1, n2, arrival_range, success_range, transmit_range),
        )
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    /// The five parameters, if all are set.
    pub fn params(&self, deadline: usize) -> Result<Option<TwoDeviceParams>> {
        match (self.p_b, self.p_b2, self.p_s, self.p_s2, self.p_t) {
            (Some(a), Some(b), Some(c), Some(d), Some(e)) => {
                let p = TwoDeviceParams::new(a, b, c, d, e, deadline);
                p.validate()?;
                Ok(Some(p))
            }
            (None, None, None, None, None) => Ok(None),
            _ => bail!("set all of p_b, p_b2, p_s, p_s2, p_t or none of them"),
        }
    }

    pub fn require_params(&self, deadline: usize) -> Result<TwoDeviceParams> {
        self.params(deadline)?
            .context("this command needs p_b, p_b2, p_s, p_s2 and p_t")
    }

    pub fn deadlines_or(&self, default: &[usize]) -> Vec<usize> {
        self.deadlines.clone().unwrap_or_else(|| default.to_vec())
    }

    pub fn schemes_or(&self, default: &[&str]) -> Result<Vec<Scheme>> {
        let names: Vec<String> = match &self.schemes {
            Some(v) => v.clone(),
            None => default.iter().map(|s| s.to_string()).collect(),
        };
        names
            .iter()
            .map(|n| n.parse::<Scheme>().map_err(anyhow::Error::from))
            .collect()
    }

    pub fn ranges(&self) -> Result<ParamRanges> {
        let mut r = ParamRanges::default();
        for (value, slot, name) in [
            (&self.arrival_range, &mut r.arrival, "arrival_range"),
            (&self.success_range, &mut r.success, "success_range"),
            (&self.transmit_range, &mut r.transmit, "transmit_range"),
        ] {
            if let Some(v) = value {
                let [lo, hi] = v[..] else {
                    bail!("{name} needs exactly two values, got {}", v.len());
                };
                *slot = Interval::new(lo, hi);
            }
        }
        r.validate()?;
        Ok(r)
    }

    pub fn single(list: &Option<Vec<usize>>, name: &str) -> Result<Option<usize>> {
        match list.as_deref() {
            None => Ok(None),
            Some([n]) => Ok(Some(*n)),
            Some(v) => bail!("{name} takes a single value here, got {v:?}"),
        }
    }
}

fn load(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Default run length: learners on the full queue need longer runs.
pub fn default_slots(schemes: &[Scheme]) -> u64 {
    use dcra_core::harness::SchemeKind::{Fsqa, Fsra};
    if schemes.iter().any(|s| matches!(s.kind, Fsra | Fsqa)) {
        1_000_000
    } else {
        200_000
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "seed = 5\nslots = 10\ndeadlines = [1, 2]\nschemes = [\"tsra\"]\n",
        )
        .unwrap();
        let flags = Settings {
            slots: Some(20),
            config: Some(path),
            ..Settings::default()
        };
        let s = flags.resolve().unwrap();
        assert_eq!(
            (s.seed, s.slots, s.deadlines),
            (Some(5), Some(20), Some(vec![1, 2]))
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "sedd = 5\n").unwrap();
        let err = Settings {
            config: Some(path),
            ..Settings::default()
        }
        .resolve()
        .unwrap_err();
        assert!(format!("{err:#}").contains("sedd"));
    }

    #[test]
    fn partial_params_are_an_error() {
        let s = Settings {
            p_b: Some(0.5),
            ..Settings::default()
        };
        assert!(s.params(1).is_err());
    }
}
