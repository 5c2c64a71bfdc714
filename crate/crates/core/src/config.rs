//! Run configuration: UTF-8 `key=value` files with `#` comments, merged
//! with command-line overrides. Unknown and duplicate keys are hard errors,
//! and every run can dump its effective configuration in the same format,
//! which parses back to the identical configuration.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamParams;
use crate::simulators::{default_space, default_truth, CaseId, ParamSpace, TruthDistribution};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub case: CaseId,
    pub seed: u64,
    /// Seed of the frozen noise field; follows `seed` unless set explicitly.
    pub field_seed: Option<u64>,
    pub batch: usize,
    pub pretrain_iters: u64,
    pub train_iters: u64,
    pub adam: AdamParams,
    pub sgd_lr: f32,
    pub pos_label_lo: f32,
    pub pos_label_hi: f32,
    pub neg_label_lo: f32,
    pub neg_label_hi: f32,
    pub flip_fraction: f32,
    pub use_emulator_for_d: bool,
    pub noise_dim: usize,
    pub metrics_every: u64,
    /// Iterations at which pretraining snapshots the emulator for grids.
    pub snapshot_iters: Vec<u64>,
    pub eval_samples: usize,
    pub fidelity_samples: usize,
    /// Size of the fabricated truth dataset the training stage draws from.
    pub truth_count: usize,
    pub space: ParamSpace,
    pub truth: TruthDistribution,
}

impl RunConfig {
    pub fn defaults(case: CaseId) -> Self {
        RunConfig {
            case,
            seed: 1,
            field_seed: None,
            batch: 256,
            pretrain_iters: match case {
                CaseId::Line => 500_000,
                CaseId::Circle => 1_000_000,
            },
            train_iters: 30_000,
            adam: AdamParams::default(),
            sgd_lr: 1e-2,
            pos_label_lo: 0.7,
            pos_label_hi: 1.2,
            neg_label_lo: 0.0,
            neg_label_hi: 0.3,
            flip_fraction: 0.05,
            use_emulator_for_d: true,
            noise_dim: 64,
            metrics_every: 500,
            snapshot_iters: vec![1_000, 5_000, 10_000, 100_000, 500_000],
            eval_samples: 10_000,
            fidelity_samples: 256,
            truth_count: 60_000,
            space: default_space(case),
            truth: default_truth(case),
        }
    }

    pub fn effective_field_seed(&self) -> u64 {
        self.field_seed.unwrap_or(self.seed)
    }

    /// Builds a configuration from ordered `key=value` pairs (file entries
    /// first, command-line overrides after). The `case` key is honored
    /// wherever it appears and selects the per-case defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut case = CaseId::Line;
        for (k, v) in pairs {
            if k == "case" {
                case = CaseId::from_number(parse_num(k, v)?)?;
            }
        }
        let mut cfg = RunConfig::defaults(case);
        for (k, v) in pairs {
            cfg.apply(k, v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = parse_kv(&text)?;
        pairs.extend_from_slice(overrides);
        Self::from_pairs(&pairs)
    }

    /// Applies one override. Unknown keys are rejected so a typo cannot
    /// silently fall back to a default.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "case" => self.case = CaseId::from_number(parse_num(key, value)?)?,
            "seed" => self.seed = parse_num(key, value)?,
            "field_seed" => self.field_seed = Some(parse_num(key, value)?),
            "batch" => self.batch = parse_num(key, value)?,
            "pretrain_iters" => self.pretrain_iters = parse_num(key, value)?,
            "train_iters" => self.train_iters = parse_num(key, value)?,
            "adam_lr" => self.adam.lr = parse_num(key, value)?,
            "adam_beta1" => self.adam.beta1 = parse_num(key, value)?,
            "adam_beta2" => self.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => self.adam.eps = parse_num(key, value)?,
            "sgd_lr" => self.sgd_lr = parse_num(key, value)?,
            "pos_label_lo" => self.pos_label_lo = parse_num(key, value)?,
            "pos_label_hi" => self.pos_label_hi = parse_num(key, value)?,
            "neg_label_lo" => self.neg_label_lo = parse_num(key, value)?,
            "neg_label_hi" => self.neg_label_hi = parse_num(key, value)?,
            "flip_fraction" => self.flip_fraction = parse_num(key, value)?,
            "use_emulator_for_d" => self.use_emulator_for_d = parse_bool(key, value)?,
            "noise_dim" => self.noise_dim = parse_num(key, value)?,
            "metrics_every" => self.metrics_every = parse_num(key, value)?,
            "snapshot_iters" => {
                let mut iters = Vec::new();
                for part in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    iters.push(parse_num::<u64>(key, part)?);
                }
                self.snapshot_iters = iters;
            }
            "eval_samples" => self.eval_samples = parse_num(key, value)?,
            "fidelity_samples" => self.fidelity_samples = parse_num(key, value)?,
            "truth_count" => self.truth_count = parse_num(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("param.") {
                    return self.apply_space(key, rest, value);
                }
                if let Some(rest) = key.strip_prefix("truth.") {
                    return self.apply_truth(key, rest, value);
                }
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }

    fn param_index(&self, key: &str, name: &str) -> Result<usize> {
        self.space
            .names()
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "`{key}`: case {} has no parameter `{name}` (has: {})",
                    self.case,
                    self.space.names().join(", ")
                ))
            })
    }

    fn apply_space(&mut self, key: &str, rest: &str, value: &str) -> Result<()> {
        let (name, field) = rest
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("`{key}`: expected param.<name>.lo|hi")))?;
        let idx = self.param_index(key, name)?;
        let mut defs = self.space.defs().to_vec();
        match field {
            "lo" => defs[idx].lo = parse_num(key, value)?,
            "hi" => defs[idx].hi = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("`{key}`: unknown field `{other}`")));
            }
        }
        self.space = ParamSpace::new(defs).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    fn apply_truth(&mut self, key: &str, rest: &str, value: &str) -> Result<()> {
        let (name, field) = rest
            .rsplit_once('.')
            .ok_or_else(|| Error::Config(format!("`{key}`: expected truth.<name>.mu|sigma")))?;
        let idx = self.param_index(key, name)?;
        let mut mu = self.truth.mu.clone();
        let mut sigma = self.truth.sigma.clone();
        match field {
            "mu" => mu[idx] = parse_num(key, value)?,
            "sigma" => sigma[idx] = parse_num(key, value)?,
            other => {
                return Err(Error::Config(format!("`{key}`: unknown field `{other}`")));
            }
        }
        self.truth =
            TruthDistribution::new(mu, sigma).map_err(|e| Error::Config(format!("`{key}`: {e}")))?;
        Ok(())
    }

    /// Normalizes list fields and checks cross-field invariants.
    fn finish(&mut self) -> Result<()> {
        self.snapshot_iters.sort_unstable();
        self.snapshot_iters.dedup();
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        if !(self.adam.lr > 0.0) || !(self.sgd_lr > 0.0) {
            return bad(format!(
                "learning rates must be > 0 (adam_lr={}, sgd_lr={})",
                self.adam.lr, self.sgd_lr
            ));
        }
        if !(self.adam.beta1 >= 0.0 && self.adam.beta1 < 1.0)
            || !(self.adam.beta2 >= 0.0 && self.adam.beta2 < 1.0)
        {
            return bad(format!(
                "adam betas must be in [0,1) (beta1={}, beta2={})",
                self.adam.beta1, self.adam.beta2
            ));
        }
        if !(self.adam.eps > 0.0) {
            return bad(format!("adam_eps must be > 0 (got {})", self.adam.eps));
        }
        if !(self.flip_fraction >= 0.0 && self.flip_fraction < 0.5) {
            return bad(format!("flip_fraction must be in [0, 0.5) (got {})", self.flip_fraction));
        }
        for (what, lo, hi) in [
            ("pos_label", self.pos_label_lo, self.pos_label_hi),
            ("neg_label", self.neg_label_lo, self.neg_label_hi),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0 && hi <= 2.0) {
                return bad(format!("{what} range [{lo}, {hi}] invalid (need 0 <= lo <= hi <= 2)"));
            }
        }
        if self.neg_label_hi > self.pos_label_lo {
            return bad(format!(
                "label ranges overlap: negative up to {} crosses positive from {}",
                self.neg_label_hi, self.pos_label_lo
            ));
        }
        if self.noise_dim == 0 {
            return bad("noise_dim must be >= 1".into());
        }
        if self.metrics_every == 0 {
            return bad("metrics_every must be >= 1".into());
        }
        if self.eval_samples < 1000 {
            return bad(format!("eval_samples must be >= 1000 (got {})", self.eval_samples));
        }
        if self.fidelity_samples == 0 {
            return bad("fidelity_samples must be >= 1".into());
        }
        if self.truth_count < self.batch {
            return bad(format!(
                "truth_count {} smaller than batch {}",
                self.truth_count, self.batch
            ));
        }
        let expected = match self.case {
            CaseId::Line => 4,
            CaseId::Circle => 5,
        };
        if self.space.len() != expected {
            return bad(format!(
                "case {} needs {expected} parameters, space has {}",
                self.case,
                self.space.len()
            ));
        }
        self.truth
            .validate_within(&self.space)
            .map_err(|e| Error::Config(format!("truth: {e}")))
    }

    /// Effective configuration in the file syntax; parsing it back yields
    /// an identical configuration.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        line("case", self.case.number().to_string());
        line("seed", self.seed.to_string());
        line("field_seed", self.effective_field_seed().to_string());
        line("batch", self.batch.to_string());
        line("pretrain_iters", self.pretrain_iters.to_string());
        line("train_iters", self.train_iters.to_string());
        line("adam_lr", fmt_f32(self.adam.lr));
        line("adam_beta1", fmt_f32(self.adam.beta1));
        line("adam_beta2", fmt_f32(self.adam.beta2));
        line("adam_eps", fmt_f32(self.adam.eps));
        line("sgd_lr", fmt_f32(self.sgd_lr));
        line("pos_label_lo", fmt_f32(self.pos_label_lo));
        line("pos_label_hi", fmt_f32(self.pos_label_hi));
        line("neg_label_lo", fmt_f32(self.neg_label_lo));
        line("neg_label_hi", fmt_f32(self.neg_label_hi));
        line("flip_fraction", fmt_f32(self.flip_fraction));
        line("use_emulator_for_d", self.use_emulator_for_d.to_string());
        line("noise_dim", self.noise_dim.to_string());
        line("metrics_every", self.metrics_every.to_string());
        line(
            "snapshot_iters",
            self.snapshot_iters.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        line("eval_samples", self.eval_samples.to_string());
        line("fidelity_samples", self.fidelity_samples.to_string());
        line("truth_count", self.truth_count.to_string());
        for (i, def) in self.space.defs().iter().enumerate() {
            line(&format!("param.{}.lo", def.name), fmt_f32(def.lo));
            line(&format!("param.{}.hi", def.name), fmt_f32(def.hi));
            line(&format!("truth.{}.mu", def.name), fmt_f32(self.truth.mu[i]));
            line(&format!("truth.{}.sigma", def.name), fmt_f32(self.truth.sigma[i]));
        }
        s
    }
}

/// Shortest decimal form that parses back to the same f32.
fn fmt_f32(v: f32) -> String {
    format!("{v}")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: expected true/false, got `{other}`"))),
    }
}

/// Splits config text into ordered pairs. Blank lines and `#` comments are
/// skipped; duplicate keys within one file are rejected as typos.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_round_trip_through_the_dump() {
        for case in [CaseId::Line, CaseId::Circle] {
            let cfg = RunConfig::defaults(case);
            let dumped = cfg.dump();
            let back = RunConfig::from_pairs(&parse_kv(&dumped).unwrap()).unwrap();
            assert_eq!(back.dump(), dumped);
            assert_eq!(back.space, cfg.space);
            assert_eq!(back.truth, cfg.truth);
        }
    }

    #[test]
    fn case_key_selects_defaults_before_other_keys_apply() {
        let cfg = RunConfig::from_pairs(&pairs(&[
            ("truth.b.mu", "0.85"),
            ("case", "2"),
        ]))
        .unwrap();
        assert_eq!(cfg.case, CaseId::Circle);
        assert_eq!(cfg.truth.mu[4], 0.85);
        assert_eq!(cfg.pretrain_iters, 1_000_000);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_hard_errors() {
        let err = RunConfig::from_pairs(&pairs(&[("bathc", "64")])).unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");

        let err = parse_kv("batch=64\nbatch=128\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = RunConfig::from_pairs(&pairs(&[("param.r.lo", "1")])).unwrap_err();
        assert!(err.to_string().contains("no parameter `r`"), "{err}");
    }

    #[test]
    fn comments_blanks_and_overrides() {
        let text = "# a comment\n\n  batch = 64  # trailing\ncase=1\nflip_fraction=0.1\n";
        let mut file_pairs = parse_kv(text).unwrap();
        file_pairs.extend(pairs(&[("flip_fraction", "0.2"), ("seed", "9")]));
        let cfg = RunConfig::from_pairs(&file_pairs).unwrap();
        assert_eq!(cfg.batch, 64);
        assert_eq!(cfg.flip_fraction, 0.2);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.effective_field_seed(), 9);
    }

    #[test]
    fn invariants_are_enforced() {
        for (k, v, what) in [
            ("flip_fraction", "0.5", "flip_fraction"),
            ("sgd_lr", "0", "learning rates"),
            ("adam_lr", "-1", "learning rates"),
            ("eval_samples", "10", "eval_samples"),
            ("neg_label_hi", "0.8", "overlap"),
            ("truth.m.sigma", "2.0", "outside its range"),
        ] {
            let err = RunConfig::from_pairs(&pairs(&[(k, v)])).unwrap_err();
            assert!(
                err.to_string().contains(what),
                "key {k}: expected `{what}` in `{err}`"
            );
        }
    }
}
