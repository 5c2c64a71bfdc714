//! The physical parameter space and its linear map onto [-1, 1].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamDef {
    pub name: String,
    pub lo: f32,
    pub hi: f32,
}

impl ParamDef {
    pub fn new(name: &str, lo: f32, hi: f32) -> Self {
        ParamDef { name: name.to_string(), lo, hi }
    }
}

/// Ordered parameter definitions; the order is part of every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    defs: Vec<ParamDef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repr {
    Physical,
    Normalized,
}

/// A parameter tuple tagged with which representation it is in.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f32>,
    pub repr: Repr,
}

impl ParamSpace {
    pub fn new(defs: Vec<ParamDef>) -> Result<Self> {
        if defs.is_empty() {
            return Err(Error::Param("parameter space is empty".into()));
        }
        for d in &defs {
            if !(d.lo < d.hi) || !d.lo.is_finite() || !d.hi.is_finite() {
                return Err(Error::Param(format!(
                    "parameter `{}` has invalid range [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
        }
        for (i, d) in defs.iter().enumerate() {
            if defs[..i].iter().any(|e| e.name == d.name) {
                return Err(Error::Param(format!("duplicate parameter name `{}`", d.name)));
            }
        }
        Ok(ParamSpace { defs })
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn defs(&self) -> &[ParamDef] {
        &self.defs
    }

    pub fn names(&self) -> Vec<&str> {
        self.defs.iter().map(|d| d.name.as_str()).collect()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.defs.len() {
            return Err(Error::Param(format!(
                "expected {} parameter values, got {got}",
                self.defs.len()
            )));
        }
        Ok(())
    }

    /// t = 2 (p - lo) / (hi - lo) - 1, component-wise. Physical values must
    /// lie inside their ranges.
    pub fn normalize_slice(&self, phys: &[f32], out: &mut [f32]) -> Result<()> {
        self.check_len(phys.len())?;
        for (i, d) in self.defs.iter().enumerate() {
            let p = phys[i];
            if !(d.lo..=d.hi).contains(&p) {
                return Err(Error::Param(format!(
                    "`{}` = {p} outside [{}, {}]",
                    d.name, d.lo, d.hi
                )));
            }
            out[i] = 2.0 * (p - d.lo) / (d.hi - d.lo) - 1.0;
        }
        Ok(())
    }

    /// Exact inverse of [`normalize_slice`] on [-1, 1].
    pub fn denormalize_slice(&self, norm: &[f32], out: &mut [f32]) -> Result<()> {
        self.check_len(norm.len())?;
        for (i, d) in self.defs.iter().enumerate() {
            let t = norm[i];
            if !(-1.0..=1.0).contains(&t) {
                return Err(Error::Param(format!("normalized `{}` = {t} outside [-1, 1]", d.name)));
            }
            out[i] = d.lo + (t + 1.0) * 0.5 * (d.hi - d.lo);
        }
        Ok(())
    }

    pub fn normalize(&self, p: &ParamVector) -> Result<ParamVector> {
        if p.repr != Repr::Physical {
            return Err(Error::Param("normalize expects a physical vector".into()));
        }
        let mut out = vec![0.0; p.values.len()];
        self.normalize_slice(&p.values, &mut out)?;
        Ok(ParamVector { values: out, repr: Repr::Normalized })
    }

    pub fn denormalize(&self, p: &ParamVector) -> Result<ParamVector> {
        if p.repr != Repr::Normalized {
            return Err(Error::Param("denormalize expects a normalized vector".into()));
        }
        let mut out = vec![0.0; p.values.len()];
        self.denormalize_slice(&p.values, &mut out)?;
        Ok(ParamVector { values: out, repr: Repr::Physical })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ParamSpace {
        ParamSpace::new(vec![
            ParamDef::new("m", 0.0, 3.0),
            ParamDef::new("x0", 5.0, 15.0),
        ])
        .unwrap()
    }

    #[test]
    fn midpoint_and_bounds() {
        let s = space();
        let mut out = [0.0f32; 2];
        s.normalize_slice(&[1.5, 5.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], -1.0);
        s.normalize_slice(&[3.0, 15.0], &mut out).unwrap();
        assert_eq!(out, [1.0, 1.0]);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let s = space();
        let mut out = [0.0f32; 2];
        assert!(s.normalize_slice(&[3.1, 10.0], &mut out).is_err());
        assert!(s.denormalize_slice(&[0.0, 1.01], &mut out).is_err());
        assert!(s.normalize_slice(&[1.0], &mut [0.0]).is_err(), "length checked");
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(ParamSpace::new(vec![]).is_err());
        assert!(ParamSpace::new(vec![ParamDef::new("a", 1.0, 1.0)]).is_err());
        assert!(ParamSpace::new(vec![
            ParamDef::new("a", 0.0, 1.0),
            ParamDef::new("a", 0.0, 2.0),
        ])
        .is_err());
    }
}
