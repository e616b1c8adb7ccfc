//! Text specs for estimators and integrands, shared by the CLI and the benchmark harness.
//!
//! Methods use `name[:key=value,...]`:
//!
//! | spec | estimator |
//! |------|-----------|
//! | `mc` | sample mean |
//! | `zv:q=2` | ZVCV of order 2 |
//! | `rzv:q=2,penalty=ridge,cv=10` | penalised ZVCV, penalty chosen by 10-fold CV |
//! | `rzv:q=3,penalty=lasso,lambda=0.1` | penalised ZVCV with a fixed penalty |
//! | `sa:k=25`, `do:k=50,rowfrac=0.8`, `mo:k=25` | ensemble presets |
//! | `ens:k=10,select=srswor,weights=inverse` | custom ensemble |
//!
//! Ensembles also take `qmax`, `qbase` and `jstar`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::basis::{eval_monomial, MultiIndex};
use crate::ensemble::{ensemble_zvcv, EnsembleConfig, Preset, Selection, WeightScheme};
use crate::error::{Error, Result};
use crate::regression::{IntegrandMatrix, Penalty};
use crate::stein::SampleSet;
use crate::targets::Target;
use crate::zvcv::{fit_zvcv, fit_zvcv_regularised, vanilla_mc, Estimate, LambdaChoice};

pub const DEFAULT_CV_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum MethodSpec {
    Mc,
    Zv { order: u32 },
    Regularised { order: u32, penalty: Penalty, lambda: RegularisedLambda },
    /// Ensemble config with the seed left at zero; the run seed is applied at call time.
    Ensemble(EnsembleConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegularisedLambda {
    Fixed(f64),
    Cv { folds: usize },
}

struct Params<'a> {
    method: &'a str,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Params<'a> {
    fn parse(method: &'a str, rest: &'a str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for kv in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("{method}: expected key=value, got '{kv}'")))?;
            if map.insert(k.trim(), v.trim()).is_some() {
                return Err(Error::Parse(format!("{method}: duplicate key '{k}'")));
            }
        }
        Ok(Params { method, map })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Parse(format!("{}: invalid value for {key}: '{v}'", self.method))),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?
            .ok_or_else(|| Error::Parse(format!("{}: missing required key '{key}'", self.method)))
    }

    fn take_str(&mut self, key: &str) -> Option<&'a str> {
        self.map.remove(key)
    }

    fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(Error::Parse(format!("{}: unknown key '{k}'", self.method))),
            None => Ok(()),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let name = name.to_ascii_lowercase();
        let mut p = Params::parse(spec, rest)?;
        let method = match name.as_str() {
            "mc" => MethodSpec::Mc,
            "zv" => MethodSpec::Zv { order: p.require("q")? },
            "rzv" => {
                let order = p.require("q")?;
                let penalty = match p.take_str("penalty").unwrap_or("ridge") {
                    "ridge" => Penalty::Ridge,
                    "lasso" => Penalty::Lasso,
                    other => return Err(Error::Parse(format!("{spec}: unknown penalty '{other}'"))),
                };
                let lambda = match (p.take::<f64>("lambda")?, p.take::<usize>("cv")?) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Parse(format!("{spec}: give either lambda or cv, not both")))
                    }
                    (Some(l), None) => RegularisedLambda::Fixed(l),
                    (None, folds) => RegularisedLambda::Cv {
                        folds: folds.unwrap_or(DEFAULT_CV_FOLDS),
                    },
                };
                MethodSpec::Regularised { order, penalty, lambda }
            }
            "sa" | "do" | "mo" | "ens" => {
                let preset = match name.as_str() {
                    "sa" => Preset::Sa,
                    "do" => Preset::Do,
                    "mo" => Preset::Mo,
                    _ => Preset::Custom,
                };
                let mut cfg = EnsembleConfig::new(preset, p.require("k")?, 0);
                if let Some(q) = p.take("qmax")? {
                    cfg.q_max = q;
                }
                cfg.q_base = p.take("qbase")?;
                cfg.j_star = p.take("jstar")?;
                if let Some(r) = p.take("rowfrac")? {
                    cfg.row_fraction = r;
                }
                if preset == Preset::Custom {
                    if let Some(s) = p.take_str("select") {
                        cfg.selection = match s {
                            "srswor" => Selection::Srswor,
                            "semi-exact" | "semiexact" => Selection::SemiExact,
                            other => return Err(Error::Parse(format!("{spec}: unknown selection '{other}'"))),
                        };
                    }
                    if let Some(w) = p.take_str("weights") {
                        cfg.weight_scheme = match w {
                            "uniform" => WeightScheme::Uniform,
                            "inverse" | "inverse-residual-variance" => WeightScheme::InverseResidualVariance,
                            other => return Err(Error::Parse(format!("{spec}: unknown weights '{other}'"))),
                        };
                    }
                }
                MethodSpec::Ensemble(cfg)
            }
            other => return Err(Error::Parse(format!("unknown method '{other}'"))),
        };
        p.finish()?;
        Ok(method)
    }
}

impl MethodSpec {
    /// Short display name such as `ZV2`, `r-ZV2`, `l-ZV3` or `SA25`.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Mc => "MC".into(),
            MethodSpec::Zv { order } => format!("ZV{order}"),
            MethodSpec::Regularised { order, penalty, .. } => match penalty {
                Penalty::Ridge => format!("r-ZV{order}"),
                Penalty::Lasso => format!("l-ZV{order}"),
            },
            MethodSpec::Ensemble(cfg) => cfg.label(),
        }
    }

    /// Runs the estimator. `seed` drives CV folds and ensemble draws.
    pub fn apply(&self, samples: &SampleSet, f: &IntegrandMatrix, seed: u64) -> Result<Estimate> {
        match self {
            MethodSpec::Mc => {
                if f.nrows() != samples.len() {
                    return Err(Error::DimensionMismatch {
                        what: "integrand rows",
                        expected: samples.len(),
                        found: f.nrows(),
                    });
                }
                Ok(vanilla_mc(f))
            }
            MethodSpec::Zv { order } => fit_zvcv(samples, f, *order),
            MethodSpec::Regularised { order, penalty, lambda } => {
                let choice = match *lambda {
                    RegularisedLambda::Fixed(lambda) => LambdaChoice::Fixed { lambda },
                    RegularisedLambda::Cv { folds } => LambdaChoice::Cv { folds, seed },
                };
                fit_zvcv_regularised(samples, f, *order, *penalty, choice)
            }
            MethodSpec::Ensemble(cfg) => {
                let cfg = EnsembleConfig { seed, ..cfg.clone() };
                ensemble_zvcv(samples, f, &cfg)
            }
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodSpec::Mc => write!(f, "mc"),
            MethodSpec::Zv { order } => write!(f, "zv:q={order}"),
            MethodSpec::Regularised { order, penalty, lambda } => {
                let pen = match penalty {
                    Penalty::Ridge => "ridge",
                    Penalty::Lasso => "lasso",
                };
                match lambda {
                    RegularisedLambda::Fixed(l) => write!(f, "rzv:q={order},penalty={pen},lambda={l}"),
                    RegularisedLambda::Cv { folds } => write!(f, "rzv:q={order},penalty={pen},cv={folds}"),
                }
            }
            MethodSpec::Ensemble(c) => {
                let name = match c.preset {
                    Preset::Sa => "sa",
                    Preset::Do => "do",
                    Preset::Mo => "mo",
                    Preset::Custom => "ens",
                };
                write!(f, "{name}:k={},qmax={},rowfrac={}", c.k, c.q_max, c.row_fraction)?;
                if let Some(q) = c.q_base {
                    write!(f, ",qbase={q}")?;
                }
                if let Some(j) = c.j_star {
                    write!(f, ",jstar={j}")?;
                }
                if c.preset == Preset::Custom {
                    let sel = match c.selection {
                        Selection::Srswor => "srswor",
                        Selection::SemiExact => "semi-exact",
                    };
                    let w = match c.weight_scheme {
                        WeightScheme::Uniform => "uniform",
                        WeightScheme::InverseResidualVariance => "inverse",
                    };
                    write!(f, ",select={sel},weights={w}")?;
                }
                Ok(())
            }
        }
    }
}

/// Which monomials of `θ` to take expectations of.
///
/// `theta` is every coordinate, `theta2` every square, `theta:2` the second
/// coordinate, `theta2:2` its square and `theta:1*2` the product of the first
/// two. Coordinates are 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IntegrandSpec {
    Theta,
    ThetaSquared,
    Monomials(Vec<Vec<(usize, u32)>>),
}

impl FromStr for IntegrandSpec {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let coord = |s: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(j) if j >= 1 => Ok(j - 1),
                _ => Err(Error::Parse(format!("integrand '{spec}': bad coordinate '{s}' (1-based)"))),
            }
        };
        match spec.split_once(':') {
            None if spec == "theta" => Ok(IntegrandSpec::Theta),
            None if spec == "theta2" => Ok(IntegrandSpec::ThetaSquared),
            Some(("theta", rest)) => {
                let terms = rest
                    .split(';')
                    .map(|term| {
                        let mut powers: BTreeMap<usize, u32> = BTreeMap::new();
                        for c in term.split('*') {
                            *powers.entry(coord(c)?).or_default() += 1;
                        }
                        Ok(powers.into_iter().collect())
                    })
                    .collect::<Result<_>>()?;
                Ok(IntegrandSpec::Monomials(terms))
            }
            Some(("theta2", rest)) => Ok(IntegrandSpec::Monomials(
                rest.split(';').map(|c| Ok(vec![(coord(c)?, 2)])).collect::<Result<_>>()?,
            )),
            _ => Err(Error::Parse(format!("unknown integrand '{spec}'"))),
        }
    }
}

impl IntegrandSpec {
    /// The monomials this spec denotes in dimension `dim`.
    pub fn monomials(&self, dim: usize) -> Result<Vec<MultiIndex>> {
        let unit = |j: usize, e: u32| {
            let mut v = vec![0u32; dim];
            v[j] = e;
            MultiIndex::new(v)
        };
        match self {
            IntegrandSpec::Theta => Ok((0..dim).map(|j| unit(j, 1)).collect()),
            IntegrandSpec::ThetaSquared => Ok((0..dim).map(|j| unit(j, 2)).collect()),
            IntegrandSpec::Monomials(terms) => terms
                .iter()
                .map(|term| {
                    let mut v = vec![0u32; dim];
                    for &(j, e) in term {
                        if j >= dim {
                            return Err(Error::InvalidArgument(format!(
                                "integrand uses coordinate {} but the dimension is {dim}",
                                j + 1
                            )));
                        }
                        v[j] += e;
                    }
                    Ok(MultiIndex::new(v))
                })
                .collect(),
        }
    }

    pub fn evaluate(&self, samples: &SampleSet) -> Result<IntegrandMatrix> {
        let monos = self.monomials(samples.dim())?;
        let th = samples.thetas();
        let mut out = DMatrix::zeros(samples.len(), monos.len());
        for (t, m) in monos.iter().enumerate() {
            for i in 0..samples.len() {
                let row: Vec<f64> = th.row(i).iter().copied().collect();
                out[(i, t)] = eval_monomial(m, &row)?;
            }
        }
        IntegrandMatrix::new(out)
    }

    /// Closed-form expectations under `target`, if every one is known.
    pub fn analytic_truth(&self, target: &Target) -> Result<Option<Vec<f64>>> {
        Ok(self.monomials(target.dim())?.iter().map(|m| target.moment(m)).collect())
    }

    /// Column names such as `theta1`, `theta1^2` or `theta1*theta2`.
    pub fn names(&self, dim: usize) -> Result<Vec<String>> {
        Ok(self
            .monomials(dim)?
            .iter()
            .map(|m| {
                let parts: Vec<String> = m
                    .exponents()
                    .iter()
                    .enumerate()
                    .filter(|(_, &e)| e > 0)
                    .map(|(j, &e)| if e == 1 { format!("theta{}", j + 1) } else { format!("theta{}^{e}", j + 1) })
                    .collect();
                if parts.is_empty() {
                    "1".into()
                } else {
                    parts.join("*")
                }
            })
            .collect())
    }
}

impl fmt::Display for IntegrandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntegrandSpec::Theta => write!(f, "theta"),
            IntegrandSpec::ThetaSquared => write!(f, "theta2"),
            IntegrandSpec::Monomials(terms) => {
                let t: Vec<String> = terms
                    .iter()
                    .map(|term| {
                        term.iter()
                            .flat_map(|&(j, e)| std::iter::repeat_n((j + 1).to_string(), e as usize))
                            .collect::<Vec<_>>()
                            .join("*")
                    })
                    .collect();
                write!(f, "theta:{}", t.join(";"))
            }
        }
    }
}
